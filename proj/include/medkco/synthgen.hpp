#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "medkco/curriculum.hpp"
#include "medkco/dataset.hpp"
#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"
#include "medkco/rng.hpp"
#include "medkco/util.hpp"

namespace medkco {

// Generator for image/text pairs with the difficulty structure the pipeline
// is built around: images of different classes share a strong common
// component (controlled by shared_weight), captions use disjoint per-class
// token pools so texts stay separable, and a per-sample representativeness
// draw plus optional comorbid class mixing spread each class around its
// prototype. Class difficulty tiers modulate image noise so stage-1 labels
// stay high-margin and stage-3 labels low-margin.
struct SynthConfig {
    std::size_t class_count = 8;
    std::size_t samples_per_class = 40;
    std::size_t eval_samples_per_class = 16;
    std::size_t image_dim = 48;
    std::size_t text_vocab_size = 96;
    std::size_t caption_tokens = 8;
    double shared_weight = 0.5;        // rho in [0, 1)
    double image_noise = 0.08;         // expected noise vector norm
    double text_separation = 0.85;     // fraction of caption tokens from the class pool
    double comorbidity_rate = 0.15;    // q
    double representativeness_spread = 0.7;  // lambda ~ U(1 - spread, 1]
    double label_level_fraction = 0.5;
    std::size_t ood_class_count = 2;
    std::vector<double> tier_noise_multipliers = {0.5, 1.0, 1.8};
    std::string modality = "synthetic";
    std::uint64_t seed = 1;

    void validate() const {
        if (class_count < 2) throw config_error("synth: class_count must be >= 2");
        if (ood_class_count >= class_count)
            throw config_error("synth: ood_class_count must be below class_count");
        if (shared_weight < 0.0 || shared_weight >= 1.0)
            throw config_error("synth: shared_weight must be in [0, 1)");
        if (comorbidity_rate < 0.0 || comorbidity_rate > 1.0)
            throw config_error("synth: comorbidity_rate must be in [0, 1]");
        if (representativeness_spread < 0.0 || representativeness_spread > 1.0)
            throw config_error("synth: representativeness_spread must be in [0, 1]");
        if (label_level_fraction < 0.0 || label_level_fraction > 1.0)
            throw config_error("synth: label_level_fraction must be in [0, 1]");
        if (text_separation < 0.0 || text_separation > 1.0)
            throw config_error("synth: text_separation must be in [0, 1]");
        if (image_dim == 0 || text_vocab_size == 0 || caption_tokens == 0)
            throw config_error("synth: dimensions must be positive");
        if (image_noise < 0.0) throw config_error("synth: image_noise must be >= 0");
        if (tier_noise_multipliers.size() != 3)
            throw config_error("synth: tier_noise_multipliers needs 3 entries");
        for (double m : tier_noise_multipliers)
            if (m < 0.0) throw config_error("synth: tier multipliers must be >= 0");
        if (samples_per_class == 0)
            throw config_error("synth: samples_per_class must be positive");
    }

    nlohmann::json to_json() const {
        return {{"class_count", class_count},
                {"samples_per_class", samples_per_class},
                {"eval_samples_per_class", eval_samples_per_class},
                {"image_dim", image_dim},
                {"text_vocab_size", text_vocab_size},
                {"caption_tokens", caption_tokens},
                {"shared_weight", shared_weight},
                {"image_noise", image_noise},
                {"text_separation", text_separation},
                {"comorbidity_rate", comorbidity_rate},
                {"representativeness_spread", representativeness_spread},
                {"label_level_fraction", label_level_fraction},
                {"ood_class_count", ood_class_count},
                {"tier_noise_multipliers", tier_noise_multipliers},
                {"modality", modality},
                {"seed", seed}};
    }

    static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthDataset {
    Dataset data;
    Matrix image_prototypes;  // class_count x image_dim, unit rows
    std::vector<std::string> class_labels;
    std::vector<int> class_tiers;  // 1..3 per class
    KnowledgeDictionary dict;
    SensitivityConfig sensitivity;
};

namespace detail {

inline std::string pad2(std::size_t v) {
    std::string s = std::to_string(v);
    return s.size() < 2 ? "0" + s : s;
}

inline std::string pad3(std::size_t v) {
    std::string s = std::to_string(v);
    while (s.size() < 3) s = "0" + s;
    return s;
}

inline std::vector<double> random_unit_vector(std::size_t dim, RandomSource& rng) {
    std::vector<double> v(dim);
    double norm2 = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm2 += x * x;
    }
    const double norm = std::sqrt(norm2);
    for (double& x : v) x /= norm;
    return v;
}

}  // namespace detail

inline SynthDataset generate_dataset(const SynthConfig& config) {
    config.validate();
    RandomSource rng(config.seed);
    SynthDataset out;

    const std::size_t C = config.class_count;
    const std::size_t train_classes = C - config.ood_class_count;
    const std::size_t D = config.image_dim;

    for (std::size_t c = 0; c < C; ++c)
        out.class_labels.push_back("class_" + detail::pad2(c));
    for (std::size_t c = 0; c < C; ++c)
        out.class_tiers.push_back(static_cast<int>(c % 3) + 1);

    // Token pools: one shared pool plus a disjoint pool per class.
    const std::size_t shared_pool_size = std::max<std::size_t>(4, config.text_vocab_size / 4);
    const std::size_t class_pool_size =
        std::max<std::size_t>(3, (config.text_vocab_size - shared_pool_size) / C);
    std::vector<std::string> shared_pool;
    for (std::size_t i = 0; i < shared_pool_size; ++i)
        shared_pool.push_back("shr" + detail::pad2(i));
    std::vector<std::vector<std::string>> class_pools(C);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < class_pool_size; ++i)
            class_pools[c].push_back("c" + detail::pad2(c) + "t" + detail::pad2(i));

    // Image geometry: unit prototypes plus one shared component.
    out.image_prototypes = Matrix(C, D);
    for (std::size_t c = 0; c < C; ++c) {
        const std::vector<double> p = detail::random_unit_vector(D, rng);
        for (std::size_t j = 0; j < D; ++j) out.image_prototypes.at(c, j) = p[j];
    }
    const std::vector<double> shared_component = detail::random_unit_vector(D, rng);

    std::vector<std::vector<double>> image_rows;
    std::vector<Sample> samples;

    auto draw_caption = [&](std::size_t c, bool comorbid, std::size_t comorbid_class) {
        std::vector<std::string> tokens;
        for (std::size_t k = 0; k < config.caption_tokens; ++k) {
            if (rng.uniform() < config.text_separation) {
                tokens.push_back(class_pools[c][rng.uniform_index(class_pools[c].size())]);
            } else {
                tokens.push_back(shared_pool[rng.uniform_index(shared_pool.size())]);
            }
        }
        if (comorbid) {
            const std::size_t extra = std::max<std::size_t>(1, config.caption_tokens / 4);
            for (std::size_t k = 0; k < extra; ++k)
                tokens.push_back(
                    class_pools[comorbid_class][rng.uniform_index(class_pools[comorbid_class].size())]);
        }
        std::string caption;
        for (std::size_t k = 0; k < tokens.size(); ++k) {
            if (k) caption += " ";
            caption += tokens[k];
        }
        return caption;
    };

    auto draw_image = [&](std::size_t c, double lambda, bool comorbid,
                          std::size_t comorbid_class) {
        const double rho = config.shared_weight;
        const int tier = out.class_tiers[c];
        const double noise_sigma = config.image_noise *
                                   config.tier_noise_multipliers[tier - 1] /
                                   std::sqrt(static_cast<double>(D));
        std::vector<double> v(D, 0.0);
        for (std::size_t j = 0; j < D; ++j) {
            v[j] = rho * shared_component[j] +
                   (1.0 - rho) * lambda * out.image_prototypes.at(c, j);
            if (comorbid) v[j] += (1.0 - lambda) * out.image_prototypes.at(comorbid_class, j);
        }
        for (std::size_t j = 0; j < D; ++j) v[j] += noise_sigma * rng.normal();
        double norm2 = 0.0;
        for (double x : v) norm2 += x * x;
        const double norm = std::max(std::sqrt(norm2), 1e-12);
        for (double& x : v) x /= norm;
        return v;
    };

    // Training samples: only non-OOD classes; within a class the first
    // ceil(fraction * n) samples are label-level, the rest description-level.
    const std::size_t label_count_per_class = static_cast<std::size_t>(
        std::llround(config.label_level_fraction * static_cast<double>(config.samples_per_class)));
    for (std::size_t c = 0; c < train_classes; ++c) {
        for (std::size_t n = 0; n < config.samples_per_class; ++n) {
            const double lambda = 1.0 - config.representativeness_spread * rng.uniform();
            bool comorbid = false;
            std::size_t comorbid_class = c;
            if (train_classes > 1 && rng.uniform() < config.comorbidity_rate) {
                comorbid = true;
                comorbid_class = rng.uniform_index(train_classes - 1);
                if (comorbid_class >= c) comorbid_class += 1;
            }
            Sample s;
            s.id = "tr_c" + detail::pad2(c) + "_" + detail::pad3(n);
            s.level = n < label_count_per_class ? SupervisionLevel::label
                                                : SupervisionLevel::description;
            if (s.level == SupervisionLevel::label) s.label = out.class_labels[c];
            s.caption = draw_caption(c, comorbid, comorbid_class);
            s.split = "train";
            s.image_row = image_rows.size();
            s.latent_class = out.class_labels[c];
            if (comorbid) s.latent_comorbid = out.class_labels[comorbid_class];
            s.latent_representativeness = lambda;
            image_rows.push_back(draw_image(c, lambda, comorbid, comorbid_class));
            samples.push_back(std::move(s));
        }
    }

    // Evaluation samples: every class, pure (no comorbidity), labeled and
    // captioned so both classification and retrieval can run on them.
    for (std::size_t c = 0; c < C; ++c) {
        const bool ood = c >= train_classes;
        for (std::size_t n = 0; n < config.eval_samples_per_class; ++n) {
            const double lambda = 1.0 - config.representativeness_spread * rng.uniform();
            Sample s;
            s.id = std::string(ood ? "od" : "ev") + "_c" + detail::pad2(c) + "_" +
                   detail::pad3(n);
            s.level = SupervisionLevel::description;
            s.label = out.class_labels[c];
            s.caption = draw_caption(c, false, c);
            s.split = ood ? "eval_ood" : "eval_id";
            s.image_row = image_rows.size();
            s.latent_class = out.class_labels[c];
            s.latent_representativeness = lambda;
            image_rows.push_back(draw_image(c, lambda, false, c));
            samples.push_back(std::move(s));
        }
    }

    // Knowledge dictionary: three phrases per class drawn from its pool.
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<std::string> options;
        for (std::size_t p = 0; p < 3; ++p) {
            const std::size_t len = 2 + rng.uniform_index(2);  // 2..3 tokens
            std::string phrase;
            for (std::size_t k = 0; k < len; ++k) {
                if (k) phrase += " ";
                phrase += class_pools[c][rng.uniform_index(class_pools[c].size())];
            }
            options.push_back(std::move(phrase));
        }
        out.dict.phrases[out.class_labels[c]] = std::move(options);
    }
    out.dict.templates = {"scan with {}", "imaging study showing {}", "{} visible"};
    out.dict.validate();

    for (std::size_t c = 0; c < C; ++c)
        out.sensitivity.modalities[config.modality][out.class_labels[c]] = out.class_tiers[c];

    // Vocabulary: all pools plus template words, sorted.
    std::set<std::string> vocab_set(shared_pool.begin(), shared_pool.end());
    for (const auto& pool : class_pools) vocab_set.insert(pool.begin(), pool.end());
    for (const std::string& tmpl : out.dict.templates)
        for (const std::string& word : split_tokens(tmpl))
            if (word != "{}") vocab_set.insert(word);

    Dataset& ds = out.data;
    ds.modality = config.modality;
    ds.samples = std::move(samples);
    ds.vocab.assign(vocab_set.begin(), vocab_set.end());
    ds.images = Matrix(image_rows.size(), D);
    for (std::size_t i = 0; i < image_rows.size(); ++i)
        for (std::size_t j = 0; j < D; ++j) ds.images.at(i, j) = image_rows[i][j];

    nlohmann::json manifest;
    manifest["config"] = config.to_json();
    manifest["seed"] = config.seed;
    manifest["modality"] = config.modality;
    manifest["image_dim"] = D;
    manifest["image_count"] = ds.images.rows;
    manifest["sample_count"] = ds.samples.size();
    manifest["train_class_labels"] =
        std::vector<std::string>(out.class_labels.begin(),
                                 out.class_labels.begin() + train_classes);
    manifest["ood_class_labels"] =
        std::vector<std::string>(out.class_labels.begin() + train_classes,
                                 out.class_labels.end());
    std::uint64_t h = fnv1a64(ds.images.data.data(), ds.images.data.size() * sizeof(double));
    for (const Sample& s : ds.samples) h = fnv1a64(s.id + "|" + s.caption, h);
    manifest["hash"] = hex64(h);
    ds.manifest = std::move(manifest);
    ds.rebuild_indexes();
    return out;
}

// Writes the dataset directory: samples.jsonl, images.f64, vocab.json,
// manifest.json plus the generated dict.json and sensitivity.json.
inline void save_synth_dataset(const std::filesystem::path& dir, const SynthDataset& sd) {
    save_dataset(dir, sd.data);
    write_text_file(dir / "dict.json", sd.dict.to_json().dump(2) + "\n");
    write_text_file(dir / "sensitivity.json", sd.sensitivity.to_json().dump(2) + "\n");
}

struct OodSplit {
    Dataset pretraining;
    Dataset ood_eval;
};

// View of the generated data as (pretraining, OOD eval). OOD class labels
// never occur in the pretraining part but stay present in the knowledge
// dictionary so zero-shot prompts can still be built for them.
inline OodSplit generate_ood_split(const SynthConfig& config) {
    SynthDataset sd = generate_dataset(config);
    OodSplit split;
    auto subset = [&](const std::vector<std::string>& splits) {
        Dataset ds;
        ds.modality = sd.data.modality;
        ds.vocab = sd.data.vocab;
        ds.manifest = sd.data.manifest;
        std::vector<std::size_t> rows;
        for (const Sample& s : sd.data.samples) {
            for (const std::string& w : splits) {
                if (s.split == w) {
                    Sample copy = s;
                    copy.image_row = rows.size();
                    rows.push_back(s.image_row);
                    ds.samples.push_back(std::move(copy));
                    break;
                }
            }
        }
        ds.images = sd.data.image_rows(rows);
        ds.manifest["image_count"] = ds.images.rows;
        ds.manifest["sample_count"] = ds.samples.size();
        ds.rebuild_indexes();
        return ds;
    };
    split.pretraining = subset({"train", "eval_id"});
    split.ood_eval = subset({"eval_ood"});
    return split;
}

inline SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig c;
    static const std::set<std::string> known = {
        "class_count", "samples_per_class", "eval_samples_per_class", "image_dim",
        "text_vocab_size", "caption_tokens", "shared_weight", "image_noise",
        "text_separation", "comorbidity_rate", "representativeness_spread",
        "label_level_fraction", "ood_class_count", "tier_noise_multipliers",
        "modality", "seed"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw config_error("synth config: unknown key '" + key + "'");
    }
    auto get = [&](const char* key, auto& target) {
        if (j.contains(key)) target = j.at(key).get<std::decay_t<decltype(target)>>();
    };
    get("class_count", c.class_count);
    get("samples_per_class", c.samples_per_class);
    get("eval_samples_per_class", c.eval_samples_per_class);
    get("image_dim", c.image_dim);
    get("text_vocab_size", c.text_vocab_size);
    get("caption_tokens", c.caption_tokens);
    get("shared_weight", c.shared_weight);
    get("image_noise", c.image_noise);
    get("text_separation", c.text_separation);
    get("comorbidity_rate", c.comorbidity_rate);
    get("representativeness_spread", c.representativeness_spread);
    get("label_level_fraction", c.label_level_fraction);
    get("ood_class_count", c.ood_class_count);
    get("tier_noise_multipliers", c.tier_noise_multipliers);
    get("modality", c.modality);
    get("seed", c.seed);
    c.validate();
    return c;
}

}  // namespace medkco
