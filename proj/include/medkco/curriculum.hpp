#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"
#include "medkco/rng.hpp"
#include "medkco/util.hpp"

namespace medkco {

// ---- sensitivity staging ----------------------------------------------------

// Diagnostic-sensitivity tiers: per modality, each class label maps to stage
// 1 (directly visible), 2 (high-probability diagnosis) or 3 (needs
// complementary modalities).
struct SensitivityConfig {
    std::map<std::string, std::map<std::string, int>> modalities;

    int stage_for(const std::string& modality, const std::string& label) const {
        auto mit = modalities.find(modality);
        if (mit == modalities.end())
            throw config_error("sensitivity config has no modality '" + modality + "'");
        auto lit = mit->second.find(label);
        if (lit == mit->second.end())
            throw config_error("sensitivity config for '" + modality +
                               "' does not map label '" + label + "'");
        return lit->second;
    }

    void validate() const {
        for (const auto& [modality, labels] : modalities) {
            for (const auto& [label, stage] : labels) {
                if (stage < 1 || stage > 3)
                    throw config_error("sensitivity stage for '" + label + "' in '" +
                                       modality + "' must be 1..3, got " +
                                       std::to_string(stage));
            }
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["modalities"] = modalities;
        return j;
    }

    static SensitivityConfig from_json(const nlohmann::json& j) {
        SensitivityConfig c;
        c.modalities =
            j.at("modalities").get<std::map<std::string, std::map<std::string, int>>>();
        c.validate();
        return c;
    }
};

// ---- knowledge dictionary ---------------------------------------------------

// Descriptive phrases per class label plus prompt templates with one "{}"
// slot. Captions for label-level data are drawn from here.
struct KnowledgeDictionary {
    std::map<std::string, std::vector<std::string>> phrases;
    std::vector<std::string> templates;

    void validate() const {
        if (templates.empty()) throw config_error("knowledge dictionary has no templates");
        for (const std::string& t : templates) {
            std::size_t first = t.find("{}");
            if (first == std::string::npos || t.find("{}", first + 1) != std::string::npos)
                throw config_error("template '" + t + "' must contain exactly one {} slot");
        }
        for (const auto& [label, list] : phrases) {
            if (list.empty())
                throw config_error("label '" + label + "' has no descriptive phrases");
        }
    }

    const std::vector<std::string>& phrases_for(const std::string& label) const {
        auto it = phrases.find(label);
        if (it == phrases.end())
            throw config_error("knowledge dictionary has no label '" + label + "'");
        return it->second;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["phrases"] = phrases;
        j["templates"] = templates;
        return j;
    }

    static KnowledgeDictionary from_json(const nlohmann::json& j) {
        KnowledgeDictionary d;
        d.phrases = j.at("phrases").get<std::map<std::string, std::vector<std::string>>>();
        d.templates = j.at("templates").get<std::vector<std::string>>();
        d.validate();
        return d;
    }
};

// Draw order: phrase first, then template. Deterministic given the rng state.
inline std::string expand_label_prompt(const std::string& label,
                                       const KnowledgeDictionary& dict, RandomSource& rng) {
    const auto& options = dict.phrases_for(label);
    const std::string& phrase = options[rng.uniform_index(options.size())];
    const std::string& tmpl = dict.templates[rng.uniform_index(dict.templates.size())];
    std::string out = tmpl;
    out.replace(out.find("{}"), 2, phrase);
    return out;
}

// ---- label-level staging ----------------------------------------------------

// Routes each labeled sample id to the stage of its label. Returns the three
// stage id lists in order; empty stages stay present.
inline std::array<std::vector<std::string>, 3> build_label_level_plan(
    const std::vector<std::pair<std::string, std::string>>& labeled_samples,
    const SensitivityConfig& config, const std::string& modality) {
    std::array<std::vector<std::string>, 3> stages;
    for (const auto& [id, label] : labeled_samples) {
        const int stage = config.stage_for(modality, label);
        stages[static_cast<std::size_t>(stage - 1)].push_back(id);
    }
    return stages;
}

// ---- description-level clustering -------------------------------------------

// Frozen reference features r^v, r^t for description-level samples.
struct ReferenceFeatures {
    std::vector<std::string> sample_ids;
    Matrix image_features;  // unit-norm rows
    Matrix text_features;   // unit-norm rows
};

// Pluggable frozen text encoder: captions in, unit-norm embedding rows out.
using TextEncoderFn = std::function<Matrix(const std::vector<std::string>&)>;

// Expands each label once through the knowledge templates and encodes the
// prompts with the frozen reference text encoder.
inline Matrix embed_label_list(const std::vector<std::string>& labels,
                               const KnowledgeDictionary& dict,
                               const TextEncoderFn& frozen_text_encoder,
                               RandomSource& rng) {
    std::vector<std::string> prompts;
    prompts.reserve(labels.size());
    for (const std::string& label : labels)
        prompts.push_back(expand_label_prompt(label, dict, rng));
    Matrix embeddings = frozen_text_encoder(prompts);
    if (embeddings.rows != labels.size())
        throw contract_error("embed_label_list: encoder returned " +
                             std::to_string(embeddings.rows) + " rows for " +
                             std::to_string(labels.size()) + " labels");
    return embeddings;
}

// Text-to-label assignment: highest dot product wins, ties go to the lowest
// label index.
inline std::size_t assign_cluster(const Matrix& text_features, std::size_t row,
                                  const Matrix& label_embeddings) {
    if (label_embeddings.rows == 0) throw contract_error("assign_cluster: empty label list");
    if (label_embeddings.cols != text_features.cols)
        throw shape_error("assign_cluster: feature dim " +
                          std::to_string(text_features.cols) + " vs label dim " +
                          std::to_string(label_embeddings.cols));
    std::size_t best = 0;
    double best_score = dot_rows(text_features, row, label_embeddings, 0);
    for (std::size_t c = 1; c < label_embeddings.rows; ++c) {
        const double score = dot_rows(text_features, row, label_embeddings, c);
        if (score > best_score) {
            best_score = score;
            best = c;
        }
    }
    return best;
}

struct ClusterAssignment {
    std::vector<std::size_t> cluster;        // per sample
    std::vector<double> raw_distance;        // per sample, to own centroid
    std::vector<double> normalized_distance; // per sample, in [0, 1]
    std::map<std::size_t, std::vector<double>> centroids;
    std::map<std::size_t, double> radius;    // d_max per cluster
};

// Centroid = arithmetic mean of member image features (not re-normalized);
// radius = max member distance to the centroid. Clusters with no members are
// simply absent.
inline void compute_centroids(ClusterAssignment& a, const Matrix& image_features) {
    a.centroids.clear();
    a.radius.clear();
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t i = 0; i < a.cluster.size(); ++i) {
        auto& centroid = a.centroids[a.cluster[i]];
        if (centroid.empty()) centroid.assign(image_features.cols, 0.0);
        for (std::size_t j = 0; j < image_features.cols; ++j)
            centroid[j] += image_features.at(i, j);
        counts[a.cluster[i]] += 1;
    }
    for (auto& [c, centroid] : a.centroids) {
        for (double& v : centroid) v /= static_cast<double>(counts[c]);
    }
    a.raw_distance.assign(a.cluster.size(), 0.0);
    for (std::size_t i = 0; i < a.cluster.size(); ++i) {
        const double d = euclidean_row_distance(image_features, i, a.centroids[a.cluster[i]]);
        a.raw_distance[i] = d;
        auto [it, inserted] = a.radius.try_emplace(a.cluster[i], d);
        if (!inserted) it->second = std::max(it->second, d);
    }
}

// d_i = d(r_i^v, u_c) / d_max; a zero-radius cluster maps every member to 0.
inline double normalized_distance(double raw, double d_max) {
    if (d_max < 0.0) throw contract_error("normalized_distance: negative radius");
    if (d_max == 0.0) return 0.0;
    return raw / d_max;
}

inline void normalize_distances(ClusterAssignment& a) {
    a.normalized_distance.assign(a.cluster.size(), 0.0);
    for (std::size_t i = 0; i < a.cluster.size(); ++i)
        a.normalized_distance[i] = normalized_distance(a.raw_distance[i],
                                                       a.radius[a.cluster[i]]);
}

// Full clustering pass over reference features.
inline ClusterAssignment cluster_description_samples(const ReferenceFeatures& feats,
                                                     const Matrix& label_embeddings) {
    ClusterAssignment a;
    a.cluster.resize(feats.sample_ids.size());
    for (std::size_t i = 0; i < feats.sample_ids.size(); ++i)
        a.cluster[i] = assign_cluster(feats.text_features, i, label_embeddings);
    compute_centroids(a, feats.image_features);
    normalize_distances(a);
    return a;
}

// ---- stage partitioning -----------------------------------------------------

enum class BandOrder { descending, ascending };

// Distance-band partition into S stages. The default (descending) trains the
// farthest, most representative samples first: stage s covers
// d in (1 - s/S, 1 - (s-1)/S], with d = 0 landing in stage S. The ascending
// option uses the bands [(s-1)/S, s/S) with d = 1 landing in stage S.
inline std::vector<std::vector<std::size_t>> partition_stages(
    const std::vector<double>& normalized, std::size_t stage_count,
    BandOrder order = BandOrder::descending) {
    if (stage_count < 1) throw contract_error("partition_stages: S must be >= 1");
    std::vector<std::vector<std::size_t>> stages(stage_count);
    const double S = static_cast<double>(stage_count);
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        const double d = normalized[i];
        if (d < 0.0 || d > 1.0)
            throw contract_error("partition_stages: distance " + std::to_string(d) +
                                 " outside [0, 1]");
        std::size_t stage = stage_count;  // fallback bucket for both orders
        if (order == BandOrder::descending) {
            for (std::size_t s = 1; s <= stage_count; ++s) {
                if (d > 1.0 - static_cast<double>(s) / S) {
                    stage = s;
                    break;
                }
            }
        } else {
            for (std::size_t s = 1; s <= stage_count; ++s) {
                if (d < static_cast<double>(s) / S) {
                    stage = s;
                    break;
                }
            }
        }
        stages[stage - 1].push_back(i);
    }
    return stages;
}

// Equal-count alternative: sort by descending distance (stable on index) and
// cut into S nearly equal chunks, earliest chunks taking the remainder.
inline std::vector<std::vector<std::size_t>> partition_equal_count(
    const std::vector<double>& normalized, std::size_t stage_count) {
    if (stage_count < 1) throw contract_error("partition_equal_count: S must be >= 1");
    std::vector<std::size_t> order(normalized.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return normalized[a] > normalized[b];
    });
    std::vector<std::vector<std::size_t>> stages(stage_count);
    const std::size_t base = normalized.size() / stage_count;
    const std::size_t extra = normalized.size() % stage_count;
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < stage_count; ++s) {
        const std::size_t take = base + (s < extra ? 1 : 0);
        for (std::size_t k = 0; k < take; ++k) stages[s].push_back(order[cursor++]);
    }
    return stages;
}

// ---- plan -------------------------------------------------------------------

struct PlanStage {
    std::size_t index = 0;  // 1-based position in the training order
    std::string level;      // "label" or "description"
    std::vector<std::string> sample_ids;
    std::size_t epochs = 0;
};

struct CurriculumPlan {
    std::vector<PlanStage> stages;
    std::uint64_t seed = 0;
    std::string config_hash;

    std::size_t total_epochs() const {
        std::size_t total = 0;
        for (const auto& s : stages) total += s.epochs;
        return total;
    }

    void validate_disjoint() const {
        std::set<std::string> seen;
        for (const auto& stage : stages) {
            for (const auto& id : stage.sample_ids) {
                if (!seen.insert(id).second)
                    throw data_error("curriculum plan: sample id '" + id +
                                     "' appears in more than one stage");
            }
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json stages_json = nlohmann::json::array();
        for (const auto& s : stages) {
            stages_json.push_back({{"index", s.index},
                                   {"level", s.level},
                                   {"sample_ids", s.sample_ids},
                                   {"epochs", s.epochs}});
        }
        return {{"stages", stages_json}, {"seed", seed}, {"config_hash", config_hash}};
    }

    static CurriculumPlan from_json(const nlohmann::json& j) {
        CurriculumPlan plan;
        for (const auto& s : j.at("stages")) {
            PlanStage stage;
            stage.index = s.at("index").get<std::size_t>();
            stage.level = s.at("level").get<std::string>();
            stage.sample_ids = s.at("sample_ids").get<std::vector<std::string>>();
            stage.epochs = s.at("epochs").get<std::size_t>();
            plan.stages.push_back(std::move(stage));
        }
        plan.seed = j.at("seed").get<std::uint64_t>();
        plan.config_hash = j.at("config_hash").get<std::string>();
        plan.validate_disjoint();
        return plan;
    }

    void save(const std::filesystem::path& path) const {
        write_text_file(path, to_json().dump(2) + "\n");
    }

    static CurriculumPlan load(const std::filesystem::path& path) {
        return from_json(nlohmann::json::parse(read_text_file(path)));
    }
};

// Concatenates label-level stages (1..3) with description-level stages.
inline CurriculumPlan build_plan(const std::array<std::vector<std::string>, 3>& label_stages,
                                 const std::vector<std::vector<std::string>>& description_stages,
                                 std::size_t epochs_per_stage, std::uint64_t seed,
                                 const std::string& config_hash) {
    CurriculumPlan plan;
    plan.seed = seed;
    plan.config_hash = config_hash;
    std::size_t index = 1;
    for (const auto& ids : label_stages) {
        plan.stages.push_back({index++, "label", ids, epochs_per_stage});
    }
    for (const auto& ids : description_stages) {
        plan.stages.push_back({index++, "description", ids, epochs_per_stage});
    }
    plan.validate_disjoint();
    return plan;
}

}  // namespace medkco
