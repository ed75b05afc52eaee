#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>

#include "medkco/synthgen.hpp"
#include "medkco/util.hpp"

using namespace medkco;
namespace fs = std::filesystem;

namespace {

double mean_interclass_image_cosine(const SynthDataset& sd) {
    const Dataset& ds = sd.data;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < ds.samples.size(); ++a) {
        for (std::size_t b = a + 1; b < ds.samples.size(); ++b) {
            if (ds.samples[a].latent_class == ds.samples[b].latent_class) continue;
            acc += dot_rows(ds.images, ds.samples[a].image_row, ds.images,
                            ds.samples[b].image_row);
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

double mean_interclass_text_cosine(const SynthDataset& sd) {
    const Dataset& ds = sd.data;
    std::vector<Matrix> bags;
    for (const Sample& s : ds.samples) bags.push_back(row_l2_normalize(ds.caption_to_bag(s.caption), 1e-8));
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < ds.samples.size(); ++a) {
        for (std::size_t b = a + 1; b < ds.samples.size(); ++b) {
            if (ds.samples[a].latent_class == ds.samples[b].latent_class) continue;
            double dot = 0.0;
            for (std::size_t j = 0; j < bags[a].cols; ++j)
                dot += bags[a].at(0, j) * bags[b].at(0, j);
            acc += dot;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

SynthConfig small_config() {
    SynthConfig c;
    c.class_count = 4;
    c.samples_per_class = 12;
    c.eval_samples_per_class = 4;
    c.image_dim = 24;
    c.text_vocab_size = 48;
    c.ood_class_count = 1;
    return c;
}

}  // namespace

TEST_CASE("generation is deterministic byte for byte") {
    SynthConfig c = small_config();
    const fs::path dir1 = fs::temp_directory_path() / "medkco_synth_det_1";
    const fs::path dir2 = fs::temp_directory_path() / "medkco_synth_det_2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    save_synth_dataset(dir1, generate_dataset(c));
    save_synth_dataset(dir2, generate_dataset(c));
    for (const char* name : {"samples.jsonl", "images.f64", "vocab.json", "manifest.json",
                             "dict.json", "sensitivity.json"}) {
        CHECK(read_text_file(dir1 / name) == read_text_file(dir2 / name));
    }
}

TEST_CASE("dataset structure and balance") {
    SynthConfig c = small_config();
    SynthDataset sd = generate_dataset(c);

    std::map<std::string, std::size_t> train_per_class;
    for (const Sample& s : sd.data.samples)
        if (s.split == "train") train_per_class[s.latent_class] += 1;
    CHECK(train_per_class.size() == c.class_count - c.ood_class_count);
    for (const auto& [label, count] : train_per_class) CHECK(count == c.samples_per_class);

    // label-level fraction respected and labels only on label-level rows
    std::size_t label_count = 0;
    for (const Sample& s : sd.data.samples) {
        if (s.split != "train") continue;
        if (s.level == SupervisionLevel::label) {
            CHECK(s.label.has_value());
            ++label_count;
        } else {
            CHECK(!s.label.has_value());
        }
    }
    CHECK(label_count == 6 * (c.class_count - c.ood_class_count));

    // every label mapped in the generated sensitivity config
    for (const Sample& s : sd.data.samples)
        CHECK_NOTHROW(sd.sensitivity.stage_for(c.modality, s.latent_class));

    // dictionary covers every class including OOD ones
    for (const std::string& label : sd.class_labels)
        CHECK(sd.dict.phrases_for(label).size() == 3);
}

TEST_CASE("degenerate generator reproduces prototypes") {
    SynthConfig c = small_config();
    c.comorbidity_rate = 0.0;
    c.image_noise = 0.0;
    c.shared_weight = 0.0;
    c.representativeness_spread = 0.0;  // lambda = 1 exactly
    SynthDataset sd = generate_dataset(c);
    for (const Sample& s : sd.data.samples) {
        std::size_t cls = 0;
        while (sd.class_labels[cls] != s.latent_class) ++cls;
        for (std::size_t j = 0; j < c.image_dim; ++j) {
            CHECK(sd.data.images.at(s.image_row, j) ==
                  Catch::Approx(sd.image_prototypes.at(cls, j)).margin(1e-12));
        }
    }
}

TEST_CASE("inter-class image similarity rises with the shared weight") {
    double prev_mean = -2.0;
    for (double rho : {0.0, 0.5, 0.9}) {
        double acc = 0.0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            SynthConfig c = small_config();
            c.shared_weight = rho;
            c.seed = seed;
            acc += mean_interclass_image_cosine(generate_dataset(c));
        }
        const double mean = acc / 5.0;
        CHECK(mean > prev_mean);
        prev_mean = mean;
    }
}

TEST_CASE("confusable images with separable texts at high shared weight") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SynthConfig c = small_config();
        c.shared_weight = 0.9;
        c.seed = seed;
        SynthDataset sd = generate_dataset(c);
        CHECK(mean_interclass_image_cosine(sd) > mean_interclass_text_cosine(sd));
    }
}

TEST_CASE("representativeness orders distance to the prototype") {
    SynthConfig c = small_config();
    c.comorbidity_rate = 0.0;
    c.image_noise = 0.0;
    c.shared_weight = 0.5;
    SynthDataset sd = generate_dataset(c);
    // within each class, larger lambda means closer to the prototype
    for (std::size_t cls = 0; cls < c.class_count; ++cls) {
        std::vector<std::pair<double, double>> lambda_dist;
        for (const Sample& s : sd.data.samples) {
            if (s.latent_class != sd.class_labels[cls] || s.latent_comorbid) continue;
            std::vector<double> proto(c.image_dim);
            for (std::size_t j = 0; j < c.image_dim; ++j)
                proto[j] = sd.image_prototypes.at(cls, j);
            lambda_dist.emplace_back(
                s.latent_representativeness,
                euclidean_row_distance(sd.data.images, s.image_row, proto));
        }
        std::sort(lambda_dist.begin(), lambda_dist.end());
        for (std::size_t i = 1; i < lambda_dist.size(); ++i)
            CHECK(lambda_dist[i].second <= lambda_dist[i - 1].second + 1e-12);
    }
}

TEST_CASE("ood split separates classes") {
    SynthConfig c = small_config();
    OodSplit split = generate_ood_split(c);
    std::set<std::string> train_classes, ood_classes;
    for (const Sample& s : split.pretraining.samples) train_classes.insert(s.latent_class);
    for (const Sample& s : split.ood_eval.samples) ood_classes.insert(s.latent_class);
    for (const std::string& label : ood_classes) CHECK(!train_classes.count(label));
    CHECK(!ood_classes.empty());

    SynthConfig none = small_config();
    none.ood_class_count = 0;
    OodSplit empty = generate_ood_split(none);
    CHECK(empty.ood_eval.samples.empty());
}

TEST_CASE("config validation") {
    SynthConfig c = small_config();
    c.ood_class_count = c.class_count;
    CHECK_THROWS_AS(c.validate(), config_error);

    SynthConfig c2 = small_config();
    c2.shared_weight = 1.0;
    CHECK_THROWS_AS(c2.validate(), config_error);

    nlohmann::json j = small_config().to_json();
    j["mystery_knob"] = 3;
    CHECK_THROWS_AS(SynthConfig::from_json(j), config_error);
}

TEST_CASE("dataset round-trips through the directory format") {
    SynthConfig c = small_config();
    SynthDataset sd = generate_dataset(c);
    const fs::path dir = fs::temp_directory_path() / "medkco_synth_roundtrip";
    fs::remove_all(dir);
    save_synth_dataset(dir, sd);
    Dataset loaded = load_dataset(dir);
    CHECK(loaded.samples.size() == sd.data.samples.size());
    CHECK(loaded.images.data == sd.data.images.data);
    CHECK(loaded.vocab == sd.data.vocab);
    CHECK(loaded.samples[0].id == sd.data.samples[0].id);
    CHECK(loaded.manifest.at("hash") == sd.data.manifest.at("hash"));
}
