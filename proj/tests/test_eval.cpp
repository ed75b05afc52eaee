#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "medkco/eval.hpp"
#include "medkco/rng.hpp"
#include "medkco/synthgen.hpp"

using namespace medkco;
namespace fs = std::filesystem;

namespace {

// Exhaustive pairwise Mann-Whitney oracle, independent of the rank-based
// implementation in macro_auc.
double pairwise_auc_oracle(const Matrix& scores, const std::vector<std::size_t>& labels) {
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < scores.cols; ++c) {
        double wins = 0.0;
        std::size_t pairs = 0;
        for (std::size_t p = 0; p < labels.size(); ++p) {
            if (labels[p] != c) continue;
            for (std::size_t n = 0; n < labels.size(); ++n) {
                if (labels[n] == c) continue;
                ++pairs;
                if (scores.at(p, c) > scores.at(n, c)) wins += 1.0;
                else if (scores.at(p, c) == scores.at(n, c)) wins += 0.5;
            }
        }
        if (pairs == 0) continue;
        total += wins / static_cast<double>(pairs);
        ++used;
    }
    return total / static_cast<double>(used);
}

}  // namespace

TEST_CASE("zero-shot prediction rules") {
    SECTION("exact match wins") {
        Matrix classes(3, 2, {1, 0, 0, 1, std::sqrt(0.5), std::sqrt(0.5)});
        Matrix images(1, 2, {0, 1});
        const ZeroShotResult r = zero_shot_classify(images, classes, {1});
        CHECK(r.predictions[0] == 1);
        CHECK(r.accuracy == 1.0);
    }
    SECTION("hand dot products") {
        Matrix classes(3, 2, {1, 0, 0, 1, std::sqrt(0.5), std::sqrt(0.5)});
        Matrix images(1, 2, {1, 0});
        const ZeroShotResult r = zero_shot_classify(images, classes, {0});
        CHECK(r.predictions[0] == 0);
    }
    SECTION("ties go to class zero") {
        Matrix classes(3, 2, {1, 0, 1, 0, 1, 0});
        Matrix images(2, 2, {1, 0, 0.2, 0.1});
        const ZeroShotResult r = zero_shot_classify(images, classes, {0, 2});
        CHECK(r.predictions[0] == 0);
        CHECK(r.predictions[1] == 0);
        CHECK(r.accuracy == 0.5);
    }
    SECTION("empty eval set rejected") {
        CHECK_THROWS_AS(zero_shot_classify(Matrix(0, 2), Matrix(2, 2), {}), data_error);
    }
}

TEST_CASE("macro AUC closed cases") {
    SECTION("perfect separation") {
        Matrix scores(4, 2, {0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8});
        CHECK(macro_auc(scores, {0, 0, 1, 1}) == Catch::Approx(1.0));
    }
    SECTION("identical scores give half") {
        Matrix scores(4, 2, 0.5);
        CHECK(macro_auc(scores, {0, 0, 1, 1}) == Catch::Approx(0.5));
    }
    SECTION("hand-counted binary case") {
        // class-0 scores: positives {0.9, 0.4}, negatives {0.6, 0.1} -> 3/4
        Matrix scores(4, 2, {0.9, 0.1, 0.4, 0.6, 0.6, 0.4, 0.1, 0.9});
        CHECK(macro_auc(scores, {0, 0, 1, 1}) == Catch::Approx(0.75));
    }
    SECTION("classes without both sides are excluded") {
        Matrix scores(3, 3, {0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.1, 0.2, 0.7});
        // class 2 has one positive... all three classes appear: fine
        CHECK_NOTHROW(macro_auc(scores, {0, 1, 2}));
        // single class present everywhere -> nothing to rank
        CHECK_THROWS_AS(macro_auc(scores, {0, 0, 0}), data_error);
    }
}

TEST_CASE("macro AUC agrees with the exhaustive pairwise oracle") {
    RandomSource rng(31);
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t n = 3 + rng.uniform_index(18);   // up to 20 samples
        const std::size_t classes = 2 + rng.uniform_index(3);
        Matrix scores(n, classes);
        std::vector<std::size_t> labels(n);
        bool ok = false;
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = rng.uniform_index(classes);
            for (std::size_t c = 0; c < classes; ++c)
                scores.at(i, c) = std::round(rng.uniform() * 8.0) / 8.0;  // force ties
        }
        // need at least one rankable class
        for (std::size_t c = 0; c < classes && !ok; ++c) {
            std::size_t pos = 0;
            for (auto l : labels) pos += l == c ? 1 : 0;
            ok = pos > 0 && pos < n;
        }
        if (!ok) continue;
        CHECK(macro_auc(scores, labels) ==
              Catch::Approx(pairwise_auc_oracle(scores, labels)).margin(1e-12));
    }
}

TEST_CASE("AUC and ACC are invariant under positive rescaling") {
    RandomSource rng(32);
    Matrix emb(10, 4);
    for (double& v : emb.data) v = rng.uniform(-1, 1);
    Matrix classes(2, 4);
    for (double& v : classes.data) v = rng.uniform(-1, 1);
    std::vector<std::size_t> labels(10);
    for (auto& l : labels) l = rng.uniform_index(2);

    const ZeroShotResult a = zero_shot_classify(emb, classes, labels);
    const ZeroShotResult b = zero_shot_classify(emb, scale(classes, 7.3), labels);
    CHECK(a.predictions == b.predictions);
    CHECK(a.accuracy == b.accuracy);
    // binary case: softmax ordering reduces to the score margin, which a
    // common positive rescale preserves
    CHECK(macro_auc(softmax_scores(a.scores), labels) ==
          Catch::Approx(macro_auc(softmax_scores(b.scores), labels)).margin(1e-12));
}

TEST_CASE("retrieval recall") {
    SECTION("identity similarity retrieves everything at K=1") {
        const auto r = retrieval_recall_at_k(identity(5), {1, 5});
        CHECK(r.at(1) == 1.0);
        CHECK(r.at(5) == 1.0);
    }
    SECTION("worst-case ranking") {
        // true match scores strictly lowest in each row
        Matrix sim(4, 4, 1.0);
        for (std::size_t i = 0; i < 4; ++i) sim.at(i, i) = 0.0;
        const auto r = retrieval_recall_at_k(sim, {1, 4});
        CHECK(r.at(1) == 0.0);
        CHECK(r.at(4) == 1.0);
    }
    SECTION("hand-ranked instance") {
        // ranks of the true items: 1, 2, 3
        Matrix sim(3, 3, {0.9, 0.1, 0.2,
                          0.8, 0.7, 0.1,
                          0.9, 0.8, 0.3});
        const auto r = retrieval_recall_at_k(sim, {1, 2, 3});
        CHECK(r.at(1) == Catch::Approx(1.0 / 3.0));
        CHECK(r.at(2) == Catch::Approx(2.0 / 3.0));
        CHECK(r.at(3) == 1.0);
    }
    SECTION("monotone in K and complete at the candidate count") {
        RandomSource rng(33);
        Matrix sim(8, 8);
        for (double& v : sim.data) v = rng.uniform();
        std::vector<std::size_t> ks{1, 2, 3, 4, 5, 6, 7, 8};
        const auto r = retrieval_recall_at_k(sim, ks);
        double prev = -1.0;
        for (std::size_t k : ks) {
            CHECK(r.at(k) >= prev);
            prev = r.at(k);
        }
        CHECK(r.at(8) == 1.0);
    }
    SECTION("tie goes to the lower candidate index") {
        Matrix sim(2, 2, {0.5, 0.5, 0.5, 0.5});
        const auto r = retrieval_recall_at_k(sim, {1});
        // query 0: candidate 0 wins the tie (true match) -> hit
        // query 1: candidate 0 wins the tie (not the true match) -> miss
        CHECK(r.at(1) == 0.5);
    }
    SECTION("K beyond the candidate count is rejected") {
        CHECK_THROWS_AS(retrieval_recall_at_k(identity(3), {4}), contract_error);
        CHECK_THROWS_AS(retrieval_recall_at_k(identity(3), {0}), contract_error);
    }
}

TEST_CASE("fine-grained value similarity matches the tape version") {
    RandomSource rng(34);
    Matrix img(6, 4), txt(6, 4);
    for (double& v : img.data) v = rng.uniform(-1, 1);
    for (double& v : txt.data) v = rng.uniform(-1, 1);
    const Matrix vals = filip_similarity_values(img, 2, txt, 2);
    CHECK(vals.rows == 3);
    CHECK(vals.cols == 3);
    // one-token case reduces to plain dot products
    const Matrix single = filip_similarity_values(img, 1, txt, 1);
    const Matrix plain = matmul(img, transpose(txt));
    for (std::size_t i = 0; i < single.size(); ++i)
        CHECK(single.data[i] == Catch::Approx(plain.data[i]).margin(1e-14));
}

TEST_CASE("class prompts are deterministic per seed") {
    SynthConfig sc;
    sc.class_count = 4;
    sc.samples_per_class = 4;
    sc.eval_samples_per_class = 2;
    sc.ood_class_count = 1;
    SynthDataset sd = generate_dataset(sc);
    const auto p1 = class_prompts(sd.class_labels, sd.dict, 9001);
    const auto p2 = class_prompts(sd.class_labels, sd.dict, 9001);
    CHECK(p1 == p2);
    const auto p3 = class_prompts(sd.class_labels, sd.dict, 1234);
    CHECK(p1.size() == p3.size());
}

TEST_CASE("embedding dumps") {
    SynthConfig sc;
    sc.class_count = 3;
    sc.samples_per_class = 4;
    sc.eval_samples_per_class = 3;
    sc.ood_class_count = 1;
    sc.image_dim = 12;
    SynthDataset sd = generate_dataset(sc);

    EncoderConfig ec;
    ec.image_dim = sd.data.images.cols;
    ec.text_dim = sd.data.vocab.size();
    ec.hidden_width = 8;
    ec.embed_dim = 6;
    ec.token_count = 2;
    RandomSource rng(41);
    EncoderParams params = init_encoder_params(ec, rng);

    const auto indices = sd.data.split_indices("eval_id");
    const fs::path p1 = fs::temp_directory_path() / "medkco_dump1.csv";
    const fs::path p2 = fs::temp_directory_path() / "medkco_dump2.csv";
    dump_embeddings(params, sd.data, indices, p1);
    dump_embeddings(params, sd.data, indices, p2);
    CHECK(read_text_file(p1) == read_text_file(p2));

    std::istringstream csv(read_text_file(p1));
    std::string header;
    std::getline(csv, header);
    CHECK(header.rfind("sample_id,label,modality,side,dim_0", 0) == 0);
    std::size_t rows = 0;
    std::string line;
    while (std::getline(csv, line)) {
        ++rows;
        // norm of the embedding columns
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 4 + ec.embed_dim);
        CHECK((cells[3] == "image" || cells[3] == "text"));
        double norm2 = 0.0;
        for (std::size_t d = 0; d < ec.embed_dim; ++d) {
            const double v = std::stod(cells[4 + d]);
            norm2 += v * v;
        }
        CHECK(std::fabs(std::sqrt(norm2) - 1.0) <= 1e-12);
    }
    CHECK(rows == 2 * indices.size());
}
