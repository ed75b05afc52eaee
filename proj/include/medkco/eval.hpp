#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "medkco/curriculum.hpp"
#include "medkco/dataset.hpp"
#include "medkco/encoder.hpp"
#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"
#include "medkco/util.hpp"

namespace medkco {

struct EvalReport {
    std::string split;
    std::map<std::string, double> metrics;
    std::size_t sample_count = 0;
    std::string checkpoint_id;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"split", split},
                {"metrics", metrics},
                {"sample_count", sample_count},
                {"checkpoint", checkpoint_id},
                {"seed", seed}};
    }
};

// One deterministic prompt per class: a fixed evaluation seed drives the
// phrase/template draws, in class order.
inline std::vector<std::string> class_prompts(const std::vector<std::string>& class_labels,
                                              const KnowledgeDictionary& dict,
                                              std::uint64_t eval_seed) {
    RandomSource rng(eval_seed);
    std::vector<std::string> prompts;
    prompts.reserve(class_labels.size());
    for (const std::string& label : class_labels)
        prompts.push_back(expand_label_prompt(label, dict, rng));
    return prompts;
}

struct ZeroShotResult {
    std::vector<std::size_t> predictions;
    Matrix scores;  // N x C cosine similarities
    double accuracy = 0.0;
};

// Prediction = argmax cosine similarity against the class embeddings; exact
// ties go to the lowest class index.
inline ZeroShotResult zero_shot_classify(const Matrix& image_embeddings,
                                         const Matrix& class_embeddings,
                                         const std::vector<std::size_t>& true_class) {
    if (image_embeddings.rows == 0) throw data_error("zero_shot_classify: empty eval set");
    if (true_class.size() != image_embeddings.rows)
        throw shape_error("zero_shot_classify: label count mismatch");
    if (class_embeddings.rows == 0)
        throw data_error("zero_shot_classify: no class embeddings");
    ZeroShotResult out;
    out.scores = matmul(image_embeddings, transpose(class_embeddings));
    out.predictions.resize(image_embeddings.rows);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < out.scores.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < out.scores.cols; ++c)
            if (out.scores.at(i, c) > out.scores.at(i, best)) best = c;
        out.predictions[i] = best;
        if (best == true_class[i]) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.scores.rows);
    return out;
}

// Row softmax of the score matrix (probability per class per sample).
inline Matrix softmax_scores(const Matrix& scores) {
    Matrix p = scores;
    for (std::size_t i = 0; i < p.rows; ++i) {
        double mx = p.at(i, 0);
        for (std::size_t j = 1; j < p.cols; ++j) mx = std::max(mx, p.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) {
            p.at(i, j) = std::exp(p.at(i, j) - mx);
            sum += p.at(i, j);
        }
        for (std::size_t j = 0; j < p.cols; ++j) p.at(i, j) /= sum;
    }
    return p;
}

// Macro one-vs-rest AUC over softmaxed scores, rank-based with average ranks
// for ties. Classes lacking positives or negatives are skipped; if every
// class is skipped the metric is undefined.
inline double macro_auc(const Matrix& class_scores, const std::vector<std::size_t>& labels) {
    if (labels.size() != class_scores.rows) throw shape_error("macro_auc: label count mismatch");
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < class_scores.cols; ++c) {
        std::size_t positives = 0;
        for (std::size_t l : labels) positives += l == c ? 1 : 0;
        const std::size_t negatives = labels.size() - positives;
        if (positives == 0 || negatives == 0) continue;

        std::vector<std::size_t> order(labels.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return class_scores.at(a, c) < class_scores.at(b, c);
        });
        // Average tied ranks (1-based) and sum over the positives.
        std::vector<double> rank(labels.size(), 0.0);
        std::size_t i = 0;
        while (i < order.size()) {
            std::size_t j = i;
            while (j + 1 < order.size() &&
                   class_scores.at(order[j + 1], c) == class_scores.at(order[i], c))
                ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
            i = j + 1;
        }
        double pos_rank_sum = 0.0;
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (labels[k] == c) pos_rank_sum += rank[k];
        const double p = static_cast<double>(positives);
        const double n = static_cast<double>(negatives);
        total += (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
        ++used;
    }
    if (used == 0) throw data_error("macro_auc: no class has both positives and negatives");
    return total / static_cast<double>(used);
}

// Recall@K over a precomputed query-by-candidate similarity matrix where the
// true match of query i is candidate i. Ties rank the lower candidate index
// first.
inline std::map<std::size_t, double> retrieval_recall_at_k(const Matrix& similarity,
                                                           const std::vector<std::size_t>& ks) {
    if (similarity.rows != similarity.cols)
        throw shape_error("retrieval_recall_at_k: expected square paired similarity, got " +
                          similarity.shape_str());
    const std::size_t n = similarity.rows;
    for (std::size_t k : ks) {
        if (k == 0 || k > n)
            throw contract_error("retrieval_recall_at_k: K " + std::to_string(k) +
                                 " outside [1, " + std::to_string(n) + "]");
    }
    std::vector<std::size_t> rank_of_true(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s_true = similarity.at(i, i);
        std::size_t rank = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double s = similarity.at(i, j);
            if (s > s_true || (s == s_true && j < i)) ++rank;
        }
        rank_of_true[i] = rank;
    }
    std::map<std::size_t, double> out;
    for (std::size_t k : ks) {
        std::size_t hits = 0;
        for (std::size_t r : rank_of_true) hits += r <= k ? 1 : 0;
        out[k] = static_cast<double>(hits) / static_cast<double>(n);
    }
    return out;
}

// Value-level fine-grained similarity for retrieval under the late
// interaction framework: mean over query tokens of the max dot product
// against candidate tokens.
inline Matrix filip_similarity_values(const Matrix& query_tokens, std::size_t query_count,
                                      const Matrix& cand_tokens, std::size_t cand_count) {
    if (query_count == 0 || cand_count == 0)
        throw contract_error("filip_similarity_values: empty token sequences");
    const std::size_t nq = query_tokens.rows / query_count;
    const std::size_t nc = cand_tokens.rows / cand_count;
    Matrix out(nq, nc);
    for (std::size_t i = 0; i < nq; ++i) {
        for (std::size_t j = 0; j < nc; ++j) {
            double acc = 0.0;
            for (std::size_t a = 0; a < query_count; ++a) {
                double best = -1e300;
                for (std::size_t b = 0; b < cand_count; ++b) {
                    double dot = 0.0;
                    for (std::size_t d = 0; d < query_tokens.cols; ++d)
                        dot += query_tokens.at(i * query_count + a, d) *
                               cand_tokens.at(j * cand_count + b, d);
                    best = std::max(best, dot);
                }
                acc += best;
            }
            out.at(i, j) = acc / static_cast<double>(query_count);
        }
    }
    return out;
}

// Full-precision CSV dump of image and text embeddings, one pair of rows per
// sample (image row first).
inline void dump_embeddings(const EncoderParams& params, const Dataset& data,
                            const std::vector<std::size_t>& sample_indices,
                            const std::filesystem::path& path) {
    if (sample_indices.empty()) throw data_error("dump_embeddings: no samples selected");
    std::vector<std::size_t> rows;
    std::vector<std::string> captions;
    for (std::size_t idx : sample_indices) {
        rows.push_back(data.samples[idx].image_row);
        captions.push_back(data.samples[idx].caption);
    }
    const Matrix image_emb = encode_image_values(params, data.image_rows(rows)).global;
    const Matrix text_emb = encode_text_values(params, data.captions_to_bags(captions)).global;

    std::string csv = "sample_id,label,modality,side";
    for (std::size_t d = 0; d < image_emb.cols; ++d) csv += ",dim_" + std::to_string(d);
    csv += "\n";
    char buf[40];
    auto append_row = [&](const Sample& s, const char* side, const Matrix& emb,
                          std::size_t row) {
        csv += s.id + "," + (s.label ? *s.label : "") + "," + data.modality + "," + side;
        for (std::size_t d = 0; d < emb.cols; ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g", emb.at(row, d));
            csv += ",";
            csv += buf;
        }
        csv += "\n";
    };
    for (std::size_t i = 0; i < sample_indices.size(); ++i) {
        const Sample& s = data.samples[sample_indices[i]];
        append_row(s, "image", image_emb, i);
        append_row(s, "text", text_emb, i);
    }
    write_text_file(path, csv);
}

}  // namespace medkco
