#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"
#include "medkco/tape.hpp"

namespace medkco {

enum class SimDirection { i2t, t2i };

// In-batch similarity matrix (BxB) with its direction tag and the
// temperature that will scale it downstream.
struct SimilarityMatrix {
    Matrix values;
    SimDirection direction = SimDirection::i2t;
    double temperature = 0.07;
};

// Cosine similarities on unit embeddings: i2t[i][j] = v_i . t_j and
// t2i[i][j] = t_i . v_j. On global embeddings the two are transposes of
// each other.
inline std::pair<Var, Var> similarity_matrices(Var image_embeddings, Var text_embeddings) {
    if (image_embeddings.rows() != text_embeddings.rows()) {
        throw shape_error("similarity_matrices: batch sizes differ, " +
                          std::to_string(image_embeddings.rows()) + " vs " +
                          std::to_string(text_embeddings.rows()));
    }
    if (image_embeddings.cols() != text_embeddings.cols()) {
        throw shape_error("similarity_matrices: embedding dims differ, " +
                          std::to_string(image_embeddings.cols()) + " vs " +
                          std::to_string(text_embeddings.cols()));
    }
    Var i2t = matmul(image_embeddings, transpose(text_embeddings));
    Var t2i = matmul(text_embeddings, transpose(image_embeddings));
    return {i2t, t2i};
}

inline SimilarityMatrix similarity_matrix_values(const Matrix& a, const Matrix& b,
                                                 SimDirection dir, double temperature) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw shape_error("similarity_matrix_values: shape mismatch " + a.shape_str() +
                          " vs " + b.shape_str());
    }
    return {matmul(a, transpose(b)), dir, temperature};
}

// Per-sample InfoNCE over one direction: row softmax of S/sigma, negative log
// of the diagonal entry. Returns a Bx1 node.
inline Var info_nce(SimDirection /*direction*/, Var sim, double sigma) {
    if (sigma <= 0.0) throw contract_error("info_nce: temperature must be positive");
    const Matrix& s = sim.value();
    if (s.rows != s.cols) throw shape_error("info_nce: similarity matrix is " + s.shape_str());
    if (s.rows < 2) throw contract_error("info_nce: batch size must be >= 2");
    Var probs = row_softmax(scale(sim, 1.0 / sigma));
    return scale(log(diag(probs)), -1.0);
}

// Variant with a differentiable inverse temperature (1x1 node), for the
// learnable log-temperature mode.
inline Var info_nce(SimDirection /*direction*/, Var sim, Var inverse_temperature) {
    const Matrix& s = sim.value();
    if (s.rows != s.cols) throw shape_error("info_nce: similarity matrix is " + s.shape_str());
    if (s.rows < 2) throw contract_error("info_nce: batch size must be >= 2");
    if (inverse_temperature.value().at(0, 0) <= 0.0)
        throw contract_error("info_nce: temperature must be positive");
    Var probs = row_softmax(scale_by(sim, inverse_temperature));
    return scale(log(diag(probs)), -1.0);
}

// Per-batch telemetry: batch-mean directional losses, the t2i weight, and
// the scalar objective node the optimizer consumes.
struct LossNodes {
    Var per_sample;  // Bx1, 0.5 * (L_i2t + alpha * L_t2i)
    Var total;       // 1x1 batch mean
    Var i2t;         // Bx1
    Var t2i;         // Bx1
    double alpha = 1.0;
};

struct LossBreakdown {
    double loss_i2t = 0.0;
    double loss_t2i = 0.0;
    double alpha = 1.0;
    double total = 0.0;
};

inline Var mean_value(Var per_sample) { return mean(per_sample); }

inline LossBreakdown breakdown(const LossNodes& nodes) {
    auto mean_of = [](const Matrix& m) {
        double s = 0.0;
        for (double v : m.data) s += v;
        return s / static_cast<double>(m.size());
    };
    LossBreakdown b;
    b.loss_i2t = mean_of(nodes.i2t.value());
    b.loss_t2i = mean_of(nodes.t2i.value());
    b.alpha = nodes.alpha;
    b.total = nodes.total.value().at(0, 0);
    return b;
}

// Weighted combination 0.5 * (L_i2t + alpha * L_t2i). alpha = 1 recovers the
// plain symmetric objective.
inline LossNodes asymmetric_loss(Var i2t_losses, Var t2i_losses, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) {
        throw contract_error("asymmetric_loss: alpha " + std::to_string(alpha) +
                             " outside [0, 1]");
    }
    if (i2t_losses.rows() != t2i_losses.rows()) {
        throw shape_error("asymmetric_loss: per-sample loss lengths differ");
    }
    LossNodes nodes;
    nodes.i2t = i2t_losses;
    nodes.t2i = t2i_losses;
    nodes.alpha = alpha;
    nodes.per_sample = scale(add(i2t_losses, scale(t2i_losses, alpha)), 0.5);
    nodes.total = mean(nodes.per_sample);
    return nodes;
}

inline LossNodes symmetric_loss(Var i2t_losses, Var t2i_losses) {
    return asymmetric_loss(i2t_losses, t2i_losses, 1.0);
}

// ---- t2i weight schedule ----------------------------------------------------

enum class ScheduleKind { global_linear, segmented_linear, constant };

struct WeightSchedule {
    ScheduleKind kind = ScheduleKind::global_linear;
    double constant_value = 1.0;
};

// Linear ramp alpha = t / (T - 1): exactly 0 at the first epoch and 1 at the
// last. For the segmented variant the caller passes the within-stage epoch
// index and stage length instead of the global ones.
inline double alpha_schedule(const WeightSchedule& schedule, std::size_t t, std::size_t T) {
    if (T < 1) throw contract_error("alpha_schedule: total epochs must be >= 1");
    if (t >= T) {
        throw contract_error("alpha_schedule: epoch " + std::to_string(t) +
                             " not below total " + std::to_string(T));
    }
    switch (schedule.kind) {
        case ScheduleKind::constant:
            return schedule.constant_value;
        case ScheduleKind::global_linear:
        case ScheduleKind::segmented_linear:
            if (T == 1) return 0.0;
            return static_cast<double>(t) / static_cast<double>(T - 1);
    }
    throw contract_error("alpha_schedule: unknown schedule kind");
}

// ---- fine-grained (late interaction) similarity -----------------------------

// Token-level similarity: entry (i, j) of the i2t matrix is the mean over
// image tokens of sample i of the max dot product against text tokens of
// sample j; t2i swaps the roles. Token rows are grouped per sample. The two
// matrices are in general not transposes of each other.
inline std::pair<Var, Var> filip_similarity(Var image_tokens, std::size_t image_token_count,
                                            Var text_tokens, std::size_t text_token_count) {
    if (image_token_count == 0 || text_token_count == 0) {
        throw contract_error("filip_similarity: token sequences must be nonempty");
    }
    if (image_tokens.rows() % image_token_count != 0 ||
        text_tokens.rows() % text_token_count != 0) {
        throw shape_error("filip_similarity: token rows not divisible by token count");
    }
    if (image_tokens.cols() != text_tokens.cols()) {
        throw shape_error("filip_similarity: token dims differ");
    }
    const std::size_t batch = image_tokens.rows() / image_token_count;
    if (text_tokens.rows() / text_token_count != batch) {
        throw shape_error("filip_similarity: batch sizes differ");
    }
    Tape& tape = *image_tokens.tape;

    std::vector<Var> image_slices, text_slices, image_slices_t, text_slices_t;
    image_slices.reserve(batch);
    text_slices.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        image_slices.push_back(slice_rows(image_tokens, i * image_token_count, image_token_count));
        text_slices.push_back(slice_rows(text_tokens, i * text_token_count, text_token_count));
    }
    for (std::size_t i = 0; i < batch; ++i) {
        image_slices_t.push_back(transpose(image_slices[i]));
        text_slices_t.push_back(transpose(text_slices[i]));
    }

    std::vector<Var> i2t_entries, t2i_entries;
    i2t_entries.reserve(batch * batch);
    t2i_entries.reserve(batch * batch);
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < batch; ++j) {
            i2t_entries.push_back(mean(row_max(matmul(image_slices[i], text_slices_t[j]))));
        }
    }
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < batch; ++j) {
            t2i_entries.push_back(mean(row_max(matmul(text_slices[i], image_slices_t[j]))));
        }
    }
    return {assemble(tape, batch, batch, i2t_entries),
            assemble(tape, batch, batch, t2i_entries)};
}

}  // namespace medkco
