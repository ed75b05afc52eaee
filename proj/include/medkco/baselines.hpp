#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "medkco/contrast.hpp"
#include "medkco/curriculum.hpp"
#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"
#include "medkco/rng.hpp"
#include "medkco/tape.hpp"

namespace medkco {

// Self-paced reweighting baseline driven by a loss threshold gamma that grows
// by a fixed increment each epoch.
struct SelfPacedParams {
    double gamma = 0.5;
    double gamma_increment = 0.1;  // applied once per epoch
    double delta = 1e-8;           // stabilizer inside ln(w + delta)

    void validate() const {
        if (delta <= 0.0) throw config_error("self-paced delta must be positive");
    }
};

// w = (1 + e^{-gamma}) / (1 + e^{L - gamma}), evaluated through a stable
// sigmoid so large losses cannot overflow.
inline double cl_log_weight(double loss, double gamma) {
    if (!std::isfinite(loss)) throw numeric_error("cl_log_weight: non-finite loss");
    const double x = gamma - loss;  // w = (1 + e^{-gamma}) * sigmoid(x)
    const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                : std::exp(x) / (1.0 + std::exp(x));
    return (1.0 + std::exp(-gamma)) * sig;
}

// lambda(w) = mu ln(mu) + w ln(w + delta) - gamma w with mu = 1 + e^{-gamma} - w.
inline double cl_log_regularizer(double w, double gamma, double delta) {
    const double mu = 1.0 + std::exp(-gamma) - w;
    if (mu <= 0.0 || w <= 0.0)
        throw contract_error("cl_log_regularizer: weight " + std::to_string(w) +
                             " outside (0, 1 + e^-gamma)");
    return mu * std::log(mu) + w * std::log(w + delta) - gamma * w;
}

// Batch objective: mean of w_i * L_i + lambda(w_i), with the weights computed
// from current loss values and treated as constants (no gradient through w).
inline Var cl_log_loss(Var per_sample_losses, const SelfPacedParams& params) {
    params.validate();
    Tape& tape = *per_sample_losses.tape;
    const Matrix& losses = per_sample_losses.value();
    if (losses.cols != 1) throw shape_error("cl_log_loss: expected Bx1 losses");
    Matrix weights(losses.rows, 1);
    Matrix regularizers(losses.rows, 1);
    for (std::size_t i = 0; i < losses.rows; ++i) {
        const double w = cl_log_weight(losses.at(i, 0), params.gamma);
        weights.at(i, 0) = w;
        regularizers.at(i, 0) = cl_log_regularizer(w, params.gamma, params.delta);
    }
    Var w_const = tape.constant(std::move(weights));
    Var reg_const = tape.constant(std::move(regularizers));
    return mean(add(hadamard(w_const, per_sample_losses), reg_const));
}

// Focal-style logit reweighting: mean of |p_t|^gamma * L_i with p_t the
// detached row-softmax probability of the positive pair. literal_sign flips
// the objective's sign; with a nonnegative contrastive L_i the flipped form
// rewards raising the loss, so positive weighting is the default.
inline Var cl_logit_loss(Var per_sample_losses, const std::vector<double>& positive_probs,
                         double gamma, bool literal_sign = false) {
    if (gamma < 0.0) throw contract_error("cl_logit_loss: gamma must be >= 0");
    Tape& tape = *per_sample_losses.tape;
    const Matrix& losses = per_sample_losses.value();
    if (losses.cols != 1) throw shape_error("cl_logit_loss: expected Bx1 losses");
    if (positive_probs.size() != losses.rows)
        throw shape_error("cl_logit_loss: " + std::to_string(positive_probs.size()) +
                          " probabilities for " + std::to_string(losses.rows) + " losses");
    Matrix weights(losses.rows, 1);
    for (std::size_t i = 0; i < losses.rows; ++i) {
        const double p = positive_probs[i];
        if (p < 0.0 || p > 1.0)
            throw contract_error("cl_logit_loss: probability " + std::to_string(p) +
                                 " outside [0, 1]");
        weights.at(i, 0) = std::pow(std::fabs(p), gamma);
    }
    Var w_const = tape.constant(std::move(weights));
    Var weighted = mean(hadamard(w_const, per_sample_losses));
    return literal_sign ? scale(weighted, -1.0) : weighted;
}

// Positive-pair probabilities (softmax diagonal) for one direction, detached
// from the tape.
inline std::vector<double> positive_pair_probs(const Matrix& sim, double sigma) {
    if (sim.rows != sim.cols) throw shape_error("positive_pair_probs: matrix is " + sim.shape_str());
    std::vector<double> probs(sim.rows);
    for (std::size_t i = 0; i < sim.rows; ++i) {
        double mx = sim.at(i, 0);
        for (std::size_t j = 1; j < sim.cols; ++j) mx = std::max(mx, sim.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < sim.cols; ++j) denom += std::exp((sim.at(i, j) - mx) / sigma);
        probs[i] = std::exp((sim.at(i, i) - mx) / sigma) / denom;
    }
    return probs;
}

// No-curriculum control: one stage holding every sample; per-epoch order is
// drawn fresh by the trainer's shuffle.
inline CurriculumPlan random_shuffle_plan(const std::vector<std::string>& sample_ids,
                                          std::size_t epochs, std::uint64_t seed,
                                          const std::string& config_hash) {
    CurriculumPlan plan;
    plan.seed = seed;
    plan.config_hash = config_hash;
    plan.stages.push_back({1, "all", sample_ids, epochs});
    return plan;
}

}  // namespace medkco
