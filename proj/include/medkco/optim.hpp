#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"

namespace medkco {

struct AdamWConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First/second moment accumulators mirror the canonical named-tensor order.
struct OptimizerState {
    AdamWConfig config;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::uint64_t step = 0;

    void init_like(const std::vector<std::pair<std::string, Matrix*>>& tensors) {
        m.clear();
        v.clear();
        for (const auto& [name, mat] : tensors) {
            m.emplace_back(mat->rows, mat->cols);
            v.emplace_back(mat->rows, mat->cols);
        }
    }
};

// Decoupled weight decay first, then the bias-corrected Adam update.
inline void adamw_step(const std::vector<std::pair<std::string, Matrix*>>& tensors,
                       const std::vector<Matrix>& gradients, OptimizerState& state,
                       double learning_rate) {
    if (gradients.size() != tensors.size()) {
        throw shape_error("adamw_step: " + std::to_string(gradients.size()) +
                          " gradients for " + std::to_string(tensors.size()) + " tensors");
    }
    if (state.m.size() != tensors.size()) {
        throw shape_error("adamw_step: optimizer state does not match parameter set");
    }
    const AdamWConfig& c = state.config;
    const std::uint64_t t = state.step + 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t p = 0; p < tensors.size(); ++p) {
        Matrix& theta = *tensors[p].second;
        const Matrix& g = gradients[p];
        if (!theta.same_shape(g)) {
            throw shape_error("adamw_step: gradient shape " + g.shape_str() +
                              " does not match parameter " + tensors[p].first + " " +
                              theta.shape_str());
        }
        if (!g.all_finite()) {
            throw numeric_error("adamw_step: non-finite gradient for parameter " +
                                tensors[p].first);
        }
        Matrix& m = state.m[p];
        Matrix& v = state.v[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            theta.data[i] -= learning_rate * c.weight_decay * theta.data[i];
            m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * g.data[i];
            v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            theta.data[i] -= learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
    state.step = t;
}

// Linear ramp 0 -> base over the warm-up steps, then cosine decay base ->
// floor over the remainder. Continuous at the junction.
struct LrSchedule {
    double base_rate = 1e-4;
    std::uint64_t warmup_steps = 0;
    std::uint64_t total_steps = 0;
    double floor_rate = 0.0;
};

inline double lr_at(const LrSchedule& s, std::uint64_t step) {
    if (step > s.total_steps) {
        throw contract_error("lr_at: step " + std::to_string(step) + " beyond total " +
                             std::to_string(s.total_steps));
    }
    if (step < s.warmup_steps) {
        return s.base_rate * static_cast<double>(step) /
               static_cast<double>(s.warmup_steps);
    }
    if (s.total_steps <= s.warmup_steps) return s.base_rate;
    const double progress = static_cast<double>(step - s.warmup_steps) /
                            static_cast<double>(s.total_steps - s.warmup_steps);
    return s.floor_rate + (s.base_rate - s.floor_rate) * 0.5 *
                              (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace medkco
