#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"
#include "medkco/rng.hpp"
#include "medkco/tape.hpp"

namespace medkco {

// Desk-scale stand-in for the usual CNN/BERT pair: two small MLP towers with
// a shared-structure projection head each. The final hidden layer is split
// into `token_count` local tokens for fine-grained similarity; their mean
// pool becomes the global embedding. Text inputs are bag-of-token count
// vectors over a run-local vocabulary.
struct EncoderConfig {
    std::size_t image_dim = 0;
    std::size_t text_dim = 0;
    std::size_t hidden_width = 64;
    std::size_t embed_dim = 32;
    std::size_t token_count = 4;
    std::size_t hidden_layers = 2;
    double temperature = 0.07;
    bool learnable_temperature = false;
    double normalize_epsilon = 1e-8;

    std::size_t token_dim() const { return hidden_width / token_count; }

    void validate() const {
        if (image_dim == 0 || text_dim == 0)
            throw config_error("encoder: input dimensions must be positive");
        if (hidden_layers == 0) throw config_error("encoder: need at least one hidden layer");
        if (token_count == 0 || hidden_width % token_count != 0)
            throw config_error("encoder: hidden_width must be divisible by token_count");
        if (embed_dim == 0) throw config_error("encoder: embed_dim must be positive");
        if (temperature <= 0.0) throw config_error("encoder: temperature must be positive");
    }
};

struct LayerParams {
    Matrix weight;  // in x out
    Matrix bias;    // 1 x out
};

struct EncoderParams {
    EncoderConfig config;
    std::vector<LayerParams> image_layers;
    std::vector<LayerParams> text_layers;
    LayerParams image_proj;
    LayerParams text_proj;
    Matrix log_temperature;  // 1x1, used only when learnable_temperature

    double temperature() const {
        return config.learnable_temperature ? std::exp(log_temperature.at(0, 0))
                                            : config.temperature;
    }
};

// Glorot-style uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot_init(std::size_t fan_in, std::size_t fan_out, RandomSource& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix m(fan_in, fan_out);
    for (double& v : m.data) v = rng.uniform(-a, a);
    return m;
}

// Canonical draw order: image layers, text layers, image projection, text
// projection. Biases start at zero; log-temperature starts at
// ln(config.temperature) without consuming a draw.
inline EncoderParams init_encoder_params(const EncoderConfig& config, RandomSource& rng) {
    config.validate();
    EncoderParams p;
    p.config = config;
    auto make_tower = [&](std::size_t input_dim) {
        std::vector<LayerParams> layers;
        std::size_t in = input_dim;
        for (std::size_t l = 0; l < config.hidden_layers; ++l) {
            layers.push_back({glorot_init(in, config.hidden_width, rng),
                              Matrix(1, config.hidden_width)});
            in = config.hidden_width;
        }
        return layers;
    };
    p.image_layers = make_tower(config.image_dim);
    p.text_layers = make_tower(config.text_dim);
    p.image_proj = {glorot_init(config.token_dim(), config.embed_dim, rng),
                    Matrix(1, config.embed_dim)};
    p.text_proj = {glorot_init(config.token_dim(), config.embed_dim, rng),
                   Matrix(1, config.embed_dim)};
    p.log_temperature = Matrix(1, 1, {std::log(config.temperature)});
    return p;
}

// Canonical flat view of all learnable tensors. Shared by the optimizer, the
// checkpoint format and the tape leaf order, so it must stay stable.
inline std::vector<std::pair<std::string, Matrix*>> named_tensors(EncoderParams& p) {
    std::vector<std::pair<std::string, Matrix*>> out;
    for (std::size_t l = 0; l < p.image_layers.size(); ++l) {
        out.emplace_back("image_layer_" + std::to_string(l) + "_w", &p.image_layers[l].weight);
        out.emplace_back("image_layer_" + std::to_string(l) + "_b", &p.image_layers[l].bias);
    }
    for (std::size_t l = 0; l < p.text_layers.size(); ++l) {
        out.emplace_back("text_layer_" + std::to_string(l) + "_w", &p.text_layers[l].weight);
        out.emplace_back("text_layer_" + std::to_string(l) + "_b", &p.text_layers[l].bias);
    }
    out.emplace_back("image_proj_w", &p.image_proj.weight);
    out.emplace_back("image_proj_b", &p.image_proj.bias);
    out.emplace_back("text_proj_w", &p.text_proj.weight);
    out.emplace_back("text_proj_b", &p.text_proj.bias);
    if (p.config.learnable_temperature) out.emplace_back("log_temperature", &p.log_temperature);
    return out;
}

inline std::vector<std::pair<std::string, const Matrix*>> named_tensors(
    const EncoderParams& p) {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (auto& [name, mat] : named_tensors(const_cast<EncoderParams&>(p)))
        out.emplace_back(name, mat);
    return out;
}

// Tape handles for one tower + projection.
struct TowerVars {
    std::vector<std::pair<Var, Var>> layers;  // (weight, bias)
    Var proj_weight;
    Var proj_bias;
};

struct ModelVars {
    TowerVars image;
    TowerVars text;
    Var log_temperature;
    bool has_log_temperature = false;
};

namespace detail {
inline TowerVars bind_tower(Tape& tape, const std::vector<LayerParams>& layers,
                            const LayerParams& proj, bool trainable) {
    TowerVars tv;
    auto bind = [&](const Matrix& m) {
        return trainable ? tape.leaf(m) : tape.constant(m);
    };
    for (const auto& layer : layers)
        tv.layers.emplace_back(bind(layer.weight), bind(layer.bias));
    tv.proj_weight = bind(proj.weight);
    tv.proj_bias = bind(proj.bias);
    return tv;
}
}  // namespace detail

inline ModelVars bind_model(Tape& tape, const EncoderParams& p, bool trainable) {
    ModelVars mv;
    mv.image = detail::bind_tower(tape, p.image_layers, p.image_proj, trainable);
    mv.text = detail::bind_tower(tape, p.text_layers, p.text_proj, trainable);
    if (p.config.learnable_temperature) {
        mv.log_temperature = trainable ? tape.leaf(p.log_temperature)
                                       : tape.constant(p.log_temperature);
        mv.has_log_temperature = true;
    }
    return mv;
}

// Embeddings produced by one tower: unit-norm global vectors (B x E) and
// unit-norm token sequences ((B*k) x E, rows grouped by sample).
struct EncoderOutputVars {
    Var global;
    Var tokens;
    std::size_t token_count = 0;
};

namespace detail {
inline EncoderOutputVars encode_tower(const EncoderConfig& config, const TowerVars& tower,
                                      Var input, std::size_t expected_dim,
                                      const char* side) {
    if (input.cols() != expected_dim) {
        throw shape_error(std::string(side) + " input dim " + std::to_string(input.cols()) +
                          " does not match encoder dim " + std::to_string(expected_dim));
    }
    // relu between layers, linear final features ahead of the projection
    Var h = input;
    for (std::size_t l = 0; l < tower.layers.size(); ++l) {
        h = add_row(matmul(h, tower.layers[l].first), tower.layers[l].second);
        if (l + 1 < tower.layers.size()) h = relu(h);
    }
    Var token_pre = reshape_rows(h, config.token_dim());          // (B*k) x d
    Var global_pre = mean_pool_rows(token_pre, config.token_count);  // B x d
    const double eps = config.normalize_epsilon;
    EncoderOutputVars out;
    out.tokens = row_l2_normalize(
        add_row(matmul(token_pre, tower.proj_weight), tower.proj_bias), eps);
    out.global = row_l2_normalize(
        add_row(matmul(global_pre, tower.proj_weight), tower.proj_bias), eps);
    out.token_count = config.token_count;
    return out;
}
}  // namespace detail

inline EncoderOutputVars encode_image(const EncoderConfig& config, const ModelVars& vars,
                                      Var images) {
    return detail::encode_tower(config, vars.image, images, config.image_dim, "image");
}

inline EncoderOutputVars encode_text(const EncoderConfig& config, const ModelVars& vars,
                                     Var texts) {
    return detail::encode_tower(config, vars.text, texts, config.text_dim, "text");
}

// Value-level embeddings (no gradient tracking), for evaluation and frozen
// reference encoders.
struct EncoderOutput {
    Matrix global;
    Matrix tokens;
    std::size_t token_count = 0;
};

inline EncoderOutput encode_image_values(const EncoderParams& p, const Matrix& images) {
    Tape tape;
    ModelVars vars = bind_model(tape, p, false);
    EncoderOutputVars out = encode_image(p.config, vars, tape.constant(images));
    return {out.global.value(), out.tokens.value(), out.token_count};
}

inline EncoderOutput encode_text_values(const EncoderParams& p, const Matrix& texts) {
    Tape tape;
    ModelVars vars = bind_model(tape, p, false);
    EncoderOutputVars out = encode_text(p.config, vars, tape.constant(texts));
    return {out.global.value(), out.tokens.value(), out.token_count};
}

}  // namespace medkco
