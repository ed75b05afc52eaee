#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "medkco/encoder.hpp"
#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"
#include "medkco/optim.hpp"

namespace medkco {

namespace ckpt {

constexpr char kMagic[8] = {'M', 'K', 'C', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(const std::filesystem::path& path)
        : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw io_error("cannot write checkpoint " + path.string());
    }

    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        raw(b, 4);
    }
    void u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        raw(b, 8);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        u64(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void matrix(const Matrix& m) {
        u64(m.rows);
        u64(m.cols);
        for (double v : m.data) f64(v);
    }
    void raw(const void* data, std::size_t len) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        if (!out_) throw io_error("checkpoint write failed");
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw io_error("cannot open checkpoint " + path.string());
    }

    std::uint8_t u8() {
        std::uint8_t v;
        raw(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        unsigned char b[4];
        raw(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        unsigned char b[8];
        raw(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str() {
        const std::uint32_t len = u32();
        std::string s(len, '\0');
        raw(s.data(), len);
        return s;
    }
    Matrix matrix() {
        const std::uint64_t rows = u64();
        const std::uint64_t cols = u64();
        Matrix m(rows, cols);
        for (double& v : m.data) v = f64();
        return m;
    }
    void raw(void* data, std::size_t len) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
        if (in_.gcount() != static_cast<std::streamsize>(len))
            throw format_error("checkpoint truncated");
    }

private:
    std::ifstream in_;
};

}  // namespace ckpt

// Trainer position and rng stream captured at an epoch boundary; resuming
// from it continues the exact uninterrupted draw sequence.
struct TrainerCheckpointState {
    std::uint64_t global_epoch = 0;
    std::uint64_t global_step = 0;
    std::uint64_t stage_index = 0;     // next stage to run (0-based)
    std::uint64_t epoch_in_stage = 0;  // next epoch within that stage
    std::uint64_t rng_seed = 0;
    std::array<std::uint64_t, 4> rng_state{};
};

struct Checkpoint {
    EncoderParams params;
    OptimizerState opt;
    TrainerCheckpointState trainer;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    ckpt::Writer w(path);
    w.raw(ckpt::kMagic, sizeof(ckpt::kMagic));
    w.u32(ckpt::kVersion);

    const EncoderConfig& c = ck.params.config;
    w.u64(c.image_dim);
    w.u64(c.text_dim);
    w.u64(c.hidden_width);
    w.u64(c.embed_dim);
    w.u64(c.token_count);
    w.u64(c.hidden_layers);
    w.f64(c.temperature);
    w.u8(c.learnable_temperature ? 1 : 0);
    w.f64(c.normalize_epsilon);

    const auto tensors = named_tensors(ck.params);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, mat] : tensors) {
        w.str(name);
        w.matrix(*mat);
    }

    w.f64(ck.opt.config.learning_rate);
    w.f64(ck.opt.config.weight_decay);
    w.f64(ck.opt.config.beta1);
    w.f64(ck.opt.config.beta2);
    w.f64(ck.opt.config.epsilon);
    w.u64(ck.opt.step);
    w.u32(static_cast<std::uint32_t>(ck.opt.m.size()));
    for (const Matrix& m : ck.opt.m) w.matrix(m);
    for (const Matrix& v : ck.opt.v) w.matrix(v);

    w.u64(ck.trainer.global_epoch);
    w.u64(ck.trainer.global_step);
    w.u64(ck.trainer.stage_index);
    w.u64(ck.trainer.epoch_in_stage);
    w.u64(ck.trainer.rng_seed);
    for (std::uint64_t s : ck.trainer.rng_state) w.u64(s);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    ckpt::Reader r(path);
    char magic[8];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, ckpt::kMagic, sizeof(magic)) != 0)
        throw format_error("checkpoint magic mismatch in " + path.string());
    const std::uint32_t version = r.u32();
    if (version != ckpt::kVersion)
        throw format_error("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    EncoderConfig c;
    c.image_dim = r.u64();
    c.text_dim = r.u64();
    c.hidden_width = r.u64();
    c.embed_dim = r.u64();
    c.token_count = r.u64();
    c.hidden_layers = r.u64();
    c.temperature = r.f64();
    c.learnable_temperature = r.u8() != 0;
    c.normalize_epsilon = r.f64();
    c.validate();

    // Rebuild the parameter skeleton, then overwrite tensors by name in the
    // canonical order.
    ck.params.config = c;
    ck.params.image_layers.resize(c.hidden_layers);
    ck.params.text_layers.resize(c.hidden_layers);
    ck.params.log_temperature = Matrix(1, 1);

    const std::uint32_t tensor_count = r.u32();
    auto tensors = named_tensors(ck.params);
    if (tensor_count != tensors.size())
        throw format_error("checkpoint tensor count " + std::to_string(tensor_count) +
                           " does not match config (" + std::to_string(tensors.size()) + ")");
    for (auto& [name, mat] : tensors) {
        const std::string stored = r.str();
        if (stored != name)
            throw format_error("checkpoint tensor '" + stored + "' where '" + name +
                               "' expected");
        *mat = r.matrix();
    }

    ck.opt.config.learning_rate = r.f64();
    ck.opt.config.weight_decay = r.f64();
    ck.opt.config.beta1 = r.f64();
    ck.opt.config.beta2 = r.f64();
    ck.opt.config.epsilon = r.f64();
    ck.opt.step = r.u64();
    const std::uint32_t moment_count = r.u32();
    if (moment_count != tensors.size())
        throw format_error("checkpoint moment count mismatch");
    ck.opt.m.resize(moment_count);
    ck.opt.v.resize(moment_count);
    for (Matrix& m : ck.opt.m) m = r.matrix();
    for (Matrix& v : ck.opt.v) v = r.matrix();

    ck.trainer.global_epoch = r.u64();
    ck.trainer.global_step = r.u64();
    ck.trainer.stage_index = r.u64();
    ck.trainer.epoch_in_stage = r.u64();
    ck.trainer.rng_seed = r.u64();
    for (std::uint64_t& s : ck.trainer.rng_state) s = r.u64();
    return ck;
}

}  // namespace medkco
