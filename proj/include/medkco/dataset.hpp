#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"
#include "medkco/util.hpp"

namespace medkco {

enum class SupervisionLevel { label, description };

inline std::string to_string(SupervisionLevel level) {
    return level == SupervisionLevel::label ? "label" : "description";
}

inline SupervisionLevel supervision_from_string(const std::string& s) {
    if (s == "label") return SupervisionLevel::label;
    if (s == "description") return SupervisionLevel::description;
    throw data_error("unknown supervision level '" + s + "'");
}

// One image/text pair. The latent_* fields are generator ground truth used
// only by tests and diagnostics, never by training.
struct Sample {
    std::string id;
    std::optional<std::string> label;
    std::string caption;
    SupervisionLevel level = SupervisionLevel::description;
    std::string split;  // train | eval_id | eval_ood
    std::size_t image_row = 0;
    std::string latent_class;
    std::optional<std::string> latent_comorbid;
    double latent_representativeness = 1.0;
};

struct Dataset {
    std::string modality;
    std::vector<Sample> samples;
    Matrix images;  // one row per image_row index
    std::vector<std::string> vocab;
    nlohmann::json manifest;

    std::unordered_map<std::string, std::size_t> index_by_id;
    std::unordered_map<std::string, std::size_t> vocab_index;

    void rebuild_indexes() {
        index_by_id.clear();
        for (std::size_t i = 0; i < samples.size(); ++i) index_by_id[samples[i].id] = i;
        vocab_index.clear();
        for (std::size_t i = 0; i < vocab.size(); ++i) vocab_index[vocab[i]] = i;
    }

    const Sample& sample_by_id(const std::string& id) const {
        auto it = index_by_id.find(id);
        if (it == index_by_id.end()) throw data_error("unknown sample id '" + id + "'");
        return samples[it->second];
    }

    Matrix image_rows(const std::vector<std::size_t>& rows) const {
        Matrix out(rows.size(), images.cols);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < images.cols; ++j)
                out.at(i, j) = images.at(rows[i], j);
        return out;
    }

    // Bag-of-token count vector over the dataset vocabulary. Tokens outside
    // the vocabulary are dropped.
    Matrix caption_to_bag(const std::string& caption) const {
        Matrix bag(1, vocab.size());
        for (const std::string& tok : split_tokens(caption)) {
            auto it = vocab_index.find(tok);
            if (it != vocab_index.end()) bag.at(0, it->second) += 1.0;
        }
        return bag;
    }

    Matrix captions_to_bags(const std::vector<std::string>& captions) const {
        Matrix out(captions.size(), vocab.size());
        for (std::size_t i = 0; i < captions.size(); ++i) {
            const Matrix row = caption_to_bag(captions[i]);
            for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) = row.at(0, j);
        }
        return out;
    }

    std::vector<std::size_t> split_indices(const std::string& split) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].split == split) out.push_back(i);
        return out;
    }
};

namespace detail {

inline nlohmann::json sample_to_json(const Sample& s) {
    nlohmann::json j;
    j["id"] = s.id;
    j["label"] = s.label ? nlohmann::json(*s.label) : nlohmann::json(nullptr);
    j["caption"] = s.caption;
    j["level"] = to_string(s.level);
    j["split"] = s.split;
    j["image_row"] = s.image_row;
    j["latent"] = {
        {"class", s.latent_class},
        {"comorbid", s.latent_comorbid ? nlohmann::json(*s.latent_comorbid)
                                       : nlohmann::json(nullptr)},
        {"representativeness", s.latent_representativeness},
    };
    return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
    Sample s;
    s.id = j.at("id").get<std::string>();
    if (!j.at("label").is_null()) s.label = j.at("label").get<std::string>();
    s.caption = j.at("caption").get<std::string>();
    s.level = supervision_from_string(j.at("level").get<std::string>());
    s.split = j.at("split").get<std::string>();
    s.image_row = j.at("image_row").get<std::size_t>();
    const auto& latent = j.at("latent");
    s.latent_class = latent.at("class").get<std::string>();
    if (!latent.at("comorbid").is_null())
        s.latent_comorbid = latent.at("comorbid").get<std::string>();
    s.latent_representativeness = latent.at("representativeness").get<double>();
    return s;
}

inline void write_le_doubles(std::ofstream& out, const std::vector<double>& values) {
    for (double v : values) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        unsigned char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
        out.write(reinterpret_cast<const char*>(bytes), 8);
    }
}

inline std::vector<double> read_le_doubles(std::ifstream& in, std::size_t count) {
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        unsigned char bytes[8];
        in.read(reinterpret_cast<char*>(bytes), 8);
        if (!in) throw io_error("truncated image block");
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        values[i] = v;
    }
    return values;
}

}  // namespace detail

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    {
        std::string lines;
        for (const Sample& s : ds.samples) lines += detail::sample_to_json(s).dump() + "\n";
        write_text_file(dir / "samples.jsonl", lines);
    }
    {
        std::ofstream out(dir / "images.f64", std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot write " + (dir / "images.f64").string());
        detail::write_le_doubles(out, ds.images.data);
    }
    write_text_file(dir / "vocab.json", nlohmann::json({{"tokens", ds.vocab}}).dump(2) + "\n");
    write_text_file(dir / "manifest.json", ds.manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    ds.modality = ds.manifest.at("modality").get<std::string>();
    const auto image_dim = ds.manifest.at("image_dim").get<std::size_t>();
    const auto image_count = ds.manifest.at("image_count").get<std::size_t>();

    const std::string jsonl = read_text_file(dir / "samples.jsonl");
    std::istringstream lines(jsonl);
    std::string line;
    std::set<std::string> ids;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        Sample s = detail::sample_from_json(nlohmann::json::parse(line));
        if (!ids.insert(s.id).second)
            throw data_error("duplicate sample id '" + s.id + "' in " + dir.string());
        ds.samples.push_back(std::move(s));
    }

    {
        std::ifstream in(dir / "images.f64", std::ios::binary);
        if (!in) throw io_error("cannot open " + (dir / "images.f64").string());
        ds.images = Matrix(image_count, image_dim,
                           detail::read_le_doubles(in, image_count * image_dim));
    }

    const auto vocab_json = nlohmann::json::parse(read_text_file(dir / "vocab.json"));
    ds.vocab = vocab_json.at("tokens").get<std::vector<std::string>>();

    for (const Sample& s : ds.samples) {
        if (s.image_row >= ds.images.rows)
            throw data_error("sample " + s.id + " references image row beyond block");
    }
    ds.rebuild_indexes();
    return ds;
}

}  // namespace medkco
