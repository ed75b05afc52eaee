#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "medkco/baselines.hpp"
#include "medkco/checkpoint.hpp"
#include "medkco/curriculum.hpp"
#include "medkco/dataset.hpp"
#include "medkco/eval.hpp"
#include "medkco/synthgen.hpp"
#include "medkco/trainer.hpp"
#include "medkco/util.hpp"

namespace medkco::cli {

// Exit codes: 0 ok, 2 config, 3 I/O, 4 data, 5 numeric, 1 anything else.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const config_error*>(&e)) return 2;
    if (dynamic_cast<const io_error*>(&e)) return 3;
    if (dynamic_cast<const format_error*>(&e)) return 3;
    if (dynamic_cast<const data_error*>(&e)) return 4;
    if (dynamic_cast<const numeric_error*>(&e)) return 5;
    return 1;
}

// Relative output paths resolve under MEDKCO_OUT_ROOT when it is set.
inline std::filesystem::path resolve_out(const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("MEDKCO_OUT_ROOT")) {
        return std::filesystem::path(root) / p;
    }
    return p;
}

// Loads a JSON config file and applies --set key=value overrides. Values
// parse as JSON when possible and fall back to strings.
inline nlohmann::json load_config(const std::string& path,
                                  const std::vector<std::string>& overrides) {
    nlohmann::json j;
    if (!path.empty()) {
        j = nlohmann::json::parse(read_text_file(path));
        if (!j.is_object()) throw config_error("config file " + path + " must hold an object");
    } else {
        j = nlohmann::json::object();
    }
    for (const std::string& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw config_error("--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string raw = kv.substr(eq + 1);
        nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        j[key] = value;
    }
    return j;
}

inline std::string config_hash(const nlohmann::json& j) { return hex64(fnv1a64(j.dump())); }

namespace detail {

template <typename T>
void get_field(const nlohmann::json& j, const char* key, T& target) {
    if (j.contains(key)) target = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& what) {
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key))
            throw config_error(what + ": unknown key '" + key + "'");
    }
}

}  // namespace detail

// ---- curriculum config --------------------------------------------------

struct CurriculumBuildConfig {
    std::string curriculum = "medkco";  // or "random"
    std::size_t stage_count = 2;        // S
    std::size_t epochs_per_stage = 5;   // T_s
    std::string band_order = "descending";
    std::string partition = "distance";  // or "equal_count"
    std::string reference = "latent";    // or "checkpoint"
    std::string reference_checkpoint;
    std::uint64_t seed = 1;

    static CurriculumBuildConfig from_json(const nlohmann::json& j) {
        detail::reject_unknown(j,
                               {"curriculum", "stage_count", "epochs_per_stage", "band_order",
                                "partition", "reference", "reference_checkpoint", "seed"},
                               "curriculum config");
        CurriculumBuildConfig c;
        detail::get_field(j, "curriculum", c.curriculum);
        detail::get_field(j, "stage_count", c.stage_count);
        detail::get_field(j, "epochs_per_stage", c.epochs_per_stage);
        detail::get_field(j, "band_order", c.band_order);
        detail::get_field(j, "partition", c.partition);
        detail::get_field(j, "reference", c.reference);
        detail::get_field(j, "reference_checkpoint", c.reference_checkpoint);
        detail::get_field(j, "seed", c.seed);
        if (c.curriculum != "medkco" && c.curriculum != "random")
            throw config_error("curriculum must be 'medkco' or 'random', got '" +
                               c.curriculum + "'");
        if (c.stage_count < 1) throw config_error("stage_count must be >= 1");
        if (c.band_order != "descending" && c.band_order != "ascending")
            throw config_error("band_order must be 'descending' or 'ascending'");
        if (c.partition != "distance" && c.partition != "equal_count")
            throw config_error("partition must be 'distance' or 'equal_count'");
        if (c.reference != "latent" && c.reference != "checkpoint")
            throw config_error("reference must be 'latent' or 'checkpoint'");
        if (c.reference == "checkpoint" && c.reference_checkpoint.empty())
            throw config_error("reference=checkpoint requires reference_checkpoint path");
        return c;
    }
};

// ---- train config ---------------------------------------------------------

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(
        j, {"curriculum",    "batch_size",     "framework",     "loss",
            "schedule",      "schedule_constant", "cumulative", "learning_rate",
            "weight_decay",  "beta1",          "beta2",         "adam_epsilon",
            "lr_floor",      "hidden_width",   "embed_dim",     "token_count",
            "hidden_layers", "temperature",    "learnable_temperature",
            "cl_log_gamma",  "cl_log_gamma_increment", "cl_log_delta",
            "cl_logit_gamma", "cl_logit_literal_sign", "seed",
            "checkpoint_every_epochs", "max_steps"},
        "train config");
    TrainConfig c;
    std::string curriculum = "medkco", framework = "clip-global", loss = "asymmetric";
    std::string schedule = "global-linear";
    detail::get_field(j, "curriculum", curriculum);
    detail::get_field(j, "framework", framework);
    detail::get_field(j, "loss", loss);
    detail::get_field(j, "schedule", schedule);
    c.curriculum = curriculum_kind_from_string(curriculum);
    c.framework = framework_from_string(framework);
    c.loss = loss_kind_from_string(loss);
    if (schedule == "global-linear") c.schedule.kind = ScheduleKind::global_linear;
    else if (schedule == "segmented-linear") c.schedule.kind = ScheduleKind::segmented_linear;
    else if (schedule == "constant") c.schedule.kind = ScheduleKind::constant;
    else throw config_error("unknown schedule '" + schedule + "'");
    detail::get_field(j, "schedule_constant", c.schedule.constant_value);
    detail::get_field(j, "batch_size", c.batch_size);
    detail::get_field(j, "cumulative", c.cumulative);
    detail::get_field(j, "learning_rate", c.optimizer.learning_rate);
    detail::get_field(j, "weight_decay", c.optimizer.weight_decay);
    detail::get_field(j, "beta1", c.optimizer.beta1);
    detail::get_field(j, "beta2", c.optimizer.beta2);
    detail::get_field(j, "adam_epsilon", c.optimizer.epsilon);
    detail::get_field(j, "lr_floor", c.lr_floor);
    detail::get_field(j, "hidden_width", c.encoder.hidden_width);
    detail::get_field(j, "embed_dim", c.encoder.embed_dim);
    detail::get_field(j, "token_count", c.encoder.token_count);
    detail::get_field(j, "hidden_layers", c.encoder.hidden_layers);
    detail::get_field(j, "temperature", c.encoder.temperature);
    detail::get_field(j, "learnable_temperature", c.encoder.learnable_temperature);
    detail::get_field(j, "cl_log_gamma", c.cl_log.gamma);
    detail::get_field(j, "cl_log_gamma_increment", c.cl_log.gamma_increment);
    detail::get_field(j, "cl_log_delta", c.cl_log.delta);
    detail::get_field(j, "cl_logit_gamma", c.cl_logit_gamma);
    detail::get_field(j, "cl_logit_literal_sign", c.cl_logit_literal_sign);
    detail::get_field(j, "seed", c.seed);
    detail::get_field(j, "checkpoint_every_epochs", c.checkpoint_every_epochs);
    detail::get_field(j, "max_steps", c.max_steps);
    c.validate();
    return c;
}

// ---- eval config ------------------------------------------------------------

struct EvalConfig {
    std::uint64_t seed = 9001;
    std::vector<std::size_t> retrieval_ks = {1, 5, 10};
    std::vector<std::string> splits = {"eval_id", "eval_ood"};
    std::string framework = "clip-global";

    static EvalConfig from_json(const nlohmann::json& j) {
        detail::reject_unknown(j, {"seed", "retrieval_ks", "splits", "framework"},
                               "eval config");
        EvalConfig c;
        detail::get_field(j, "seed", c.seed);
        detail::get_field(j, "retrieval_ks", c.retrieval_ks);
        detail::get_field(j, "splits", c.splits);
        detail::get_field(j, "framework", c.framework);
        if (c.framework != "clip-global" && c.framework != "filip-finegrained")
            throw config_error("unknown framework '" + c.framework + "'");
        return c;
    }
};

// ---- shared helpers -----------------------------------------------------------

inline KnowledgeDictionary load_dict(const std::filesystem::path& dataset_dir) {
    return KnowledgeDictionary::from_json(
        nlohmann::json::parse(read_text_file(dataset_dir / "dict.json")));
}

inline SensitivityConfig load_sensitivity(const std::filesystem::path& dataset_dir) {
    return SensitivityConfig::from_json(
        nlohmann::json::parse(read_text_file(dataset_dir / "sensitivity.json")));
}

// Frozen reference features. "latent" normalizes the generator's raw image
// vectors and caption bags; "checkpoint" runs a frozen encoder from an
// earlier run.
struct ReferenceEncoder {
    std::optional<EncoderParams> params;  // empty for latent mode
    const Dataset* data = nullptr;

    Matrix encode_texts(const std::vector<std::string>& captions) const {
        Matrix bags = data->captions_to_bags(captions);
        if (params) return encode_text_values(*params, bags).global;
        return row_l2_normalize(bags, 1e-8);
    }

    Matrix encode_images(const std::vector<std::size_t>& rows) const {
        Matrix imgs = data->image_rows(rows);
        if (params) return encode_image_values(*params, imgs).global;
        return row_l2_normalize(imgs, 1e-8);
    }
};

// ---- commands -----------------------------------------------------------------

inline int cmd_gen_synth(const std::string& config_path, const std::string& out_dir,
                         const std::vector<std::string>& overrides) {
    const nlohmann::json config_json = load_config(config_path, overrides);
    const SynthConfig config = SynthConfig::from_json(config_json);
    SynthDataset sd = generate_dataset(config);
    const std::filesystem::path dir = resolve_out(out_dir);
    save_synth_dataset(dir, sd);
    std::cout << "dataset written to " << dir.string() << "\n";
    std::cout << "manifest hash: " << sd.data.manifest.at("hash").get<std::string>() << "\n";
    return 0;
}

inline int cmd_build_curriculum(const std::string& dataset_dir, const std::string& config_path,
                                const std::string& out_path,
                                const std::vector<std::string>& overrides,
                                const std::string& curriculum_flag) {
    nlohmann::json config_json = load_config(config_path, overrides);
    if (!curriculum_flag.empty()) config_json["curriculum"] = curriculum_flag;
    const CurriculumBuildConfig config = CurriculumBuildConfig::from_json(config_json);
    const std::string hash = config_hash(config_json);

    const Dataset data = load_dataset(dataset_dir);
    const auto train_indices = data.split_indices("train");
    if (train_indices.empty()) throw data_error("dataset has no train split");

    CurriculumPlan plan;
    if (config.curriculum == "random") {
        std::vector<std::string> ids;
        for (std::size_t idx : train_indices) ids.push_back(data.samples[idx].id);
        const std::size_t total_epochs = config.epochs_per_stage * (3 + config.stage_count);
        plan = random_shuffle_plan(ids, total_epochs, config.seed, hash);
    } else {
        const KnowledgeDictionary dict = load_dict(dataset_dir);
        const SensitivityConfig sensitivity = load_sensitivity(dataset_dir);

        std::vector<std::pair<std::string, std::string>> labeled;
        std::vector<std::size_t> description_indices;
        for (std::size_t idx : train_indices) {
            const Sample& s = data.samples[idx];
            if (s.level == SupervisionLevel::label) {
                if (!s.label) throw data_error("label-level sample " + s.id + " has no label");
                labeled.emplace_back(s.id, *s.label);
            } else {
                description_indices.push_back(idx);
            }
        }
        const auto label_stages = build_label_level_plan(labeled, sensitivity, data.modality);

        std::vector<std::vector<std::string>> description_stages;
        if (!description_indices.empty()) {
            ReferenceEncoder ref;
            ref.data = &data;
            if (config.reference == "checkpoint")
                ref.params = load_checkpoint(config.reference_checkpoint).params;

            ReferenceFeatures feats;
            std::vector<std::size_t> rows;
            std::vector<std::string> captions;
            for (std::size_t idx : description_indices) {
                feats.sample_ids.push_back(data.samples[idx].id);
                rows.push_back(data.samples[idx].image_row);
                captions.push_back(data.samples[idx].caption);
            }
            feats.image_features = ref.encode_images(rows);
            feats.text_features = ref.encode_texts(captions);

            const std::vector<std::string> class_labels =
                data.manifest.at("train_class_labels").get<std::vector<std::string>>();
            RandomSource rng(config.seed);
            const Matrix label_embeddings = embed_label_list(
                class_labels, dict,
                [&](const std::vector<std::string>& prompts) {
                    return ref.encode_texts(prompts);
                },
                rng);

            const ClusterAssignment assignment =
                cluster_description_samples(feats, label_embeddings);
            std::vector<std::vector<std::size_t>> stages;
            if (config.partition == "equal_count") {
                stages = partition_equal_count(assignment.normalized_distance,
                                               config.stage_count);
            } else {
                stages = partition_stages(assignment.normalized_distance, config.stage_count,
                                          config.band_order == "ascending"
                                              ? BandOrder::ascending
                                              : BandOrder::descending);
            }
            for (const auto& stage : stages) {
                std::vector<std::string> ids;
                for (std::size_t i : stage) ids.push_back(feats.sample_ids[i]);
                description_stages.push_back(std::move(ids));
            }
        }
        // no description data leaves a three-stage label-only plan
        plan = build_plan(label_stages, description_stages, config.epochs_per_stage,
                          config.seed, hash);
    }

    const std::filesystem::path out = resolve_out(out_path);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    plan.save(out);
    std::cout << "plan written to " << out.string() << "\n";
    for (const PlanStage& s : plan.stages) {
        std::cout << "stage " << s.index << " (" << s.level << "): " << s.sample_ids.size()
                  << " samples, " << s.epochs << " epochs\n";
    }
    return 0;
}

inline int cmd_train(const std::string& dataset_dir, const std::string& plan_path,
                     const std::string& config_path, const std::string& out_dir,
                     const std::vector<std::string>& overrides,
                     const std::string& resume_path, int epochs_per_stage = -1) {
    const auto wall_start = std::chrono::steady_clock::now();
    nlohmann::json config_json = load_config(config_path, overrides);
    const TrainConfig config = train_config_from_json(config_json);
    const std::string hash = config_hash(config_json);

    const Dataset data = load_dataset(dataset_dir);
    CurriculumPlan plan = CurriculumPlan::load(plan_path);
    if (epochs_per_stage >= 0) {
        for (PlanStage& stage : plan.stages)
            stage.epochs = static_cast<std::size_t>(epochs_per_stage);
    }
    KnowledgeDictionary dict;
    if (std::filesystem::exists(std::filesystem::path(dataset_dir) / "dict.json")) {
        dict = load_dict(dataset_dir);
    } else {
        dict.templates = {"{}"};
    }

    Trainer trainer(config, plan, data, dict);
    TrainState state = resume_path.empty()
                           ? trainer.init_state()
                           : trainer.state_from_checkpoint(load_checkpoint(resume_path));

    const std::filesystem::path out = resolve_out(out_dir);
    std::filesystem::create_directories(out);

    Trainer::EpochCallback on_epoch;
    if (config.checkpoint_every_epochs > 0) {
        on_epoch = [&](const TrainState& st) {
            if (st.global_epoch % config.checkpoint_every_epochs == 0) {
                char name[64];
                std::snprintf(name, sizeof(name), "checkpoint_epoch_%04llu.bin",
                              static_cast<unsigned long long>(st.global_epoch));
                save_checkpoint(out / name, trainer.checkpoint_of(st));
            }
        };
    }

    TrainResult result = trainer.run_pretraining(std::move(state), on_epoch);
    save_checkpoint(out / "checkpoint_final.bin", trainer.checkpoint_of(result.state));
    write_training_log(out / "train_log.jsonl", result.log);

    const double wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    nlohmann::json summary;
    summary["config_hash"] = hash;
    summary["seed"] = config.seed;
    summary["total_steps"] = result.state.global_step;
    summary["total_epochs"] = result.state.global_epoch;
    summary["planned_steps"] = result.total_steps_planned;
    summary["final_loss"] = result.log.empty() ? 0.0 : result.log.back().loss_total;
    summary["wall_time_seconds"] = wall_seconds;
    write_text_file(out / "run_summary.json", summary.dump(2) + "\n");
    std::cout << "checkpoint written to " << (out / "checkpoint_final.bin").string() << "\n";
    std::cout << "steps: " << result.state.global_step << "\n";
    return 0;
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_dir,
                    const std::string& config_path, const std::string& out_path,
                    const std::vector<std::string>& overrides, const std::string& dump_path,
                    const std::string& metric) {
    const nlohmann::json config_json = load_config(config_path, overrides);
    const EvalConfig config = EvalConfig::from_json(config_json);
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Dataset data = load_dataset(dataset_dir);
    const KnowledgeDictionary dict = load_dict(dataset_dir);

    if (metric != "all" && metric != "classification" && metric != "retrieval")
        throw config_error("--metric must be all, classification or retrieval, got '" +
                           metric + "'");

    nlohmann::json output;
    output["checkpoint"] = checkpoint_path;
    output["acc_definition"] = "per-sample";
    output["reports"] = nlohmann::json::array();

    const bool want_classification = metric == "all" || metric == "classification";
    const bool want_retrieval = metric == "all" || metric == "retrieval";

    for (const std::string& split : config.splits) {
        const auto indices = data.split_indices(split);
        if (indices.empty()) throw data_error("dataset has no samples in split '" + split + "'");

        const std::vector<std::string> class_labels =
            split == "eval_ood"
                ? data.manifest.at("ood_class_labels").get<std::vector<std::string>>()
                : data.manifest.at("train_class_labels").get<std::vector<std::string>>();

        EvalReport report;
        report.split = split;
        report.sample_count = indices.size();
        report.checkpoint_id = checkpoint_path;
        report.seed = config.seed;

        std::vector<std::size_t> rows;
        std::vector<std::string> captions;
        std::vector<std::size_t> true_class;
        std::map<std::string, std::size_t> class_index;
        for (std::size_t c = 0; c < class_labels.size(); ++c) class_index[class_labels[c]] = c;
        for (std::size_t idx : indices) {
            const Sample& s = data.samples[idx];
            rows.push_back(s.image_row);
            captions.push_back(s.caption);
            if (!s.label) throw data_error("eval sample " + s.id + " has no label");
            auto it = class_index.find(*s.label);
            if (it == class_index.end())
                throw data_error("eval sample " + s.id + " has label outside split classes");
            true_class.push_back(it->second);
        }

        const EncoderOutput image_out = encode_image_values(ck.params, data.image_rows(rows));
        const EncoderOutput text_out =
            encode_text_values(ck.params, data.captions_to_bags(captions));

        if (want_classification && class_labels.size() >= 2) {
            const std::vector<std::string> prompts =
                class_prompts(class_labels, dict, config.seed);
            const Matrix class_emb =
                encode_text_values(ck.params, data.captions_to_bags(prompts)).global;
            const ZeroShotResult zs =
                zero_shot_classify(image_out.global, class_emb, true_class);
            report.metrics["acc"] = zs.accuracy;
            report.metrics["auc"] = macro_auc(softmax_scores(zs.scores), true_class);
        }

        if (want_retrieval) {
            Matrix sim_i2t, sim_t2i;
            if (config.framework == "filip-finegrained") {
                sim_i2t = filip_similarity_values(image_out.tokens, image_out.token_count,
                                                  text_out.tokens, text_out.token_count);
                sim_t2i = filip_similarity_values(text_out.tokens, text_out.token_count,
                                                  image_out.tokens, image_out.token_count);
            } else {
                sim_i2t = matmul(image_out.global, transpose(text_out.global));
                sim_t2i = matmul(text_out.global, transpose(image_out.global));
            }
            std::vector<std::size_t> ks;
            for (std::size_t k : config.retrieval_ks)
                if (k <= indices.size()) ks.push_back(k);
            for (const auto& [k, r] : retrieval_recall_at_k(sim_i2t, ks))
                report.metrics["r@" + std::to_string(k)] = r;
            for (const auto& [k, r] : retrieval_recall_at_k(sim_t2i, ks))
                report.metrics["t2i_r@" + std::to_string(k)] = r;
        }

        output["reports"].push_back(report.to_json());

        if (!dump_path.empty() && split == config.splits.front()) {
            dump_embeddings(ck.params, data, indices, resolve_out(dump_path));
        }
    }

    const std::string serialized = output.dump(2) + "\n";
    std::cout << serialized;
    if (!out_path.empty()) {
        const std::filesystem::path out = resolve_out(out_path);
        if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
        write_text_file(out, serialized);
    }
    return 0;
}

// ---- entry point ---------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
    CLI::App app{"contrastive pretraining lab: synthetic data, two-level curricula, "
                 "self-paced losses, zero-shot evaluation"};
    app.require_subcommand(1);

    std::string config_path, out_path, dataset_dir, plan_path, checkpoint_path;
    std::string resume_path, dump_path, curriculum_flag, metric = "all";
    std::vector<std::string> overrides;

    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset directory");
    gen->add_option("--config", config_path, "synth config JSON");
    gen->add_option("--out", out_path, "output dataset directory")->required();
    gen->add_option("--set", overrides, "override config keys (key=value)");

    auto* build = app.add_subcommand("build-curriculum", "build a curriculum plan file");
    build->add_option("--dataset", dataset_dir, "dataset directory")->required();
    build->add_option("--config", config_path, "curriculum config JSON");
    build->add_option("--out", out_path, "output plan path")->required();
    build->add_option("--curriculum", curriculum_flag, "medkco or random");
    build->add_option("--set", overrides, "override config keys (key=value)");

    int epochs_per_stage = -1;
    auto* train = app.add_subcommand("train", "run pretraining from a plan");
    train->add_option("--dataset", dataset_dir, "dataset directory")->required();
    train->add_option("--plan", plan_path, "curriculum plan JSON")->required();
    train->add_option("--config", config_path, "train config JSON");
    train->add_option("--out", out_path, "output run directory")->required();
    train->add_option("--resume", resume_path, "checkpoint to resume from");
    train->add_option("--epochs-per-stage", epochs_per_stage,
                      "override every stage's epoch budget");
    train->add_option("--set", overrides, "override config keys (key=value)");

    auto* eval = app.add_subcommand("eval", "zero-shot evaluation of a checkpoint");
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval->add_option("--dataset", dataset_dir, "dataset directory")->required();
    eval->add_option("--config", config_path, "eval config JSON");
    eval->add_option("--out", out_path, "write the report JSON here too");
    eval->add_option("--dump-embeddings", dump_path, "write an embeddings CSV");
    eval->add_option("--metric", metric, "all | classification | retrieval");
    eval->add_option("--set", overrides, "override config keys (key=value)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_synth(config_path, out_path, overrides);
        if (build->parsed())
            return cmd_build_curriculum(dataset_dir, config_path, out_path, overrides,
                                        curriculum_flag);
        if (train->parsed())
            return cmd_train(dataset_dir, plan_path, config_path, out_path, overrides,
                             resume_path, epochs_per_stage);
        if (eval->parsed())
            return cmd_eval(checkpoint_path, dataset_dir, config_path, out_path, overrides,
                            dump_path, metric);
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 1;
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace medkco::cli
