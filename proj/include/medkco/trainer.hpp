#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "medkco/baselines.hpp"
#include "medkco/checkpoint.hpp"
#include "medkco/contrast.hpp"
#include "medkco/curriculum.hpp"
#include "medkco/dataset.hpp"
#include "medkco/encoder.hpp"
#include "medkco/errors.hpp"
#include "medkco/optim.hpp"
#include "medkco/rng.hpp"

namespace medkco {

enum class CurriculumKind { medkco, cl_log, cl_logit, random };
enum class Framework { clip_global, filip_finegrained };
enum class LossKind { symmetric, asymmetric };

inline CurriculumKind curriculum_kind_from_string(const std::string& s) {
    if (s == "medkco") return CurriculumKind::medkco;
    if (s == "cl_log") return CurriculumKind::cl_log;
    if (s == "cl_logit") return CurriculumKind::cl_logit;
    if (s == "random") return CurriculumKind::random;
    throw config_error("unknown curriculum '" + s + "'");
}

inline Framework framework_from_string(const std::string& s) {
    if (s == "clip-global") return Framework::clip_global;
    if (s == "filip-finegrained") return Framework::filip_finegrained;
    throw config_error("unknown framework '" + s + "'");
}

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "symmetric") return LossKind::symmetric;
    if (s == "asymmetric") return LossKind::asymmetric;
    throw config_error("unknown loss '" + s + "'");
}

struct TrainConfig {
    CurriculumKind curriculum = CurriculumKind::medkco;
    std::size_t batch_size = 16;
    Framework framework = Framework::clip_global;
    LossKind loss = LossKind::asymmetric;
    WeightSchedule schedule;
    bool cumulative = false;
    AdamWConfig optimizer;
    double lr_floor = 0.0;
    EncoderConfig encoder;  // input dims are filled in from the dataset
    SelfPacedParams cl_log;
    double cl_logit_gamma = 2.0;
    bool cl_logit_literal_sign = false;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every_epochs = 0;  // 0: final checkpoint only
    std::uint64_t max_steps = 0;              // 0: run the full plan

    void validate() const {
        if (batch_size < 2) throw config_error("train: batch_size must be >= 2");
        cl_log.validate();
        if (cl_logit_gamma < 0.0) throw config_error("train: cl_logit gamma must be >= 0");
    }
};

// One JSON object per optimizer step in the training log.
struct TrainLogRecord {
    std::size_t stage = 0;       // 1-based plan position
    std::uint64_t epoch = 0;     // global epoch index
    std::uint64_t step = 0;      // global step index
    double alpha = 1.0;
    double loss_i2t = 0.0;
    double loss_t2i = 0.0;
    double loss_total = 0.0;
    double lr = 0.0;

    nlohmann::json to_json() const {
        return {{"stage", stage},       {"epoch", epoch},
                {"step", step},         {"alpha", alpha},
                {"loss_i2t", loss_i2t}, {"loss_t2i", loss_t2i},
                {"loss_total", loss_total}, {"lr", lr}};
    }
};

// All mutable training state. Every stochastic draw comes from `rng` in a
// fixed order: parameter init, then per epoch the stage shuffle followed by
// label-prompt expansions in batch-then-sample order.
struct TrainState {
    EncoderParams params;
    OptimizerState opt;
    std::uint64_t global_epoch = 0;
    std::uint64_t global_step = 0;
    std::size_t stage_index = 0;
    std::size_t epoch_in_stage = 0;
    RandomSource rng;
};

struct TrainResult {
    TrainState state;
    std::vector<TrainLogRecord> log;
    std::uint64_t total_steps_planned = 0;
};

namespace detail {

inline std::size_t steps_per_epoch(std::size_t stage_size, std::size_t batch_size) {
    const std::size_t full = stage_size / batch_size;
    const std::size_t rem = stage_size % batch_size;
    return full + (rem >= 2 ? 1 : 0);
}

struct StagePlanView {
    std::vector<std::vector<std::size_t>> stage_sample_indices;  // resolved, cumulative-aware
    std::vector<std::size_t> stage_epochs;
    std::uint64_t total_epochs = 0;
    std::uint64_t total_steps = 0;
    std::size_t first_epoch_steps = 0;  // warm-up length
};

inline StagePlanView resolve_plan(const CurriculumPlan& plan, const Dataset& data,
                                  const TrainConfig& config) {
    StagePlanView view;
    std::vector<std::size_t> cumulative;
    for (const PlanStage& stage : plan.stages) {
        std::vector<std::size_t> indices;
        for (const std::string& id : stage.sample_ids) {
            auto it = data.index_by_id.find(id);
            if (it == data.index_by_id.end())
                throw data_error("plan references unknown sample id '" + id + "'");
            indices.push_back(it->second);
        }
        if (config.cumulative) {
            cumulative.insert(cumulative.end(), indices.begin(), indices.end());
            view.stage_sample_indices.push_back(cumulative);
        } else {
            view.stage_sample_indices.push_back(std::move(indices));
        }
        view.stage_epochs.push_back(stage.epochs);
    }
    for (std::size_t s = 0; s < view.stage_sample_indices.size(); ++s) {
        const std::size_t per_epoch =
            steps_per_epoch(view.stage_sample_indices[s].size(), config.batch_size);
        view.total_epochs += view.stage_epochs[s];
        view.total_steps += view.stage_epochs[s] * per_epoch;
        if (view.first_epoch_steps == 0 && per_epoch > 0 && view.stage_epochs[s] > 0)
            view.first_epoch_steps = per_epoch;
    }
    return view;
}

}  // namespace detail

// Runs forward/backward/update for one batch and returns the telemetry
// record. Throws numeric_error naming the batch ids if the loss is not
// finite.
class Trainer {
public:
    Trainer(const TrainConfig& config, const CurriculumPlan& plan, const Dataset& data,
            const KnowledgeDictionary& dict)
        : config_(config), plan_(plan), data_(data), dict_(dict) {
        config_.validate();
        plan_.validate_disjoint();
        view_ = detail::resolve_plan(plan_, data_, config_);
        schedule_.base_rate = config_.optimizer.learning_rate;
        schedule_.warmup_steps = view_.first_epoch_steps;
        // a step-capped run anneals over the horizon it will actually train
        schedule_.total_steps = config_.max_steps != 0
                                    ? std::min<std::uint64_t>(view_.total_steps, config_.max_steps)
                                    : view_.total_steps;
        schedule_.floor_rate = config_.lr_floor;
    }

    // Fresh start: draws initialization from the seeded source.
    TrainState init_state() const {
        TrainState state;
        state.rng = RandomSource(config_.seed);
        EncoderConfig enc = config_.encoder;
        enc.image_dim = data_.images.cols;
        enc.text_dim = data_.vocab.size();
        state.params = init_encoder_params(enc, state.rng);
        state.opt.config = config_.optimizer;
        auto tensors = named_tensors(state.params);
        state.opt.init_like(tensors);
        return state;
    }

    TrainState state_from_checkpoint(const Checkpoint& ck) const {
        TrainState state;
        state.params = ck.params;
        state.opt = ck.opt;
        state.global_epoch = ck.trainer.global_epoch;
        state.global_step = ck.trainer.global_step;
        state.stage_index = ck.trainer.stage_index;
        state.epoch_in_stage = ck.trainer.epoch_in_stage;
        state.rng.restore(ck.trainer.rng_seed, ck.trainer.rng_state);
        return state;
    }

    Checkpoint checkpoint_of(const TrainState& state) const {
        Checkpoint ck;
        ck.params = state.params;
        ck.opt = state.opt;
        ck.trainer.global_epoch = state.global_epoch;
        ck.trainer.global_step = state.global_step;
        ck.trainer.stage_index = state.stage_index;
        ck.trainer.epoch_in_stage = state.epoch_in_stage;
        ck.trainer.rng_seed = state.rng.seed();
        ck.trainer.rng_state = state.rng.state();
        return ck;
    }

    std::uint64_t total_steps_planned() const { return view_.total_steps; }
    std::uint64_t total_epochs_planned() const { return view_.total_epochs; }
    const LrSchedule& schedule() const { return schedule_; }

    // One full pass over a stage's samples; increments the epoch counter once.
    void train_epoch(TrainState& state, std::size_t stage, std::vector<TrainLogRecord>& log) {
        const std::vector<std::size_t>& stage_samples = view_.stage_sample_indices[stage];
        if (stage_samples.empty()) throw contract_error("train_epoch: stage is empty");
        run_epoch(state, stage, log);
    }

    // Executes the plan from wherever `state` points. Optional epoch callback
    // fires after each completed epoch (for checkpoint cadence).
    using EpochCallback = std::function<void(const TrainState&)>;

    TrainResult run_pretraining(TrainState state, const EpochCallback& on_epoch = {}) {
        TrainResult result;
        result.total_steps_planned = view_.total_steps;
        for (std::size_t s = state.stage_index; s < view_.stage_sample_indices.size(); ++s) {
            state.stage_index = s;
            for (std::size_t e = state.epoch_in_stage; e < view_.stage_epochs[s]; ++e) {
                if (config_.max_steps != 0 && state.global_step >= config_.max_steps) {
                    result.state = std::move(state);
                    return result;
                }
                run_epoch(state, s, result.log);
                state.epoch_in_stage = e + 1;
                if (on_epoch) on_epoch(state);
            }
            state.epoch_in_stage = 0;
        }
        state.stage_index = view_.stage_sample_indices.size();
        result.state = std::move(state);
        return result;
    }

private:
    void run_epoch(TrainState& state, std::size_t stage, std::vector<TrainLogRecord>& log) {
        std::vector<std::size_t> order = view_.stage_sample_indices[stage];
        state.rng.shuffle(order);

        const double alpha = current_alpha(state, stage);
        const double gamma_log =
            config_.cl_log.gamma +
            config_.cl_log.gamma_increment * static_cast<double>(state.global_epoch);

        std::size_t cursor = 0;
        while (cursor < order.size()) {
            if (config_.max_steps != 0 && state.global_step >= config_.max_steps) break;
            const std::size_t remaining = order.size() - cursor;
            const std::size_t take = std::min(config_.batch_size, remaining);
            if (take < 2) break;  // InfoNCE is degenerate below two samples
            std::vector<std::size_t> batch(order.begin() + cursor,
                                           order.begin() + cursor + take);
            cursor += take;
            run_step(state, stage, alpha, gamma_log, batch, log);
        }
        state.global_epoch += 1;
    }

    double current_alpha(const TrainState& state, std::size_t stage) const {
        if (config_.loss == LossKind::symmetric ||
            config_.curriculum == CurriculumKind::cl_log ||
            config_.curriculum == CurriculumKind::cl_logit) {
            return 1.0;
        }
        if (config_.schedule.kind == ScheduleKind::segmented_linear) {
            return alpha_schedule(config_.schedule, state.epoch_in_stage,
                                  view_.stage_epochs[stage]);
        }
        return alpha_schedule(config_.schedule, state.global_epoch, view_.total_epochs);
    }

    void run_step(TrainState& state, std::size_t stage, double alpha, double gamma_log,
                  const std::vector<std::size_t>& batch, std::vector<TrainLogRecord>& log) {
        // Assemble the batch inputs; label-level captions are expanded fresh
        // from the knowledge dictionary each time they are seen.
        std::vector<std::size_t> rows;
        std::vector<std::string> captions;
        for (std::size_t idx : batch) {
            const Sample& s = data_.samples[idx];
            rows.push_back(s.image_row);
            if (s.level == SupervisionLevel::label) {
                captions.push_back(expand_label_prompt(*s.label, dict_, state.rng));
            } else {
                captions.push_back(s.caption);
            }
        }
        const Matrix images = data_.image_rows(rows);
        const Matrix texts = data_.captions_to_bags(captions);

        Tape tape;
        ModelVars vars = bind_model(tape, state.params, true);
        EncoderOutputVars image_out = encode_image(state.params.config, vars,
                                                   tape.constant(images));
        EncoderOutputVars text_out = encode_text(state.params.config, vars,
                                                 tape.constant(texts));

        std::pair<Var, Var> sims =
            config_.framework == Framework::clip_global
                ? similarity_matrices(image_out.global, text_out.global)
                : filip_similarity(image_out.tokens, image_out.token_count,
                                   text_out.tokens, text_out.token_count);

        Var li2t{}, lt2i{};
        if (state.params.config.learnable_temperature) {
            Var inv_sigma = exp(scale(vars.log_temperature, -1.0));
            li2t = info_nce(SimDirection::i2t, sims.first, inv_sigma);
            lt2i = info_nce(SimDirection::t2i, sims.second, inv_sigma);
        } else {
            const double sigma = state.params.temperature();
            li2t = info_nce(SimDirection::i2t, sims.first, sigma);
            lt2i = info_nce(SimDirection::t2i, sims.second, sigma);
        }

        LossNodes nodes = asymmetric_loss(li2t, lt2i, alpha);
        Var objective = nodes.total;
        if (config_.curriculum == CurriculumKind::cl_log) {
            objective = cl_log_loss(nodes.per_sample,
                                    {gamma_log, config_.cl_log.gamma_increment,
                                     config_.cl_log.delta});
        } else if (config_.curriculum == CurriculumKind::cl_logit) {
            const double sigma = state.params.temperature();
            Var weighted_i2t = cl_logit_loss(li2t,
                                             positive_pair_probs(sims.first.value(), sigma),
                                             config_.cl_logit_gamma,
                                             config_.cl_logit_literal_sign);
            Var weighted_t2i = cl_logit_loss(lt2i,
                                             positive_pair_probs(sims.second.value(), sigma),
                                             config_.cl_logit_gamma,
                                             config_.cl_logit_literal_sign);
            objective = scale(add(weighted_i2t, weighted_t2i), 0.5);
        }

        const LossBreakdown bd = breakdown(nodes);
        const double objective_value = objective.value().at(0, 0);
        if (!std::isfinite(objective_value)) {
            std::string ids;
            for (std::size_t idx : batch) {
                if (!ids.empty()) ids += ", ";
                ids += data_.samples[idx].id;
            }
            throw numeric_error("non-finite loss at step " +
                                std::to_string(state.global_step) + "; batch ids: " + ids);
        }

        tape.backward(objective);
        auto tensors = named_tensors(state.params);
        std::vector<Matrix> grads;
        grads.reserve(tensors.size());
        collect_gradients(tape, vars, state.params, grads);

        const double lr = lr_at(schedule_, state.global_step);
        adamw_step(tensors, grads, state.opt, lr);

        TrainLogRecord rec;
        rec.stage = stage + 1;
        rec.epoch = state.global_epoch;
        rec.step = state.global_step;
        rec.alpha = bd.alpha;
        rec.loss_i2t = bd.loss_i2t;
        rec.loss_t2i = bd.loss_t2i;
        rec.loss_total = objective_value;
        rec.lr = lr;
        log.push_back(rec);
        state.global_step += 1;
    }

    // Gradients in the canonical named-tensor order: image layers, text
    // layers, image proj, text proj, optional log-temperature.
    static void collect_gradients(const Tape& tape, const ModelVars& vars,
                                  const EncoderParams& params, std::vector<Matrix>& grads) {
        for (const auto& [w, b] : vars.image.layers) {
            grads.push_back(tape.grad(w));
            grads.push_back(tape.grad(b));
        }
        for (const auto& [w, b] : vars.text.layers) {
            grads.push_back(tape.grad(w));
            grads.push_back(tape.grad(b));
        }
        grads.push_back(tape.grad(vars.image.proj_weight));
        grads.push_back(tape.grad(vars.image.proj_bias));
        grads.push_back(tape.grad(vars.text.proj_weight));
        grads.push_back(tape.grad(vars.text.proj_bias));
        if (params.config.learnable_temperature)
            grads.push_back(tape.grad(vars.log_temperature));
    }

    TrainConfig config_;
    CurriculumPlan plan_;
    const Dataset& data_;
    KnowledgeDictionary dict_;
    detail::StagePlanView view_;
    LrSchedule schedule_;
};

// Writes one JSON line per step.
inline void write_training_log(const std::filesystem::path& path,
                               const std::vector<TrainLogRecord>& log) {
    std::string lines;
    for (const TrainLogRecord& rec : log) lines += rec.to_json().dump() + "\n";
    write_text_file(path, lines);
}

}  // namespace medkco
