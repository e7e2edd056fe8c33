#include "lora2/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "lora2/checkpoint.hpp"
#include "lora2/error.hpp"
#include "lora2/rank_controller.hpp"

namespace lora2 {

void TrainConfig::validate() const {
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("config: q must lie in (0,1)");
    if (lambda_r < 0.0 || lambda_e < 0.0 || lambda_w < 0.0)
        throw ConfigError("config: loss weights must be >= 0");
    if (r_max < 1) throw ConfigError("config: r_max must be >= 1");
    if (r_init < 1 || r_init > r_max) throw ConfigError("config: r_init must lie in [1, r_max]");
    if (r_target < 1 || r_target > r_max)
        throw ConfigError("config: r_target must lie in [1, r_max]");
    if (mode == LayerMode::FixedRank && (fixed_rank < 1 || fixed_rank > r_max))
        throw ConfigError("config: fixed_rank must lie in [1, r_max]");
    if (!(learning_rate > 0.0) || !(nu_learning_rate > 0.0))
        throw ConfigError("config: learning rates must be > 0");
    if (steps < 0) throw ConfigError("config: steps must be >= 0");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (rank_refresh_interval < 1) throw ConfigError("config: refresh interval must be >= 1");
    if (!(sigma_theta > 0.0) || !(sigma_lambda > 0.0))
        throw ConfigError("config: prior sigmas must be > 0");
}

AdapterSettings TrainConfig::adapter_settings() const {
    AdapterSettings s;
    s.r_init = mode == LayerMode::FixedRank ? fixed_rank : r_init;
    s.q = q;
    s.r_max = r_max;
    s.mode = mode;
    s.grow_random_b = grow_random_b;
    return s;
}

namespace {

constexpr double adam_beta1 = 0.9;
constexpr double adam_beta2 = 0.999;
constexpr double adam_eps = 1e-8;

std::string abort_dump(const ToyNet& model, long step, const LossBreakdown& loss) {
    std::ostringstream os;
    os << "non-finite loss at step " << step << " (mse=" << loss.mse << " reg=" << loss.reg
       << " entropy=" << loss.entropy << " weight=" << loss.weight << ")\n";
    for (const AdaptiveLoraLayer& l : model.layers) {
        const std::size_t d = static_cast<std::size_t>(l.rank.d);
        double bn = 0.0, an = 0.0;
        const Tensor& b = l.b_buf.value();
        const Tensor& a = l.a_buf.value();
        for (std::size_t i = 0; i < b.rows; ++i)
            for (std::size_t j = 0; j < d; ++j) bn += b.at(i, j) * b.at(i, j);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < a.cols; ++j) an += a.at(i, j) * a.at(i, j);
        os << "  " << l.base.name << ": d=" << l.rank.d << " nu=" << l.nu_value()
           << " |B|=" << std::sqrt(bn) << " |A|=" << std::sqrt(an) << "\n";
    }
    return os.str();
}

} // namespace

LossBreakdown train_step(ToyNet& model, const Dataset& data,
                         const std::vector<std::size_t>& batch, const TrainConfig& config,
                         long step) {
    Tape& tape = *model.tape;
    const ToyNetSpec& spec = model.spec;

    std::vector<Var> preds;
    std::vector<Tensor> targets;
    Var stacked_map;
    preds.reserve(batch.size());
    targets.reserve(batch.size());
    for (std::size_t idx : batch) {
        Tensor patches = row_to_matrix(data.inputs, idx, spec.d_model, spec.patch_slots);
        Tensor cond = row_to_matrix(data.conds, idx, spec.d_cond, spec.k_tokens);
        ToyNet::SampleOut out = model.forward_sample(patches, cond, true);
        preds.push_back(out.output);
        targets.push_back(row_to_matrix(data.targets, idx, spec.d_model, spec.patch_slots));
        stacked_map = stacked_map.valid() ? concat_rows(stacked_map, out.cross_map)
                                          : out.cross_map;
    }

    Var mse = mse_loss_batch(tape, preds, targets);
    Var entropy = attention_entropy_loss(tape, {stacked_map});

    Var reg;
    std::vector<double> reg_per_layer;
    const double nu_tgt = nu_target(config.q, config.r_target);
    if (model.mode == LayerMode::Adaptive) {
        std::vector<Var> nus;
        nus.reserve(model.layers.size());
        for (const AdaptiveLoraLayer& l : model.layers) {
            nus.push_back(nu_from_raw(tape, l.raw_nu));
            reg_per_layer.push_back(std::abs(nus.back().value().data[0] - nu_tgt));
        }
        reg = rank_reg_loss(tape, nus, nu_tgt);
    }

    Var weight = weight_prior_loss(tape, model.layers, config.sigma_theta);

    ComposedLoss composed = total_loss(tape, mse, reg, entropy, weight, config.lambda_r,
                                       config.lambda_e, config.lambda_w);
    composed.breakdown.reg_per_layer = std::move(reg_per_layer);

    if (!std::isfinite(composed.breakdown.total)) {
        const std::string dump = abort_dump(model, step, composed.breakdown);
        tape.rewind(model.base_mark);
        tape.zero_grads();
        throw TrainAbort(dump);
    }

    tape.backward(composed.total);
    for (AdaptiveLoraLayer& l : model.layers)
        l.apply_adam(config.learning_rate, config.nu_learning_rate, adam_beta1, adam_beta2,
                     adam_eps, step);
    if (step % config.rank_refresh_interval == 0)
        for (AdaptiveLoraLayer& l : model.layers) l.refresh_rank();

    tape.rewind(model.base_mark);
    tape.zero_grads();
    return composed.breakdown;
}

TrainResult train_run(const TrainConfig& config) { return train_run(config, ToyTask{}); }

TrainResult train_run(const TrainConfig& config, const ToyTask& task) {
    config.validate();

    ToyNet model = build_toy_net(task.spec, config.adapter_settings(), config.seed);
    Teacher teacher =
        plant_teacher(model, task.planted_ranks, task.teacher_scale, config.seed);
    Dataset data = sample_dataset(teacher, task.n_samples, task.sigma_obs, config.seed);

    TrainHistory history;
    history.initial_ranks = model.ranks();
    history.initial_mse = eval_full_mse(model, data);
    history.initial_entropy = eval_mean_entropy(model, data);

    const auto run_start = std::chrono::steady_clock::now();
    std::vector<std::size_t> batch(config.batch_size);
    for (long step = 1; step <= config.steps; ++step) {
        for (std::size_t k = 0; k < config.batch_size; ++k)
            batch[k] = (static_cast<std::size_t>(step - 1) * config.batch_size + k) %
                       data.size();
        const auto t0 = std::chrono::steady_clock::now();
        LossBreakdown loss = train_step(model, data, batch, config, step);
        const auto t1 = std::chrono::steady_clock::now();

        StepRecord rec;
        rec.step = step;
        rec.loss = std::move(loss);
        rec.ranks = model.ranks();
        const ParamCount footprint = active_param_count(model);
        rec.active_params = footprint.params;
        rec.checkpoint_bytes = footprint.bytes;
        rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        history.steps.push_back(std::move(rec));
    }
    history.wall_ms_total =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - run_start)
            .count();

    history.final_ranks = model.ranks();
    history.final_mse = eval_full_mse(model, data);
    history.final_entropy = eval_mean_entropy(model, data);
    const ParamCount footprint = active_param_count(model);
    history.final_params = footprint.params;
    history.final_bytes = footprint.bytes;
    HyperPrior prior{config.mu_lambda, config.sigma_lambda, config.sigma_theta};
    history.final_diagnostic = variational_diagnostic(model.layers, prior);

    return TrainResult{std::move(history), std::move(model)};
}

SweepResult sweep(const TrainConfig& config, const std::vector<int>& ranks) {
    return sweep(config, ranks, ToyTask{});
}

SweepResult sweep(const TrainConfig& config, const std::vector<int>& ranks,
                  const ToyTask& task) {
    for (int r : ranks)
        if (r < 1 || r > config.r_max)
            throw ConfigError("sweep: rank " + std::to_string(r) + " outside [1, r_max]");

    SweepResult result;
    std::uint64_t run_index = 0;
    for (int r : ranks) {
        TrainConfig run_config = config;
        run_config.mode = LayerMode::FixedRank;
        run_config.fixed_rank = r;
        run_config.seed = config.seed + run_index++;
        TrainResult run = train_run(run_config, task);
        result.rows.push_back({"fixed_" + std::to_string(r), run.history.final_mse,
                               run.history.final_params, run.history.final_bytes});
        result.runs.push_back(std::move(run));
    }
    TrainConfig adaptive_config = config;
    adaptive_config.mode = LayerMode::Adaptive;
    adaptive_config.seed = config.seed + run_index;
    TrainResult run = train_run(adaptive_config, task);
    result.rows.push_back({"adaptive", run.history.final_mse, run.history.final_params,
                           run.history.final_bytes});
    result.runs.push_back(std::move(run));
    return result;
}

} // namespace lora2
