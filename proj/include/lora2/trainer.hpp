#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lora2/losses.hpp"
#include "lora2/toy_net.hpp"

namespace lora2 {

struct TrainConfig {
    double q = 0.9;
    int r_init = 4;
    int r_target = 1;
    int r_max = 512;
    double lambda_r = 1e-4;
    double lambda_e = 1e-4;
    double lambda_w = 0.0;
    // Step sizes are calibrated to the toy task; a bias-corrected Adam moves a
    // parameter by at most ~lr per step, so these bound how far weights and
    // rank rates can travel within a run.
    double learning_rate = 5e-4;
    double nu_learning_rate = 2.5e-2;
    long steps = 500;
    std::size_t batch_size = 1;
    long rank_refresh_interval = 1;
    LayerMode mode = LayerMode::Adaptive;
    int fixed_rank = 8; // rank used when mode == FixedRank
    std::uint64_t seed = 42;
    bool grow_random_b = false;
    // diagnostics-only prior
    double sigma_theta = 1.0;
    double mu_lambda = 0.0;
    double sigma_lambda = 1.0;

    // fixed_rank only carries meaning in fixed-rank mode
    bool operator==(const TrainConfig& o) const {
        return q == o.q && r_init == o.r_init && r_target == o.r_target && r_max == o.r_max &&
               lambda_r == o.lambda_r && lambda_e == o.lambda_e && lambda_w == o.lambda_w &&
               learning_rate == o.learning_rate && nu_learning_rate == o.nu_learning_rate &&
               steps == o.steps && batch_size == o.batch_size &&
               rank_refresh_interval == o.rank_refresh_interval && mode == o.mode &&
               (mode == LayerMode::Adaptive || fixed_rank == o.fixed_rank) &&
               seed == o.seed && grow_random_b == o.grow_random_b &&
               sigma_theta == o.sigma_theta && mu_lambda == o.mu_lambda &&
               sigma_lambda == o.sigma_lambda;
    }

    void validate() const;
    AdapterSettings adapter_settings() const;
};

struct StepRecord {
    long step = 0;
    LossBreakdown loss;
    std::vector<int> ranks; // after this step's refresh
    std::int64_t active_params = 0;
    std::int64_t checkpoint_bytes = 0;
    double wall_ms = 0.0; // informational; excluded from determinism checks
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<int> initial_ranks;
    std::vector<int> final_ranks;
    double initial_mse = 0.0;
    double final_mse = 0.0;
    double initial_entropy = 0.0;
    double final_entropy = 0.0;
    std::int64_t final_params = 0;
    std::int64_t final_bytes = 0;
    VariationalDiagnostic final_diagnostic;
    double wall_ms_total = 0.0;
};

// Synthetic task: teacher with planted per-layer ranks plus a sampled dataset.
struct ToyTask {
    ToyNetSpec spec;
    std::vector<int> planted_ranks = default_planted_ranks();
    double teacher_scale = 0.5;
    std::size_t n_samples = 256;
    double sigma_obs = 0.0;
};

struct TrainResult {
    TrainHistory history;
    ToyNet model;
};

// One optimization step: forward over the batch, total loss, backward, Adam
// on the active slots (and raw nu), then the scheduled rank refresh. Throws
// TrainAbort with a diagnostic dump on a non-finite loss.
LossBreakdown train_step(ToyNet& model, const Dataset& data,
                         const std::vector<std::size_t>& batch, const TrainConfig& config,
                         long step);

TrainResult train_run(const TrainConfig& config);
TrainResult train_run(const TrainConfig& config, const ToyTask& task);

struct SweepRow {
    std::string label;
    double final_mse = 0.0;
    std::int64_t params = 0;
    std::int64_t bytes = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<TrainResult> runs; // same order as rows
};

// Fixed-rank run per requested rank plus one adaptive run; run seeds are
// config.seed + run index.
SweepResult sweep(const TrainConfig& config, const std::vector<int>& ranks);
SweepResult sweep(const TrainConfig& config, const std::vector<int>& ranks,
                  const ToyTask& task);

} // namespace lora2
