// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lora2/checkpoint.hpp"
#include "lora2/rank_controller.hpp"
#include "lora2/rng.hpp"
#include "lora2/selfcheck.hpp"
#include "lora2/toy_net.hpp"
#include "lora2/trainer.hpp"

using namespace lora2;

namespace {

// Calibrated on the first default run (seed 42): measured final/initial mse
// ratio 0.264 after 500 steps on the noiseless teacher; frozen with headroom
// for dynamics-preserving refactors.
constexpr double kRecoveryMseRatio = 0.40;

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
    std::printf("[%2d] %-4s %-28s %s (%.1fs)\n", id, pass ? "PASS" : "FAIL", name.c_str(),
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++failures;
}

template <typename Fn>
void criterion(int id, const std::string& name, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
        auto [p, d] = fn();
        pass = p;
        detail = d;
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(id, name, pass, detail, seconds);
}

using Outcome = std::pair<bool, std::string>;

double spearman(const std::vector<int>& a, const std::vector<int>& b) {
    auto ranks_of = [](const std::vector<int>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            return v[x] < v[y];
        });
        std::vector<double> rank(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
            i = j + 1;
        }
        return rank;
    };
    const std::vector<double> ra = ranks_of(a);
    const std::vector<double> rb = ranks_of(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string ranks_str(const std::vector<int>& ranks) {
    std::string s = "[";
    for (std::size_t i = 0; i < ranks.size(); ++i)
        s += (i ? "," : "") + std::to_string(ranks[i]);
    return s + "]";
}

} // namespace

int main() {
    const std::string tmpdir =
        (std::filesystem::temp_directory_path() / "lora2_acceptance").string();
    std::filesystem::create_directories(tmpdir);

    criterion(1, "controller exactness", []() -> Outcome {
        for (int r : {8, 16, 32, 64, 128, 256, 512})
            if (effective_rank(nu_target(0.9, r), 0.9, 512) != r)
                return {false, "failed at r=" + std::to_string(r)};
        return {true, "effective_rank(nu_target(0.9,r),0.9,512)==r for all seven ranks"};
    });

    criterion(2, "telescoping identity", []() -> Outcome {
        const auto c = selfcheck::telescoping(10000, 20240801);
        return {c.pass, c.detail + " over 10000 pairs"};
    });

    criterion(3, "gradient suite", []() -> Outcome {
        const auto layer = selfcheck::layer_loss_fd(50, 20240802);
        const auto entropy = selfcheck::entropy_fd(50, 20240803);
        const auto full = selfcheck::toy_net_nu_fd(5, 20240804);
        const auto ops = selfcheck::ad_core_ops_fd(10, 20240805);
        const bool pass = layer.pass && entropy.pass && full.pass && ops.pass;
        return {pass, "layer(" + layer.detail + ") entropy(" + entropy.detail + ") full_nu(" +
                          full.detail + ") ops(" + ops.detail + ")"};
    });

    criterion(4, "zero-init equivalence", []() -> Outcome {
        const auto c = selfcheck::zero_init_equivalence(100, 20240806);
        return {c.pass, c.detail};
    });

    criterion(5, "growth continuity & truncation", []() -> Outcome {
        const auto grow = selfcheck::growth_continuity(200, 20240807);
        const auto shrink = selfcheck::shrink_truncation_bound(1000, 20240808);
        return {grow.pass && shrink.pass, grow.detail + "; " + shrink.detail};
    });

    // the default run is shared by criteria 6 and 7
    TrainConfig default_config;
    ToyTask default_task; // planted ranks [1,2,4,8,2,1,4,2,6]
    std::optional<TrainResult> baseline;

    criterion(6, "rank heterogeneity & recovery", [&]() -> Outcome {
        baseline = train_run(default_config, default_task);
        const double ratio = baseline->history.final_mse / baseline->history.initial_mse;
        const std::vector<int>& final_ranks = baseline->history.final_ranks;
        const bool mse_ok = ratio <= kRecoveryMseRatio;
        const bool hetero =
            std::adjacent_find(final_ranks.begin(), final_ranks.end(),
                               std::not_equal_to<int>()) != final_ranks.end();
        const double rho = spearman(final_ranks, default_task.planted_ranks);
        const bool pass = mse_ok && hetero && rho > 0.0;
        return {pass, "mse ratio " + fmt(ratio) + " (<= " + fmt(kRecoveryMseRatio) +
                          "), ranks " + ranks_str(final_ranks) + ", spearman " + fmt(rho)};
    });

    criterion(7, "ablation direction", [&]() -> Outcome {
        TrainConfig no_reg = default_config;
        no_reg.lambda_r = 0.0;
        TrainResult reg_off = train_run(no_reg, default_task);

        TrainConfig no_entropy = default_config;
        no_entropy.lambda_e = 0.0;
        TrainResult ent_off = train_run(no_entropy, default_task);

        const bool params_ok =
            reg_off.history.final_params >= baseline->history.final_params;
        const bool entropy_ok =
            ent_off.history.final_entropy >= baseline->history.final_entropy;
        return {params_ok && entropy_ok,
                "params " + std::to_string(reg_off.history.final_params) + " >= " +
                    std::to_string(baseline->history.final_params) + "; entropy " +
                    fmt(ent_off.history.final_entropy) + " >= " +
                    fmt(baseline->history.final_entropy)};
    });

    criterion(8, "collapse reachability", [&]() -> Outcome {
        TrainConfig config = default_config;
        config.lambda_r = 1.0;
        config.r_target = 1;
        config.steps = 200;
        TrainResult result = train_run(config, default_task);
        // near the target rate the rank sits on a limit-cycle edge, so the
        // criterion is the collapse event: every layer reaches rank 1
        std::vector<long> reached_at(result.history.initial_ranks.size(), -1);
        for (const StepRecord& rec : result.history.steps)
            for (std::size_t i = 0; i < rec.ranks.size(); ++i)
                if (rec.ranks[i] == 1 && reached_at[i] < 0) reached_at[i] = rec.step;
        long worst = -1;
        for (long s : reached_at) {
            if (s < 0) return {false, "some layer never reached rank 1 in 200 steps"};
            worst = std::max(worst, s);
        }
        return {true, "all nine layers reach rank 1 (slowest at step " +
                          std::to_string(worst) + ")"};
    });

    criterion(9, "serialization", [&]() -> Outcome {
        // worked example
        AdapterRecord r;
        r.name = "q";
        r.m = 8;
        r.n = 8;
        r.d = 2;
        r.nu = nu_target(0.9, 2);
        r.b_active.assign(16, 0.0F);
        r.a_active.assign(16, 0.5F);
        const std::string worked = tmpdir + "/worked.alr2";
        const bool worked_ok = save_checkpoint({r}, worked) == 165 &&
                               std::filesystem::file_size(worked) == 165;

        // bitwise round-trip at payload precision on a trained model
        TrainConfig config = default_config;
        config.steps = 40;
        TrainResult trained = train_run(config, default_task);
        const std::string path = tmpdir + "/accept.alr2";
        save_checkpoint(trained.model, path);
        ToyNet restored =
            build_toy_net(default_task.spec, config.adapter_settings(), config.seed);
        load_checkpoint(path, restored);
        for (AdaptiveLoraLayer& l : trained.model.layers) {
            Tensor& b = l.b_buf.tape->leaf_value(l.b_buf);
            Tensor& a = l.a_buf.tape->leaf_value(l.a_buf);
            for (double& v : b.data) v = static_cast<double>(static_cast<float>(v));
            for (double& v : a.data) v = static_cast<double>(static_cast<float>(v));
        }
        Rng rng(20240809);
        bool roundtrip_ok = true;
        for (int i = 0; i < 25 && roundtrip_ok; ++i) {
            const Tensor patches =
                rng.gaussian_tensor(default_task.spec.d_model, default_task.spec.patch_slots);
            const Tensor cond =
                rng.gaussian_tensor(default_task.spec.d_cond, default_task.spec.k_tokens);
            const Tensor x = trained.model.eval_output(patches, cond, true);
            const Tensor y = restored.eval_output(patches, cond, true);
            roundtrip_ok = std::memcmp(x.data.data(), y.data.data(),
                                       x.data.size() * sizeof(double)) == 0;
        }

        const auto formula = selfcheck::checkpoint_formula(200, 20240810, tmpdir);
        return {worked_ok && roundtrip_ok && formula.pass,
                std::string("worked=") + (worked_ok ? "ok" : "BAD") + " roundtrip=" +
                    (roundtrip_ok ? "bitwise" : "BAD") + " " + formula.detail};
    });

    criterion(10, "sweep monotonicity", [&]() -> Outcome {
        SweepResult result =
            sweep(default_config, {8, 16, 32, 64, 128, 256, 512}, default_task);
        bool monotone = true;
        for (std::size_t i = 1; i + 1 < result.rows.size(); ++i)
            if (result.rows[i].params <= result.rows[i - 1].params ||
                result.rows[i].bytes <= result.rows[i - 1].bytes)
                monotone = false;
        const SweepRow& adaptive = result.rows.back();
        std::int64_t max_fixed_bytes = 0;
        std::size_t best_fixed = 0;
        for (std::size_t i = 0; i + 1 < result.rows.size(); ++i) {
            max_fixed_bytes = std::max(max_fixed_bytes, result.rows[i].bytes);
            if (result.rows[i].final_mse < result.rows[best_fixed].final_mse) best_fixed = i;
        }
        const bool adaptive_ok = adaptive.bytes < max_fixed_bytes;
        // report-only: whether full-width capacity wins the fixed family
        const std::string capacity_note =
            ", best fixed mse at " + result.rows[best_fixed].label;
        return {monotone && adaptive_ok,
                "fixed bytes strictly increasing=" + std::string(monotone ? "yes" : "NO") +
                    ", adaptive " + std::to_string(adaptive.bytes) + " < max fixed " +
                    std::to_string(max_fixed_bytes) + capacity_note};
    });

    if (failures == 0) {
        std::printf("acceptance: all criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) failed\n", failures);
    return 1;
}
