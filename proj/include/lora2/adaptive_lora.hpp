#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lora2/autodiff.hpp"
#include "lora2/rank_controller.hpp"
#include "lora2/rng.hpp"
#include "lora2/tensor.hpp"

namespace lora2 {

enum class LayerKind : std::uint8_t {
    SelfAttnQ,
    SelfAttnK,
    SelfAttnV,
    SelfAttnO,
    CrossAttnQ,
    CrossAttnK,
    CrossAttnV,
    CrossAttnO,
    Mlp,
};

const char* kind_name(LayerKind kind);
bool is_cross_attention(LayerKind kind);

// Frozen base weight; never receives gradients.
struct FrozenLinear {
    Tensor w_star; // [m x n]
    std::string name;
    LayerKind kind = LayerKind::Mlp;
};

enum class LayerMode : std::uint8_t { Adaptive, FixedRank };

struct ResizeReport {
    int old_d = 0;
    int new_d = 0;
    bool resized() const { return old_d != new_d; }
};

// Standard deviation of the rescaled Kaiming law: sqrt(2)/sqrt(sum f^2(j;nu)).
double rescaled_kaiming_std(double nu, int d);

// One adapted linear: frozen W* plus B Lambda A at capacity r_max with the
// first `d` slots active. Factor buffers, the raw rank rate, and the Adam
// moments all live here; the tape leaves are created once at init and their
// values are mutated in place by the optimizer and by resize events.
struct AdaptiveLoraLayer {
    FrozenLinear base;
    LayerMode mode = LayerMode::Adaptive;
    bool grow_random_b = false; // literal growth: randomize new B columns too

    Var w_star;  // constant leaf [m x n]
    Var b_buf;   // leaf [m x r_max], zero-initialized
    Var a_buf;   // leaf [r_max x n], active rows drawn at init
    Var raw_nu;  // scalar leaf (adaptive mode only updates it)

    RankParameter rank;
    long generation = 0;
    Rng rng{0};

    // Adam moments at full capacity; inactive slots stay zero.
    Tensor b_m, b_v, a_m, a_v;
    double nu_m = 0.0, nu_v = 0.0;

    std::size_t m() const { return base.w_star.rows; }
    std::size_t n() const { return base.w_star.cols; }
    int active_d() const { return rank.d; }
    double nu_value() const;

    // (W* + B Lambda A) x without materializing the dense delta. x is
    // [n x k]; columns are samples. Fixed-rank mode omits Lambda.
    Var adapted_forward(Tape& tape, Var x) const;

    // W* x only; the frozen reference path.
    Var frozen_forward(Tape& tape, Var x) const;

    // Dense B Lambda A as a graph node (differentiable wrt B, A, nu).
    Var delta_weight(Tape& tape) const;

    // Recompute d from the current nu; grow or shrink the active region.
    // Growth redraws new A rows from the rescaled Kaiming law at the new
    // (nu, d) and zeroes new B columns, so outputs are unchanged at the
    // resize instant (grow_random_b switches to the literal randomize-both
    // behavior). Shrink discards slot values. Moments of resized slots are
    // zeroed either way. Must be called between passes, not inside one.
    ResizeReport refresh_rank();

    // Bias-corrected Adam over the active slots and (in adaptive mode) raw nu.
    void apply_adam(double lr, double nu_lr, double beta1, double beta2, double eps,
                    long step);

    void set_raw_nu(double raw);

    std::int64_t active_params() const {
        return static_cast<std::int64_t>(rank.d) * static_cast<std::int64_t>(m() + n()) + 1;
    }
};

AdaptiveLoraLayer init_adapter(Tape& tape, FrozenLinear base, int r_init, double q, int r_max,
                               std::uint64_t seed, LayerMode mode = LayerMode::Adaptive);

// Adam on a contiguous parameter run; shared by the layer and tests.
void adam_update(double* param, const double* grad, double* m, double* v, std::size_t count,
                 double lr, double beta1, double beta2, double eps, long step);

} // namespace lora2
