#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "lora2/adaptive_lora.hpp"
#include "lora2/autodiff.hpp"
#include "lora2/rng.hpp"

namespace lora2 {

// Small conditional network: self-attention over the patch slots, one
// cross-attention block against the condition tokens, one MLP. Nine linears,
// one adapter each; exactly one cross-attention probability map.
struct ToyNetSpec {
    std::size_t d_model = 32;
    std::size_t k_tokens = 4;
    std::size_t d_cond = 32;
    std::size_t patch_slots = 4; // length-1 input extended to this many slots

    std::size_t input_width() const { return patch_slots * d_model; }
    std::size_t cond_width() const { return k_tokens * d_cond; }

    static constexpr std::size_t layer_count = 9;
    static constexpr std::array<LayerKind, layer_count> kinds = {
        LayerKind::SelfAttnQ, LayerKind::SelfAttnK, LayerKind::SelfAttnV,
        LayerKind::SelfAttnO, LayerKind::CrossAttnQ, LayerKind::CrossAttnK,
        LayerKind::CrossAttnV, LayerKind::CrossAttnO, LayerKind::Mlp,
    };

    // [m, n] of layer i
    std::pair<std::size_t, std::size_t> layer_shape(std::size_t i) const {
        const LayerKind k = kinds[i];
        if (k == LayerKind::CrossAttnK || k == LayerKind::CrossAttnV)
            return {d_model, d_cond};
        return {d_model, d_model};
    }
};

struct AdapterSettings {
    int r_init = 8;
    double q = 0.9;
    int r_max = 512;
    LayerMode mode = LayerMode::Adaptive;
    bool grow_random_b = false;
};

// Shared forward pass; `apply(i, x)` realizes linear i on input x so the
// student (adapted), the frozen base, and the teacher all run the identical
// arithmetic sequence.
struct ToyForwardOut {
    Var output;    // [d_model x patch_slots]
    Var cross_map; // [patch_slots x k_tokens], row-stochastic
};

template <typename ApplyFn>
ToyForwardOut toy_forward(const ToyNetSpec& spec, ApplyFn&& apply, Var patches, Var cond) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(spec.d_model));

    Var q = apply(0, patches);
    Var k = apply(1, patches);
    Var v = apply(2, patches);
    Var self_map = softmax_rows(scale(matmul(transpose(q), k), inv_sqrt_d));
    Var s1 = add(patches, apply(3, matmul(v, transpose(self_map))));

    Var cq = apply(4, s1);
    Var ck = apply(5, cond);
    Var cv = apply(6, cond);
    Var cross_map = softmax_rows(scale(matmul(transpose(cq), ck), inv_sqrt_d));
    Var s2 = add(s1, apply(7, matmul(cv, transpose(cross_map))));

    Var s3 = add(s2, apply(8, s2));
    return {s3, cross_map};
}

// Dataset rows store samples token-major: entries [j*d .. j*d+d) are token j.
Tensor row_to_matrix(const Tensor& rows, std::size_t row, std::size_t d,
                     std::size_t tokens);
void matrix_to_row(const Tensor& mat, Tensor& rows, std::size_t row);

class ToyNet {
public:
    ToyNetSpec spec;
    LayerMode mode = LayerMode::Adaptive;
    std::unique_ptr<Tape> tape;
    std::vector<AdaptiveLoraLayer> layers;
    std::size_t base_mark = 0;

    struct SampleOut {
        Var output;
        Var cross_map;
    };

    // patches [d_model x slots], cond [d_cond x k_tokens]
    SampleOut forward_sample(const Tensor& patches, const Tensor& cond, bool use_adapters);

    // Value-only forward; rewinds the tape back afterwards.
    Tensor eval_output(const Tensor& patches, const Tensor& cond, bool use_adapters);

    std::vector<int> ranks() const;
    std::int64_t active_params() const;
};

ToyNet build_toy_net(const ToyNetSpec& spec, const AdapterSettings& settings,
                     std::uint64_t seed);

// Base weights plus planted low-rank deltas of exactly the declared ranks
// (orthonormalized factor columns/rows, so rank(delta) = r* by construction).
struct Teacher {
    ToyNetSpec spec;
    std::vector<Tensor> base_weights;
    std::vector<Tensor> weights; // base + scale * B* A*
    std::vector<int> planted_ranks;
    double scale = 0.5;

    Tensor forward(const Tensor& patches, const Tensor& cond) const;
    Tensor delta(std::size_t layer) const; // planted low-rank delta of one layer
};

Teacher plant_teacher(const ToyNet& base_model, const std::vector<int>& ranks, double scale,
                      std::uint64_t seed);

const std::vector<int>& default_planted_ranks();

struct Dataset {
    Tensor inputs;  // [n x input_width]
    Tensor conds;   // [n x cond_width]
    Tensor targets; // [n x input_width]
    double sigma_obs = 0.0;
    std::uint64_t seed = 0;

    std::size_t size() const { return inputs.rows; }
};

Dataset sample_dataset(const Teacher& teacher, std::size_t n, double sigma_obs,
                       std::uint64_t seed);

// Full-dataset mean squared error of the current model (adapters on).
double eval_full_mse(ToyNet& model, const Dataset& data);

// Mean cross-attention entropy over the dataset (nats).
double eval_mean_entropy(ToyNet& model, const Dataset& data);

} // namespace lora2
