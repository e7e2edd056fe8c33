#include "lora2/adaptive_lora.hpp"

#include <cmath>

#include "lora2/error.hpp"

namespace lora2 {

const char* kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::SelfAttnQ: return "self_attn_q";
        case LayerKind::SelfAttnK: return "self_attn_k";
        case LayerKind::SelfAttnV: return "self_attn_v";
        case LayerKind::SelfAttnO: return "self_attn_o";
        case LayerKind::CrossAttnQ: return "cross_attn_q";
        case LayerKind::CrossAttnK: return "cross_attn_k";
        case LayerKind::CrossAttnV: return "cross_attn_v";
        case LayerKind::CrossAttnO: return "cross_attn_o";
        case LayerKind::Mlp: return "mlp";
    }
    return "unknown";
}

bool is_cross_attention(LayerKind kind) {
    return kind == LayerKind::CrossAttnQ || kind == LayerKind::CrossAttnK ||
           kind == LayerKind::CrossAttnV || kind == LayerKind::CrossAttnO;
}

double rescaled_kaiming_std(double nu, int d) {
    double sum_sq = 0.0;
    for (int j = 1; j <= d; ++j) {
        const double f = pmf(j, nu);
        sum_sq += f * f;
    }
    return std::sqrt(2.0) / std::sqrt(sum_sq);
}

double AdaptiveLoraLayer::nu_value() const { return rank.nu(); }

AdaptiveLoraLayer init_adapter(Tape& tape, FrozenLinear base, int r_init, double q, int r_max,
                               std::uint64_t seed, LayerMode mode) {
    const std::size_t m = base.w_star.rows;
    const std::size_t n = base.w_star.cols;
    if (m == 0 || n == 0)
        throw ShapeError("init_adapter: degenerate base shape " + base.w_star.shape_str());

    AdaptiveLoraLayer layer;
    layer.mode = mode;
    layer.rank = RankParameter::init(q, r_max, r_init);
    layer.rng = Rng(seed);

    const std::size_t cap = static_cast<std::size_t>(r_max);
    Tensor b(m, cap); // zero matrix, so the fresh adapter is a no-op
    Tensor a(cap, n);
    const double stddev = mode == LayerMode::Adaptive
                              ? rescaled_kaiming_std(layer.rank.nu(), r_init)
                              : std::sqrt(2.0) / std::sqrt(static_cast<double>(r_init));
    for (std::size_t i = 0; i < static_cast<std::size_t>(r_init); ++i)
        for (std::size_t j = 0; j < n; ++j) a.at(i, j) = layer.rng.gaussian(0.0, stddev);

    layer.w_star = tape.constant(base.w_star);
    layer.b_buf = tape.leaf(std::move(b), true);
    layer.a_buf = tape.leaf(std::move(a), true);
    layer.raw_nu = tape.leaf(Tensor::scalar(layer.rank.raw), mode == LayerMode::Adaptive);

    layer.b_m = Tensor(m, cap);
    layer.b_v = Tensor(m, cap);
    layer.a_m = Tensor(cap, n);
    layer.a_v = Tensor(cap, n);
    layer.base = std::move(base);
    return layer;
}

Var AdaptiveLoraLayer::adapted_forward(Tape& tape, Var x) const {
    if (x.value().rows != n())
        throw ShapeError("adapted_forward: input " + x.value().shape_str() +
                         " does not match base " + base.w_star.shape_str());
    Var base_out = matmul(w_star, x);
    const std::size_t d = static_cast<std::size_t>(rank.d);
    Var a_act = slice_rows(a_buf, 0, d);
    Var b_act = slice_cols(b_buf, 0, d);
    Var h = matmul(a_act, x);
    if (mode == LayerMode::Adaptive) {
        Var nu = nu_from_raw(tape, raw_nu);
        h = diag_lmul(importance_spectrum(tape, nu, rank.d), h);
    }
    return add(base_out, matmul(b_act, h));
}

Var AdaptiveLoraLayer::frozen_forward(Tape&, Var x) const { return matmul(w_star, x); }

Var AdaptiveLoraLayer::delta_weight(Tape& tape) const {
    const std::size_t d = static_cast<std::size_t>(rank.d);
    Var a_act = slice_rows(a_buf, 0, d);
    Var b_act = slice_cols(b_buf, 0, d);
    if (mode == LayerMode::Adaptive) {
        Var nu = nu_from_raw(tape, raw_nu);
        a_act = diag_lmul(importance_spectrum(tape, nu, rank.d), a_act);
    }
    return matmul(b_act, a_act);
}

void AdaptiveLoraLayer::set_raw_nu(double raw) {
    rank.raw = raw;
    raw_nu.tape->leaf_value(raw_nu).data[0] = raw;
}

ResizeReport AdaptiveLoraLayer::refresh_rank() {
    const int old_d = rank.d;
    if (mode == LayerMode::FixedRank) return {old_d, old_d};

    rank.raw = raw_nu.value().data[0];
    const int new_d = rank.refresh();
    if (new_d == old_d) return {old_d, new_d};

    Tensor& b = b_buf.tape->leaf_value(b_buf);
    Tensor& a = a_buf.tape->leaf_value(a_buf);
    const std::size_t lo = static_cast<std::size_t>(std::min(old_d, new_d));
    const std::size_t hi = static_cast<std::size_t>(std::max(old_d, new_d));

    if (new_d > old_d) {
        const double stddev = rescaled_kaiming_std(rank.nu(), new_d);
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t j = 0; j < a.cols; ++j) a.at(i, j) = rng.gaussian(0.0, stddev);
        for (std::size_t i = 0; i < b.rows; ++i)
            for (std::size_t j = lo; j < hi; ++j)
                b.at(i, j) = grow_random_b ? rng.gaussian(0.0, stddev) : 0.0;
    } else {
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t j = 0; j < a.cols; ++j) a.at(i, j) = 0.0;
        for (std::size_t i = 0; i < b.rows; ++i)
            for (std::size_t j = lo; j < hi; ++j) b.at(i, j) = 0.0;
    }
    // stale moments are meaningless for re-initialized slots
    for (std::size_t i = lo; i < hi; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) {
            a_m.at(i, j) = 0.0;
            a_v.at(i, j) = 0.0;
        }
    for (std::size_t i = 0; i < b.rows; ++i)
        for (std::size_t j = lo; j < hi; ++j) {
            b_m.at(i, j) = 0.0;
            b_v.at(i, j) = 0.0;
        }
    ++generation;
    return {old_d, new_d};
}

void adam_update(double* param, const double* grad, double* m, double* v, std::size_t count,
                 double lr, double beta1, double beta2, double eps, long step) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < count; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

void AdaptiveLoraLayer::apply_adam(double lr, double nu_lr, double beta1, double beta2,
                                   double eps, long step) {
    Tensor& b = b_buf.tape->leaf_value(b_buf);
    Tensor& a = a_buf.tape->leaf_value(a_buf);
    const Tensor& gb = b_buf.grad();
    const Tensor& ga = a_buf.grad();
    const std::size_t d = static_cast<std::size_t>(rank.d);

    // active B region: first d entries of each row
    for (std::size_t i = 0; i < b.rows; ++i) {
        const std::size_t off = i * b.cols;
        adam_update(b.data.data() + off, gb.data.data() + off, b_m.data.data() + off,
                    b_v.data.data() + off, d, lr, beta1, beta2, eps, step);
    }
    // active A region: first d rows, contiguous
    adam_update(a.data.data(), ga.data.data(), a_m.data.data(), a_v.data.data(), d * a.cols,
                lr, beta1, beta2, eps, step);

    if (mode == LayerMode::Adaptive) {
        double raw = raw_nu.value().data[0];
        const double g = raw_nu.grad().data[0];
        adam_update(&raw, &g, &nu_m, &nu_v, 1, nu_lr, beta1, beta2, eps, step);
        set_raw_nu(raw);
    }
}

} // namespace lora2
