#include "lora2/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "lora2/autodiff.hpp"
#include "lora2/checkpoint.hpp"
#include "lora2/config_file.hpp"
#include "lora2/losses.hpp"
#include "lora2/rank_controller.hpp"
#include "lora2/rng.hpp"
#include "lora2/toy_net.hpp"
#include "lora2/trainer.hpp"

namespace lora2::selfcheck {

namespace {

Check make(const std::string& name, bool pass, const std::string& detail) {
    return Check{name, pass, detail};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

// Standalone single-layer total loss rebuilt from dense snapshots, so the
// finite-difference oracle can vary one tensor at a time.
struct LayerCase {
    Tensor w_star, b_act, a_act;
    double raw = 0.0;
    int d = 1;
    Tensor x, target;
    double nu_tgt = 1.0;
    double lambda_r = 1e-4, lambda_w = 1e-3, sigma_theta = 1.0;

    Var loss(Tape& t, Var b, Var a, Var raw_var) const {
        Var nu = nu_from_raw(t, raw_var);
        Var spec = importance_spectrum(t, nu, d);
        Var h = diag_lmul(spec, matmul(a, t.constant(x)));
        Var pred = add(matmul(t.constant(w_star), t.constant(x)), matmul(b, h));
        Var mse = scale(sum_all(square(sub(pred, t.constant(target)))),
                        1.0 / static_cast<double>(x.cols));
        Var reg = abs(sub(nu, t.scalar(nu_tgt)));
        Var weight = scale(add(sum_all(square(b)), sum_all(square(a))),
                           1.0 / (2.0 * sigma_theta * sigma_theta));
        Var total = add(mse, scale(reg, lambda_r));
        return add(total, scale(weight, lambda_w));
    }
};

LayerCase random_layer_case(Rng& rng) {
    LayerCase lc;
    const std::size_t m = 3 + rng.next_u64() % 4;
    const std::size_t n = 3 + rng.next_u64() % 4;
    const std::size_t k = 1 + rng.next_u64() % 3;
    lc.d = 1 + static_cast<int>(rng.next_u64() % 4);
    lc.w_star = rng.gaussian_tensor(m, n, 0.5);
    lc.b_act = rng.gaussian_tensor(m, static_cast<std::size_t>(lc.d), 0.7);
    lc.a_act = rng.gaussian_tensor(static_cast<std::size_t>(lc.d), n, 0.7);
    lc.raw = rng.gaussian(0.0, 0.8);
    lc.x = rng.gaussian_tensor(n, k);
    lc.target = rng.gaussian_tensor(m, k);
    // keep the L1 kink away from the evaluation point
    lc.nu_tgt = softplus(lc.raw) + 0.3 + 0.2 * rng.uniform();
    return lc;
}

} // namespace

Check ad_core_ops_fd(int trials, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const Tensor c1 = rng.gaussian_tensor(4, 3);
        const Tensor c3 = rng.gaussian_tensor(4, 5);
        Tensor ones(4, 5);
        ones.fill(1.0);
        const Tensor x0 = rng.gaussian_tensor(4, 5);
        auto f = [&](Tape& t, Var x) {
            Var t1 = matmul(transpose(x), t.constant(c1));
            Var a = sum_all(square(softmax_rows(t1)));
            Var r0 = slice_rows(x, 0, 1);
            Var b = mean_all(diag_lmul(r0, t1));
            Var c = sum_all(abs(slice_cols(x, 1, 4)));
            Var e = sum_all(exp(scale(concat_cols(r0, r0), 0.2)));
            Var g = sum_all(log(add(square(x), t.constant(ones))));
            Var s = sum_all(square(sub(x, t.constant(c3))));
            Var cr = sum_all(concat_rows(transpose(r0), transpose(r0)));
            return add(add(add(a, b), add(c, e)), add(add(g, s), cr));
        };
        worst = std::max(worst, grad_check(f, x0, 1e-5));
    }
    return make("ad_core_ops_fd", worst <= 1e-6, "max rel err " + fmt(worst));
}

Check layer_loss_fd(int trials, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const LayerCase lc = random_layer_case(rng);
        auto wrt_b = [&](Tape& t, Var b) {
            return lc.loss(t, b, t.constant(lc.a_act), t.scalar(lc.raw));
        };
        auto wrt_a = [&](Tape& t, Var a) {
            return lc.loss(t, t.constant(lc.b_act), a, t.scalar(lc.raw));
        };
        auto wrt_raw = [&](Tape& t, Var raw) {
            return lc.loss(t, t.constant(lc.b_act), t.constant(lc.a_act), raw);
        };
        worst = std::max(worst, grad_check(wrt_b, lc.b_act, 1e-5));
        worst = std::max(worst, grad_check(wrt_a, lc.a_act, 1e-5));
        worst = std::max(worst, grad_check(wrt_raw, Tensor::scalar(lc.raw), 1e-5));
    }
    return make("layer_loss_fd", worst <= 1e-4, "max rel err " + fmt(worst));
}

Check entropy_fd(int trials, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const std::size_t r = 2 + rng.next_u64() % 4;
        const std::size_t k = 2 + rng.next_u64() % 4;
        const Tensor logits = rng.gaussian_tensor(r, k, 1.5);
        auto f = [&](Tape& t, Var z) {
            return attention_entropy_loss(t, {softmax_rows(z)});
        };
        worst = std::max(worst, grad_check(f, logits, 1e-5));
    }
    return make("entropy_fd", worst <= 1e-5, "max rel err " + fmt(worst));
}

Check toy_net_nu_fd(int trials, std::uint64_t seed) {
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        ToyNetSpec spec;
        spec.d_model = 6;
        spec.k_tokens = 3;
        spec.d_cond = 5;
        spec.patch_slots = 2;
        AdapterSettings settings;
        settings.r_init = 3;
        settings.r_max = 8;
        ToyNet model = build_toy_net(spec, settings, seed + static_cast<std::uint64_t>(trial));

        TrainConfig config;
        config.r_max = 8;
        config.r_init = 3;
        config.lambda_r = 1e-3;
        config.lambda_e = 1e-3;
        config.lambda_w = 1e-3;

        Rng rng(seed + 1000 + static_cast<std::uint64_t>(trial));
        // make B nonzero so the MSE path to nu is live
        for (AdaptiveLoraLayer& l : model.layers) {
            Tensor& b = l.b_buf.tape->leaf_value(l.b_buf);
            for (std::size_t i = 0; i < b.rows; ++i)
                for (std::size_t j = 0; j < static_cast<std::size_t>(l.rank.d); ++j)
                    b.at(i, j) = rng.gaussian(0.0, 0.3);
        }
        Teacher teacher = plant_teacher(model, {1, 1, 2, 1, 2, 1, 1, 1, 2}, 0.4,
                                        seed + 2000 + static_cast<std::uint64_t>(trial));
        Dataset data = sample_dataset(teacher, 2, 0.0, seed + 3000 + trial);

        auto loss_value = [&]() {
            const std::size_t mark = model.tape->mark();
            std::vector<Var> preds;
            std::vector<Tensor> targets;
            Var map;
            for (std::size_t i = 0; i < data.size(); ++i) {
                Tensor patches = row_to_matrix(data.inputs, i, spec.d_model, spec.patch_slots);
                Tensor cond = row_to_matrix(data.conds, i, spec.d_cond, spec.k_tokens);
                auto out = model.forward_sample(patches, cond, true);
                preds.push_back(out.output);
                targets.push_back(
                    row_to_matrix(data.targets, i, spec.d_model, spec.patch_slots));
                map = map.valid() ? concat_rows(map, out.cross_map) : out.cross_map;
            }
            Tape& t = *model.tape;
            Var mse = mse_loss_batch(t, preds, targets);
            Var ent = attention_entropy_loss(t, {map});
            std::vector<Var> nus;
            for (const AdaptiveLoraLayer& l : model.layers)
                nus.push_back(nu_from_raw(t, l.raw_nu));
            Var reg = rank_reg_loss(t, nus, nu_target(config.q, config.r_target));
            Var weight = weight_prior_loss(t, model.layers, config.sigma_theta);
            ComposedLoss composed = total_loss(t, mse, reg, ent, weight, config.lambda_r,
                                               config.lambda_e, config.lambda_w);
            return std::pair<Var, std::size_t>{composed.total, mark};
        };

        // analytic
        model.tape->zero_grads();
        auto [loss, mark] = loss_value();
        model.tape->backward(loss);
        std::vector<double> analytic;
        std::vector<Tensor> analytic_b, analytic_a;
        for (const AdaptiveLoraLayer& l : model.layers) {
            analytic.push_back(l.raw_nu.grad().data[0]);
            analytic_b.push_back(l.b_buf.grad());
            analytic_a.push_back(l.a_buf.grad());
        }
        model.tape->rewind(mark);
        model.tape->zero_grads();

        // central differences on each layer's raw nu, d held fixed
        const double h = 1e-5;
        auto eval_at = [&](double* slot, double value) {
            const double orig = *slot;
            *slot = value;
            auto [l, m] = loss_value();
            const double f = l.value().data[0];
            model.tape->rewind(m);
            *slot = orig;
            return f;
        };
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            const double orig = model.layers[li].rank.raw;
            model.layers[li].set_raw_nu(orig + h);
            auto [lp, mp] = loss_value();
            const double fp = lp.value().data[0];
            model.tape->rewind(mp);
            model.layers[li].set_raw_nu(orig - h);
            auto [lm, mm] = loss_value();
            const double fm = lm.value().data[0];
            model.tape->rewind(mm);
            model.layers[li].set_raw_nu(orig);
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom = std::max(1.0, std::abs(analytic[li]));
            worst = std::max(worst, std::abs(analytic[li] - numeric) / denom);
        }
        // sampled factor coordinates through the same full loss
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            AdaptiveLoraLayer& l = model.layers[li];
            Tensor& b = l.b_buf.tape->leaf_value(l.b_buf);
            Tensor& a = l.a_buf.tape->leaf_value(l.a_buf);
            const Tensor& gb = analytic_b[li];
            const Tensor& ga = analytic_a[li];
            const std::size_t d = static_cast<std::size_t>(l.rank.d);
            for (int probe = 0; probe < 2; ++probe) {
                const std::size_t bi = rng.next_u64() % b.rows;
                const std::size_t bj = rng.next_u64() % d;
                double* slot = &b.data[bi * b.cols + bj];
                const double numeric =
                    (eval_at(slot, *slot + h) - eval_at(slot, *slot - h)) / (2.0 * h);
                const double g = gb.at(bi, bj);
                worst = std::max(worst, std::abs(g - numeric) / std::max(1.0, std::abs(g)));

                const std::size_t ai = rng.next_u64() % d;
                const std::size_t aj = rng.next_u64() % a.cols;
                slot = &a.data[ai * a.cols + aj];
                const double numeric_a =
                    (eval_at(slot, *slot + h) - eval_at(slot, *slot - h)) / (2.0 * h);
                const double g_a = ga.at(ai, aj);
                worst =
                    std::max(worst, std::abs(g_a - numeric_a) / std::max(1.0, std::abs(g_a)));
            }
        }
    }
    return make("toy_net_nu_fd", worst <= 1e-4, "max rel err " + fmt(worst));
}

Check telescoping(int trials, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const double nu = 1e-4 + (10.0 - 1e-4) * rng.uniform();
        const int d = 1 + static_cast<int>(rng.next_u64() % 512);
        double brute = 0.0;
        for (int j = 1; j <= d; ++j) brute += pmf(j, nu);
        worst = std::max(worst, std::abs(brute - truncated_mass(nu, d)));
    }
    return make("telescoping", worst <= 1e-12, "max abs err " + fmt(worst));
}

Check controller_inverse_pair() {
    for (double q : {0.5, 0.9, 0.99})
        for (int r = 1; r <= 512; ++r)
            if (effective_rank(nu_target(q, r), q, 512) != r)
                return make("controller_inverse_pair", false,
                            "failed at q=" + std::to_string(q) + " r=" + std::to_string(r));
    return make("controller_inverse_pair", true, "exact over q in {0.5,0.9,0.99}, r in 1..512");
}

Check rank_monotonicity(int trials, std::uint64_t seed) {
    Rng rng(seed);
    for (int trial = 0; trial < trials; ++trial) {
        const double q = 0.5 + 0.49 * rng.uniform();
        double nu1 = 1e-4 + 5.0 * rng.uniform();
        double nu2 = 1e-4 + 5.0 * rng.uniform();
        if (nu1 > nu2) std::swap(nu1, nu2);
        if (effective_rank(nu1, q, 512) < effective_rank(nu2, q, 512))
            return make("rank_monotonicity", false,
                        "rank increased with nu at nu1=" + fmt(nu1) + " nu2=" + fmt(nu2));
    }
    return make("rank_monotonicity", true, "non-increasing in nu");
}

Check spectrum_shape(int trials, std::uint64_t seed) {
    Rng rng(seed);
    for (int trial = 0; trial < trials; ++trial) {
        const double nu = 1e-3 + 6.0 * rng.uniform();
        const int d = 2 + static_cast<int>(rng.next_u64() % 64);
        Tape tape;
        Var nu_var = tape.scalar(nu);
        Var spec = importance_spectrum(tape, nu_var, d);
        const Tensor& v = spec.value();
        for (int j = 0; j < d; ++j) {
            if (!(v.data[static_cast<std::size_t>(j)] > 0.0))
                return make("spectrum_shape", false, "non-positive entry");
            if (j > 0 && !(v.data[static_cast<std::size_t>(j)] <
                           v.data[static_cast<std::size_t>(j - 1)]))
                return make("spectrum_shape", false, "not strictly decreasing");
            const double expected = pmf(j + 1, nu);
            const double err = std::abs(v.data[static_cast<std::size_t>(j)] - expected) /
                               std::max(1e-300, expected);
            if (err > 1e-9)
                return make("spectrum_shape", false, "entry differs from pmf by " + fmt(err));
        }
    }
    return make("spectrum_shape", true, "positive, decreasing, matches pmf");
}

Check zero_init_equivalence(int inputs, std::uint64_t seed) {
    ToyNetSpec spec;
    AdapterSettings settings;
    ToyNet model = build_toy_net(spec, settings, seed);
    Rng rng(seed + 1);
    for (int i = 0; i < inputs; ++i) {
        const Tensor patches = rng.gaussian_tensor(spec.d_model, spec.patch_slots);
        const Tensor cond = rng.gaussian_tensor(spec.d_cond, spec.k_tokens);
        const Tensor adapted = model.eval_output(patches, cond, true);
        const Tensor frozen = model.eval_output(patches, cond, false);
        if (!bitwise_equal(adapted, frozen))
            return make("zero_init_equivalence", false, "outputs differ at input " +
                                                            std::to_string(i));
    }
    return make("zero_init_equivalence", true,
                std::to_string(inputs) + " inputs bitwise identical");
}

namespace {

// Random standalone layer with live (nonzero) factors on its own tape.
struct LoneLayer {
    Tape tape;
    AdaptiveLoraLayer layer;
};

std::unique_ptr<LoneLayer> random_lone_layer(Rng& rng, int r_max = 16) {
    auto holder = std::make_unique<LoneLayer>();
    const std::size_t m = 4 + rng.next_u64() % 5;
    const std::size_t n = 4 + rng.next_u64() % 5;
    const int r_init = 2 + static_cast<int>(rng.next_u64() % 4);
    FrozenLinear base{rng.gaussian_tensor(m, n, 0.5), "lone", LayerKind::Mlp};
    holder->layer = init_adapter(holder->tape, std::move(base), r_init, 0.9, r_max,
                                 rng.next_u64(), LayerMode::Adaptive);
    Tensor& b = holder->tape.leaf_value(holder->layer.b_buf);
    for (std::size_t i = 0; i < b.rows; ++i)
        for (std::size_t j = 0; j < static_cast<std::size_t>(r_init); ++j)
            b.at(i, j) = rng.gaussian(0.0, 0.8);
    return holder;
}

Tensor layer_forward_value(LoneLayer& ll, const Tensor& x) {
    const std::size_t mark = ll.tape.mark();
    Var out = ll.layer.adapted_forward(ll.tape, ll.tape.constant(x));
    Tensor v = out.value();
    ll.tape.rewind(mark);
    return v;
}

Tensor delta_value(LoneLayer& ll) {
    const std::size_t mark = ll.tape.mark();
    Var dw = ll.layer.delta_weight(ll.tape);
    Tensor v = dw.value();
    ll.tape.rewind(mark);
    return v;
}

} // namespace

Check growth_continuity(int trials, std::uint64_t seed) {
    Rng rng(seed);
    for (int trial = 0; trial < trials; ++trial) {
        auto ll = random_lone_layer(rng);
        const Tensor x = rng.gaussian_tensor(ll->layer.n(), 2);
        const int old_d = ll->layer.rank.d;
        const int new_d = old_d + 1 + static_cast<int>(rng.next_u64() % 3);
        // the rate moves first (that is the optimizer's job); the invariant is
        // about the resize event itself at the now-current nu
        ll->layer.set_raw_nu(softplus_inverse(nu_target(0.9, new_d)));
        const Tensor before = layer_forward_value(*ll, x);
        const ResizeReport report = ll->layer.refresh_rank();
        if (report.new_d <= report.old_d)
            return make("growth_continuity", false, "refresh did not grow");
        const Tensor after = layer_forward_value(*ll, x);
        if (!bitwise_equal(before, after))
            return make("growth_continuity", false,
                        "output changed at resize instant (trial " + std::to_string(trial) +
                            ")");
    }
    return make("growth_continuity", true,
                std::to_string(trials) + " grow events bitwise stable");
}

Check shrink_truncation_bound(int trials, std::uint64_t seed) {
    Rng rng(seed);
    for (int trial = 0; trial < trials; ++trial) {
        auto ll = random_lone_layer(rng);
        AdaptiveLoraLayer& layer = ll->layer;
        const int d = layer.rank.d;
        if (d < 2) continue;
        const int d_trunc = 1 + static_cast<int>(rng.next_u64() % (d - 1));

        const Tensor full = delta_value(*ll);
        layer.rank.d = d_trunc; // move the active cursor only; nu untouched
        const Tensor trunc = delta_value(*ll);
        layer.rank.d = d;

        double err_sq = 0.0;
        for (std::size_t i = 0; i < full.data.size(); ++i) {
            const double diff = full.data[i] - trunc.data[i];
            err_sq += diff * diff;
        }
        const double err = std::sqrt(err_sq);

        const double nu = layer.nu_value();
        const Tensor& b = layer.b_buf.value();
        const Tensor& a = layer.a_buf.value();
        double bound = 0.0;
        for (int j = d_trunc; j < d; ++j) {
            double bn = 0.0, an = 0.0;
            for (std::size_t i = 0; i < b.rows; ++i)
                bn += b.at(i, static_cast<std::size_t>(j)) *
                      b.at(i, static_cast<std::size_t>(j));
            for (std::size_t c = 0; c < a.cols; ++c)
                an += a.at(static_cast<std::size_t>(j), c) *
                      a.at(static_cast<std::size_t>(j), c);
            bound += pmf(j + 1, nu) * std::sqrt(bn) * std::sqrt(an);
        }
        if (err > bound * (1.0 + 1e-12) + 1e-15)
            return make("shrink_truncation_bound", false,
                        "err " + fmt(err) + " exceeds bound " + fmt(bound));
    }
    return make("shrink_truncation_bound", true,
                std::to_string(trials) + " truncations within bound");
}

Check factored_dense_agreement(int trials, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        auto ll = random_lone_layer(rng);
        const Tensor x = rng.gaussian_tensor(ll->layer.n(), 3);
        const Tensor factored = layer_forward_value(*ll, x);

        const std::size_t mark = ll->tape.mark();
        Var dense_w = add(ll->layer.w_star, ll->layer.delta_weight(ll->tape));
        Var dense_out = matmul(dense_w, ll->tape.constant(x));
        const Tensor dense = dense_out.value();
        ll->tape.rewind(mark);

        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < dense.data.size(); ++i) {
            const double diff = factored.data[i] - dense.data[i];
            num += diff * diff;
            den += dense.data[i] * dense.data[i];
        }
        worst = std::max(worst, std::sqrt(num) / std::max(1e-300, std::sqrt(den)));
    }
    return make("factored_dense_agreement", worst <= 1e-10, "max rel err " + fmt(worst));
}

Check adam_reference(int steps, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t count = 16;
    std::vector<double> p(count), m(count, 0.0), v(count, 0.0);
    std::vector<double> p_ref(count), m_ref(count, 0.0), v_ref(count, 0.0);
    for (std::size_t i = 0; i < count; ++i) p[i] = p_ref[i] = rng.gaussian();

    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double worst = 0.0;
    for (int step = 1; step <= steps; ++step) {
        std::vector<double> g(count);
        for (double& gv : g) gv = rng.gaussian();
        adam_update(p.data(), g.data(), m.data(), v.data(), count, lr, b1, b2, eps, step);
        // independent text-book recomputation
        for (std::size_t i = 0; i < count; ++i) {
            m_ref[i] = b1 * m_ref[i] + (1.0 - b1) * g[i];
            v_ref[i] = b2 * v_ref[i] + (1.0 - b2) * g[i] * g[i];
            const double mh = m_ref[i] / (1.0 - std::pow(b1, step));
            const double vh = v_ref[i] / (1.0 - std::pow(b2, step));
            p_ref[i] -= lr * mh / (std::sqrt(vh) + eps);
            worst = std::max(worst, std::abs(p_ref[i] - p[i]));
        }
    }
    return make("adam_reference", worst <= 1e-12,
                "max abs diff " + fmt(worst) + " over " + std::to_string(steps) + " steps");
}

Check checkpoint_formula(int models, std::uint64_t seed, const std::string& tmpdir) {
    std::filesystem::create_directories(tmpdir);
    const std::string path = tmpdir + "/selfcheck_ckpt.alr2";
    Rng rng(seed);
    for (int i = 0; i < models; ++i) {
        ToyNetSpec spec;
        spec.d_model = 3 + rng.next_u64() % 8;
        spec.k_tokens = 2 + rng.next_u64() % 3;
        spec.d_cond = 3 + rng.next_u64() % 8;
        spec.patch_slots = 2 + rng.next_u64() % 3;
        AdapterSettings settings;
        settings.r_init = 1 + static_cast<int>(rng.next_u64() % 12);
        settings.r_max = 16;
        ToyNet model = build_toy_net(spec, settings, rng.next_u64());

        const std::int64_t expected = checkpoint_bytes(model);
        const std::int64_t reported = save_checkpoint(model, path);
        const std::int64_t actual =
            static_cast<std::int64_t>(std::filesystem::file_size(path));
        if (reported != expected || actual != expected)
            return make("checkpoint_formula", false,
                        "formula " + std::to_string(expected) + " reported " +
                            std::to_string(reported) + " on disk " + std::to_string(actual));
    }
    std::filesystem::remove(path);
    return make("checkpoint_formula", true,
                std::to_string(models) + " random models byte-exact");
}

Check config_roundtrip(int trials, std::uint64_t seed) {
    Rng rng(seed);
    for (int trial = 0; trial < trials; ++trial) {
        TrainConfig c;
        c.q = 0.5 + 0.49 * rng.uniform();
        c.r_init = 1 + static_cast<int>(rng.next_u64() % 32);
        c.r_target = 1 + static_cast<int>(rng.next_u64() % 32);
        c.r_max = 64;
        c.lambda_r = rng.uniform() * 0.1;
        c.lambda_e = rng.uniform() * 0.1;
        c.lambda_w = rng.uniform() * 0.1;
        c.learning_rate = 1e-5 + rng.uniform() * 0.01;
        c.nu_learning_rate = 1e-4 + rng.uniform() * 0.1;
        c.steps = static_cast<long>(rng.next_u64() % 1000);
        c.batch_size = 1 + rng.next_u64() % 8;
        c.rank_refresh_interval = 1 + static_cast<long>(rng.next_u64() % 10);
        c.mode = rng.uniform() < 0.5 ? LayerMode::Adaptive : LayerMode::FixedRank;
        c.fixed_rank = 1 + static_cast<int>(rng.next_u64() % 64);
        c.seed = rng.next_u64();
        c.grow_random_b = rng.uniform() < 0.5;
        c.sigma_theta = 0.5 + rng.uniform();
        c.mu_lambda = rng.gaussian();
        c.sigma_lambda = 0.5 + rng.uniform();
        if (!(parse_config(serialize_config(c)) == c))
            return make("config_roundtrip", false, "mismatch at trial " + std::to_string(trial));
    }
    return make("config_roundtrip", true, std::to_string(trials) + " configs exact");
}

Check loss_composition(int trials, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        Tape tape;
        const double mse_v = std::abs(rng.gaussian()) + 0.1;
        const double reg_v = std::abs(rng.gaussian());
        const double ent_v = std::abs(rng.gaussian());
        const double w_v = std::abs(rng.gaussian());
        const double lr = rng.uniform(), le = rng.uniform(), lw = rng.uniform();
        ComposedLoss composed =
            total_loss(tape, tape.scalar(mse_v), tape.scalar(reg_v), tape.scalar(ent_v),
                       tape.scalar(w_v), lr, le, lw);
        double expected = mse_v + lr * reg_v;
        expected = expected + le * ent_v;
        expected = expected + lw * w_v;
        const double rel = std::abs(composed.breakdown.total - expected) /
                           std::max(1e-300, std::abs(expected));
        worst = std::max(worst, rel);
    }
    return make("loss_composition", worst <= 1e-15, "max rel err " + fmt(worst));
}

CheckList gradient_suite(int trials, std::uint64_t seed) {
    CheckList checks;
    checks.push_back(ad_core_ops_fd(std::max(1, trials / 5), seed));
    checks.push_back(layer_loss_fd(trials, seed + 1));
    checks.push_back(entropy_fd(trials, seed + 2));
    checks.push_back(toy_net_nu_fd(std::max(1, trials / 10), seed + 3));
    return checks;
}

CheckList property_suite(std::uint64_t seed, const std::string& tmpdir) {
    CheckList checks;
    checks.push_back(telescoping(10000, seed));
    checks.push_back(controller_inverse_pair());
    checks.push_back(rank_monotonicity(2000, seed + 1));
    checks.push_back(spectrum_shape(200, seed + 2));
    checks.push_back(zero_init_equivalence(100, seed + 3));
    checks.push_back(growth_continuity(200, seed + 4));
    checks.push_back(shrink_truncation_bound(1000, seed + 5));
    checks.push_back(factored_dense_agreement(200, seed + 6));
    checks.push_back(adam_reference(100, seed + 7));
    checks.push_back(checkpoint_formula(50, seed + 8, tmpdir));
    checks.push_back(config_roundtrip(200, seed + 9));
    checks.push_back(loss_composition(200, seed + 10));
    return checks;
}

int report(const CheckList& checks) {
    int failures = 0;
    for (const Check& c : checks) {
        std::printf("%-28s %s  (%s)\n", c.name.c_str(), c.pass ? "PASS" : "FAIL",
                    c.detail.c_str());
        if (!c.pass) ++failures;
    }
    return failures;
}

} // namespace lora2::selfcheck
