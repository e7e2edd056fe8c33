#include "lora2/losses.hpp"

#include <cmath>

#include "lora2/error.hpp"

namespace lora2 {

Var mse_loss(Tape& tape, Var pred, const Tensor& target) {
    require_same_shape(pred.value(), target, "mse_loss");
    if (target.rows < 1) throw ShapeError("mse_loss: empty batch");
    Var diff = sub(pred, tape.constant(target));
    return scale(sum_all(square(diff)), 1.0 / static_cast<double>(target.rows));
}

Var mse_loss_batch(Tape& tape, const std::vector<Var>& preds,
                   const std::vector<Tensor>& targets) {
    if (preds.empty() || preds.size() != targets.size())
        throw ContractError("mse_loss_batch: need matching non-empty preds/targets");
    Var acc;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        require_same_shape(preds[i].value(), targets[i], "mse_loss_batch");
        Var sq = sum_all(square(sub(preds[i], tape.constant(targets[i]))));
        acc = acc.valid() ? add(acc, sq) : sq;
    }
    return scale(acc, 1.0 / static_cast<double>(preds.size()));
}

Var rank_reg_loss(Tape& tape, const std::vector<Var>& nus, double nu_tgt) {
    if (!(nu_tgt > 0.0)) throw DomainError("rank_reg_loss: nu_tgt must be positive");
    Var acc;
    Var tgt = tape.scalar(nu_tgt);
    for (Var nu : nus) {
        Var term = abs(sub(nu, tgt));
        acc = acc.valid() ? add(acc, term) : term;
    }
    if (!acc.valid()) return tape.scalar(0.0);
    return acc;
}

Var attention_entropy_loss(Tape& tape, const std::vector<Var>& maps) {
    if (maps.empty())
        throw ContractError("attention_entropy_loss: empty component set (disable with "
                            "lambda_e = 0 instead)");
    Var acc;
    for (Var map : maps) {
        const Tensor& p = map.value();
        for (std::size_t i = 0; i < p.rows; ++i) {
            double row_sum = 0.0;
            for (std::size_t j = 0; j < p.cols; ++j) row_sum += p.at(i, j);
            if (std::abs(row_sum - 1.0) > 1e-9)
                throw ContractError("attention_entropy_loss: row " + std::to_string(i) +
                                    " sums to " + std::to_string(row_sum));
        }
        // Entries may be exactly 0 (one-hot rows); the additive 1e-300 keeps
        // log finite there while the multiplication by p = 0 realizes the
        // 0*log(0) := 0 convention. Any realistic probability is unperturbed.
        Tensor eps_row(1, p.cols);
        eps_row.fill(1e-300);
        Var eps = tape.constant(std::move(eps_row));
        Var row_acc;
        for (std::size_t i = 0; i < p.rows; ++i) {
            Var row = slice_rows(map, i, i + 1);
            Var plogp = sum_all(diag_lmul(row, transpose(log(add(row, eps)))));
            row_acc = row_acc.valid() ? add(row_acc, plogp) : plogp;
        }
        Var map_entropy = scale(row_acc, -1.0 / static_cast<double>(p.rows));
        acc = acc.valid() ? add(acc, map_entropy) : map_entropy;
    }
    return scale(acc, 1.0 / static_cast<double>(maps.size()));
}

Var weight_prior_loss(Tape& tape, const std::vector<AdaptiveLoraLayer>& layers,
                      double sigma_theta) {
    if (!(sigma_theta > 0.0)) throw DomainError("weight_prior_loss: sigma_theta must be > 0");
    Var acc;
    for (const AdaptiveLoraLayer& layer : layers) {
        const std::size_t d = static_cast<std::size_t>(layer.rank.d);
        Var b_sq = sum_all(square(slice_cols(layer.b_buf, 0, d)));
        Var a_sq = sum_all(square(slice_rows(layer.a_buf, 0, d)));
        Var term = add(b_sq, a_sq);
        acc = acc.valid() ? add(acc, term) : term;
    }
    if (!acc.valid()) return tape.scalar(0.0);
    return scale(acc, 1.0 / (2.0 * sigma_theta * sigma_theta));
}

ComposedLoss total_loss(Tape& tape, Var mse, Var reg, Var entropy, Var weight, double lambda_r,
                        double lambda_e, double lambda_w) {
    if (lambda_r < 0.0 || lambda_e < 0.0 || lambda_w < 0.0)
        throw DomainError("total_loss: loss weights must be >= 0");
    if (!reg.valid()) reg = tape.scalar(0.0);
    if (!entropy.valid()) entropy = tape.scalar(0.0);
    if (!weight.valid()) weight = tape.scalar(0.0);

    Var total = add(mse, scale(reg, lambda_r));
    total = add(total, scale(entropy, lambda_e));
    total = add(total, scale(weight, lambda_w));

    ComposedLoss out;
    out.total = total;
    out.breakdown.mse = mse.value().data[0];
    out.breakdown.reg = reg.value().data[0];
    out.breakdown.entropy = entropy.value().data[0];
    out.breakdown.weight = weight.value().data[0];
    out.breakdown.total = total.value().data[0];
    return out;
}

VariationalDiagnostic variational_diagnostic(const std::vector<AdaptiveLoraLayer>& layers,
                                             const HyperPrior& prior) {
    if (!(prior.sigma_lambda > 0.0 && prior.sigma_theta > 0.0))
        throw DomainError("variational_diagnostic: sigmas must be positive");
    VariationalDiagnostic out;
    const double log_sl = std::log(prior.sigma_lambda);
    const double log_st = std::log(prior.sigma_theta);
    const double two_sl2 = 2.0 * prior.sigma_lambda * prior.sigma_lambda;
    const double two_st2 = 2.0 * prior.sigma_theta * prior.sigma_theta;
    for (const AdaptiveLoraLayer& layer : layers) {
        const double nu = layer.nu_value();
        out.rank_term += -log_sl - (nu - prior.mu_lambda) * (nu - prior.mu_lambda) / two_sl2;
        const std::size_t d = static_cast<std::size_t>(layer.rank.d);
        const Tensor& b = layer.b_buf.value();
        const Tensor& a = layer.a_buf.value();
        for (std::size_t i = 0; i < b.rows; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double w = b.at(i, j);
                out.weight_term += -log_st - w * w / two_st2;
            }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < a.cols; ++j) {
                const double w = a.at(i, j);
                out.weight_term += -log_st - w * w / two_st2;
            }
    }
    return out;
}

} // namespace lora2
