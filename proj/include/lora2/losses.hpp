#pragma once

#include <vector>

#include "lora2/adaptive_lora.hpp"
#include "lora2/autodiff.hpp"

namespace lora2 {

// Prior hyper-parameters for the variational diagnostic.
struct HyperPrior {
    double mu_lambda = 0.0;
    double sigma_lambda = 1.0;
    double sigma_theta = 1.0;
};

struct LossBreakdown {
    double mse = 0.0;
    double reg = 0.0;
    double entropy = 0.0;
    double weight = 0.0;
    double total = 0.0;
    std::vector<double> reg_per_layer;
};

struct ComposedLoss {
    Var total;
    LossBreakdown breakdown;
};

// (1/N) sum_i ||pred_i - target_i||^2, rows of pred are the batch.
Var mse_loss(Tape& tape, Var pred, const Tensor& target);

// Same loss over per-sample prediction matrices (the network's native shape).
Var mse_loss_batch(Tape& tape, const std::vector<Var>& preds,
                   const std::vector<Tensor>& targets);

// sum_l |nu_l - nu_tgt|; L1 with sign(0) = 0.
Var rank_reg_loss(Tape& tape, const std::vector<Var>& nus, double nu_tgt);

// -(1/|C|) sum_maps E_p[log p], each map averaged over its rows (a map may
// stack the batch along rows). Rows must sum to 1 within 1e-9.
Var attention_entropy_loss(Tape& tape, const std::vector<Var>& maps);

// sum over active adapter entries of value^2 / (2 sigma_theta^2).
Var weight_prior_loss(Tape& tape, const std::vector<AdaptiveLoraLayer>& layers,
                      double sigma_theta);

// total = mse + lambda_r * reg + lambda_e * entropy + lambda_w * weight,
// composed in exactly that order.
ComposedLoss total_loss(Tape& tape, Var mse, Var reg, Var entropy, Var weight, double lambda_r,
                        double lambda_e, double lambda_w);

// The two Gaussian log-ratio sums of the variational objective, evaluated at
// the variational point parameters. Report-only; never part of the training
// loss.
struct VariationalDiagnostic {
    double rank_term = 0.0;
    double weight_term = 0.0;
};

VariationalDiagnostic variational_diagnostic(const std::vector<AdaptiveLoraLayer>& layers,
                                             const HyperPrior& prior);

} // namespace lora2
