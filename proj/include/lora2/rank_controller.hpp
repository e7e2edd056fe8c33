#pragma once

#include "lora2/autodiff.hpp"
#include "lora2/tensor.hpp"

namespace lora2 {

// Discretized exponential mass at index j: e^{-nu*j} * (1 - e^{-nu}).
// Equals the CDF difference (1 - e^{-nu(j+1)}) - (1 - e^{-nu*j}).
double pmf(int j, double nu);

// Quantile-defined effective rank: D = clamp(ceil(t), 1, r_max) with
// t = -ln(1-q)/nu. Values within 1e-9 of an integer snap to it before the
// ceiling, so effective_rank(nu_target(q, r), q, r_max) == r exactly.
int effective_rank(double nu, double q, int r_max);

// Rate whose effective rank equals r_target: -ln(1-q)/r_target.
double nu_target(double q, int r_target);

// sum_{j=1..d} pmf(j, nu), in closed form e^{-nu} - e^{-nu(d+1)}.
double truncated_mass(double nu, int d);

// Smooth positivity map for the learnable rank rate and its inverse.
double softplus(double raw);
double softplus_inverse(double nu);

// Per-layer learnable rank rate. `raw` is the unconstrained value that lives
// on the tape; nu = softplus(raw) stays positive everywhere. `d` is refreshed
// from nu and is a stop-gradient quantity: rank changes are discrete resize
// events, never a differentiable path.
struct RankParameter {
    double raw = 0.0;
    double q = 0.9;
    int r_max = 512;
    int d = 1;

    static RankParameter init(double q, int r_max, int r_init);

    double nu() const;

    // Recomputes d from the current raw value; returns the new d.
    int refresh();
};

// Differentiable importance vector [f(1;nu), ..., f(d;nu)] as a 1xd Var,
// assembled from graph ops so the gradient to nu needs no hand-coded rule.
Var importance_spectrum(Tape& tape, Var nu, int d);

// nu as a graph node: softplus(raw) built from exp/log ops.
Var nu_from_raw(Tape& tape, Var raw);

} // namespace lora2
