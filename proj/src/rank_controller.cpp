#include "lora2/rank_controller.hpp"

#include <algorithm>
#include <cmath>

#include "lora2/error.hpp"

namespace lora2 {

namespace {

void check_nu(double nu) {
    if (!(nu > 0.0)) throw DomainError("rank rate nu must be positive, got " + std::to_string(nu));
}

void check_q(double q) {
    if (!(q > 0.0 && q < 1.0))
        throw DomainError("quantile q must lie in (0,1), got " + std::to_string(q));
}

} // namespace

double pmf(int j, double nu) {
    check_nu(nu);
    if (j < 0) throw DomainError("pmf index must be >= 0");
    // -expm1(-nu) avoids cancellation in 1 - e^{-nu} for small nu
    return std::exp(-nu * j) * (-std::expm1(-nu));
}

int effective_rank(double nu, double q, int r_max) {
    check_nu(nu);
    check_q(q);
    if (r_max < 1) throw DomainError("r_max must be >= 1");
    double t = -std::log1p(-q) / nu;
    const double snapped = std::round(t);
    if (std::abs(t - snapped) < 1e-9) t = snapped;
    double d = std::ceil(t);
    d = std::min(d, static_cast<double>(r_max));
    d = std::max(d, 1.0);
    return static_cast<int>(d);
}

double nu_target(double q, int r_target) {
    check_q(q);
    if (r_target < 1) throw DomainError("r_target must be >= 1");
    return -std::log1p(-q) / static_cast<double>(r_target);
}

double truncated_mass(double nu, int d) {
    check_nu(nu);
    if (d < 0) throw DomainError("truncated_mass: d must be >= 0");
    return std::exp(-nu) - std::exp(-nu * (d + 1.0));
}

double softplus(double raw) {
    // matches the graph construction log(1 + exp(raw)) for the values seen in
    // training; guard the overflow branch anyway
    if (raw > 30.0) return raw + std::log1p(std::exp(-raw));
    return std::log(1.0 + std::exp(raw));
}

double softplus_inverse(double nu) {
    check_nu(nu);
    if (nu > 30.0) return nu;
    return std::log(std::expm1(nu));
}

RankParameter RankParameter::init(double q, int r_max, int r_init) {
    check_q(q);
    if (r_max < 1) throw DomainError("r_max must be >= 1");
    if (r_init < 1 || r_init > r_max)
        throw DomainError("r_init must lie in [1, r_max], got " + std::to_string(r_init));
    RankParameter p;
    p.q = q;
    p.r_max = r_max;
    p.raw = softplus_inverse(nu_target(q, r_init));
    p.d = r_init;
    return p;
}

double RankParameter::nu() const {
    // softplus underflows to 0 for very negative raw; floor keeps the
    // quantile defined (the rank then simply caps at r_max)
    return std::max(softplus(raw), 1e-12);
}

int RankParameter::refresh() {
    d = effective_rank(nu(), q, r_max);
    return d;
}

Var nu_from_raw(Tape& tape, Var raw) {
    Var one = tape.scalar(1.0);
    return log(add(one, exp(raw)));
}

Var importance_spectrum(Tape& tape, Var nu, int d) {
    if (d < 1) throw DomainError("importance_spectrum: d must be >= 1");
    if (nu.value().size() != 1)
        throw ShapeError("importance_spectrum: nu must be scalar, got " + nu.value().shape_str());

    // [e^{-nu*1}, ..., e^{-nu*d}] via nu * [-1..-d], then scaled by (1 - e^{-nu})
    Tensor neg_idx(1, static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) neg_idx.data[static_cast<std::size_t>(j)] = -(j + 1.0);
    Var decay = exp(matmul(nu, tape.constant(std::move(neg_idx))));

    Var one = tape.scalar(1.0);
    Var head = sub(one, exp(scale(nu, -1.0)));
    return diag_lmul(head, decay);
}

} // namespace lora2
