#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lora2/tensor.hpp"

namespace lora2 {

// Deterministic random stream. Gaussians use an uncached Box-Muller so the
// draw sequence depends only on the engine state, not on library internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() {
        // 53-bit mantissa uniform in [0, 1)
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    std::uint64_t next_u64() { return engine_(); }

    Tensor gaussian_tensor(std::size_t rows, std::size_t cols, double stddev = 1.0) {
        Tensor t(rows, cols);
        for (double& v : t.data) v = stddev * gaussian();
        return t;
    }

private:
    std::mt19937_64 engine_;
};

// Stable derivation of sub-stream seeds (base model, teacher, dataset, layers...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the pair
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace lora2
