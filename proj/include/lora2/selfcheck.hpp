#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lora2::selfcheck {

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

using CheckList = std::vector<Check>;

// Finite-difference gradient checks (64-bit, central differences, h = 1e-5).
Check ad_core_ops_fd(int trials, std::uint64_t seed);   // rel err <= 1e-6
Check layer_loss_fd(int trials, std::uint64_t seed);    // rel err <= 1e-4 (B, A, raw nu)
Check entropy_fd(int trials, std::uint64_t seed);       // rel err <= 1e-5
Check toy_net_nu_fd(int trials, std::uint64_t seed);    // rel err <= 1e-4, full L_total

// Analytic / structural properties.
Check telescoping(int trials, std::uint64_t seed);      // abs err <= 1e-12
Check controller_inverse_pair();                        // exact over q x r grid
Check rank_monotonicity(int trials, std::uint64_t seed);
Check spectrum_shape(int trials, std::uint64_t seed);
Check zero_init_equivalence(int inputs, std::uint64_t seed); // bitwise
Check growth_continuity(int trials, std::uint64_t seed);     // bitwise
Check shrink_truncation_bound(int trials, std::uint64_t seed);
Check factored_dense_agreement(int trials, std::uint64_t seed); // rel <= 1e-10
Check adam_reference(int steps, std::uint64_t seed);            // abs <= 1e-12
Check checkpoint_formula(int models, std::uint64_t seed, const std::string& tmpdir);
Check config_roundtrip(int trials, std::uint64_t seed);
Check loss_composition(int trials, std::uint64_t seed);

CheckList gradient_suite(int trials, std::uint64_t seed);
CheckList property_suite(std::uint64_t seed, const std::string& tmpdir);

// Prints one line per check; returns the number of failures.
int report(const CheckList& checks);

} // namespace lora2::selfcheck
