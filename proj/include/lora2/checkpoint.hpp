#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lora2/toy_net.hpp"

namespace lora2 {

// One serialized adapter: only the active slices are stored, the importance
// diagonal never is (it has a single source of truth, nu).
struct AdapterRecord {
    std::string name;
    std::uint32_t m = 0;
    std::uint32_t n = 0;
    std::uint32_t d = 0;
    double nu = 0.0;
    std::vector<float> b_active; // m*d row-major
    std::vector<float> a_active; // d*n row-major
};

inline constexpr char checkpoint_magic[4] = {'A', 'L', 'R', '2'};
inline constexpr std::uint32_t checkpoint_version = 1;

// 12 + sum_l (24 + name_len_l + 4*d_l*(m_l+n_l))
std::int64_t checkpoint_bytes(const std::vector<AdapterRecord>& records);
std::int64_t checkpoint_bytes(const ToyNet& model);

// Trainable footprint at the current ranks: sum_l d_l*(m_l+n_l) plus one rank
// rate per layer, and the exact serialized size.
struct ParamCount {
    std::int64_t params = 0;
    std::int64_t bytes = 0;
};
ParamCount active_param_count(const ToyNet& model);

std::vector<AdapterRecord> model_records(const ToyNet& model);

// Little-endian layout: magic(4) | version u32 | layer_count u32 | per layer:
// name_len u32, name, m u32, n u32, d u32, nu f64, B active f32, A active f32.
// Returns bytes written; refuses non-finite weights.
std::int64_t save_checkpoint(const std::vector<AdapterRecord>& records,
                             const std::string& path);
std::int64_t save_checkpoint(const ToyNet& model, const std::string& path);

// Throws MagicMismatchError / TruncatedFileError on malformed files.
std::vector<AdapterRecord> load_checkpoint_records(const std::string& path);

// Restores the records onto a model built from the same base. Names and
// (m, n) must match; nu is re-anchored so the positivity mapping reproduces
// the stored value exactly; the stored d wins over the recomputed effective
// rank (with a warning on mismatch).
void apply_records(ToyNet& model, const std::vector<AdapterRecord>& records);

void load_checkpoint(const std::string& path, ToyNet& model);

} // namespace lora2
