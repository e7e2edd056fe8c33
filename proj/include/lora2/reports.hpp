#pragma once

#include <string>
#include <vector>

#include "lora2/toy_net.hpp"
#include "lora2/trainer.hpp"

namespace lora2 {

// Writes metrics.csv, ranks.csv, and summary.json under outdir; returns the
// paths written. CSVs use a header row, '.' decimals, and '\n' endings.
std::vector<std::string> export_reports(const TrainHistory& history,
                                        const TrainConfig& config, const ToyNet& model,
                                        const std::string& outdir);

// tradeoff.csv for a sweep (label, final_mse, params, bytes).
std::string export_sweep_table(const std::vector<SweepRow>& rows, const std::string& outdir);

} // namespace lora2
