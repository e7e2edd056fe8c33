// Command-line front end: train / sweep / gradcheck / report / selftest.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lora2/checkpoint.hpp"
#include "lora2/config_file.hpp"
#include "lora2/error.hpp"
#include "lora2/reports.hpp"
#include "lora2/selfcheck.hpp"
#include "lora2/trainer.hpp"

namespace {

using namespace lora2;

int cmd_train(const std::string& config_path, const std::string& outdir, bool has_seed,
              std::uint64_t seed) {
    TrainConfig config = load_config_file(config_path);
    if (has_seed) config.seed = seed;
    config.validate();

    TrainResult result = train_run(config);
    std::filesystem::create_directories(outdir);
    export_reports(result.history, config, result.model, outdir);
    const std::string ckpt_path = outdir + "/adapter.alr2";
    const std::int64_t bytes = save_checkpoint(result.model, ckpt_path);

    std::printf("steps=%zu final_mse=%.6g initial_mse=%.6g checkpoint=%s (%lld bytes)\n",
                result.history.steps.size(), result.history.final_mse,
                result.history.initial_mse, ckpt_path.c_str(),
                static_cast<long long>(bytes));
    std::printf("final ranks:");
    for (std::size_t i = 0; i < result.model.layers.size(); ++i)
        std::printf(" %s=%d", result.model.layers[i].base.name.c_str(),
                    result.history.final_ranks[i]);
    std::printf("\n");
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& ranks_csv,
              const std::string& outdir) {
    TrainConfig config = load_config_file(config_path);
    config.validate();

    std::vector<int> ranks;
    std::stringstream ss(ranks_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            ranks.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("sweep: bad rank '" + item + "'");
        }
    }
    if (ranks.empty()) throw ConfigError("sweep: no ranks given");

    SweepResult result = sweep(config, ranks);
    std::filesystem::create_directories(outdir);
    export_sweep_table(result.rows, outdir);
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
        const SweepRow& row = result.rows[i];
        const std::string ckpt = outdir + "/" + row.label + ".alr2";
        save_checkpoint(result.runs[i].model, ckpt);
        std::printf("%-12s final_mse=%-12.6g params=%-8lld bytes=%lld\n", row.label.c_str(),
                    row.final_mse, static_cast<long long>(row.params),
                    static_cast<long long>(row.bytes));
    }
    return 0;
}

int cmd_report(const std::string& ckpt_path) {
    const std::vector<AdapterRecord> records = load_checkpoint_records(ckpt_path);
    const std::int64_t bytes =
        static_cast<std::int64_t>(std::filesystem::file_size(ckpt_path));
    std::printf("%-16s %6s %6s %6s %12s\n", "layer", "m", "n", "D", "nu");
    for (const AdapterRecord& r : records)
        std::printf("%-16s %6u %6u %6u %12.6g\n", r.name.c_str(), r.m, r.n, r.d, r.nu);
    std::printf("%zu layers, %lld bytes\n", records.size(), static_cast<long long>(bytes));
    return 0;
}

int cmd_gradcheck(int trials) {
    std::printf("gradient suite (%d trials)\n", trials);
    const auto checks = selfcheck::gradient_suite(trials, 20240901ULL);
    return selfcheck::report(checks) == 0 ? 0 : 2;
}

int cmd_selftest() {
    std::printf("property suite\n");
    const std::string tmpdir =
        (std::filesystem::temp_directory_path() / "lora2_selftest").string();
    auto checks = selfcheck::property_suite(20240902ULL, tmpdir);
    const auto grads = selfcheck::gradient_suite(10, 20240903ULL);
    checks.insert(checks.end(), grads.begin(), grads.end());
    return selfcheck::report(checks) == 0 ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive-rank LoRA trainer and benchmark harness"};
    app.require_subcommand(1);

    std::string config_path, outdir = "out", ckpt_path;
    std::string ranks_csv = "8,16,32,64,128,256,512";
    std::uint64_t seed = 0;
    int trials = 50;

    CLI::App* train = app.add_subcommand("train", "run one training configuration");
    train->add_option("--config", config_path, "key=value config file")->required();
    train->add_option("--out", outdir, "output directory");
    CLI::Option* seed_opt = train->add_option("--seed", seed, "override config seed");

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "fixed-rank sweep plus adaptive run");
    sweep_cmd->add_option("--config", config_path, "key=value config file")->required();
    sweep_cmd->add_option("--ranks", ranks_csv, "comma-separated fixed ranks");
    sweep_cmd->add_option("--out", outdir, "output directory");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--trials", trials, "instances per check");

    CLI::App* report_cmd = app.add_subcommand("report", "print checkpoint contents");
    report_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();

    app.add_subcommand("selftest", "run all property suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("train"))
            return cmd_train(config_path, outdir, seed_opt->count() > 0, seed);
        if (app.got_subcommand("sweep")) return cmd_sweep(config_path, ranks_csv, outdir);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck(trials);
        if (app.got_subcommand("report")) return cmd_report(ckpt_path);
        if (app.got_subcommand("selftest")) return cmd_selftest();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const TrainAbort& e) {
        std::cerr << "training aborted:\n" << e.what();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
