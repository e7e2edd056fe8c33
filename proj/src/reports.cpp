#include "lora2/reports.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lora2/config_file.hpp"
#include "lora2/error.hpp"

namespace lora2 {

namespace {

std::string double_str(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("export_reports: cannot write " + path);
    return out;
}

} // namespace

std::vector<std::string> export_reports(const TrainHistory& history,
                                        const TrainConfig& config, const ToyNet& model,
                                        const std::string& outdir) {
    std::filesystem::create_directories(outdir);
    std::vector<std::string> written;

    {
        const std::string path = outdir + "/metrics.csv";
        std::ofstream out = open_out(path);
        out << "step,total,mse,reg,entropy,weight,active_params,bytes\n";
        for (const StepRecord& rec : history.steps)
            out << rec.step << ',' << double_str(rec.loss.total) << ','
                << double_str(rec.loss.mse) << ',' << double_str(rec.loss.reg) << ','
                << double_str(rec.loss.entropy) << ',' << double_str(rec.loss.weight) << ','
                << rec.active_params << ',' << rec.checkpoint_bytes << '\n';
        written.push_back(path);
    }

    {
        const std::string path = outdir + "/ranks.csv";
        std::ofstream out = open_out(path);
        out << "layer_name,kind,final_rank,step,rank\n";
        auto emit = [&](long step, const std::vector<int>& ranks) {
            for (std::size_t i = 0; i < model.layers.size(); ++i)
                out << model.layers[i].base.name << ','
                    << kind_name(model.layers[i].base.kind) << ',' << history.final_ranks[i]
                    << ',' << step << ',' << ranks[i] << '\n';
        };
        emit(0, history.initial_ranks);
        // snapshot every refresh that actually resized something
        const std::vector<int>* prev = &history.initial_ranks;
        for (const StepRecord& rec : history.steps) {
            if (rec.ranks != *prev) emit(rec.step, rec.ranks);
            prev = &rec.ranks;
        }
        written.push_back(path);
    }

    {
        const std::string path = outdir + "/summary.json";
        nlohmann::ordered_json j;
        j["config"] = nlohmann::ordered_json::object();
        // echo the exact key=value form
        {
            std::istringstream cfg(serialize_config(config));
            std::string line;
            while (std::getline(cfg, line)) {
                const std::size_t eq = line.find('=');
                if (eq != std::string::npos)
                    j["config"][line.substr(0, eq)] = line.substr(eq + 1);
            }
        }
        j["steps"] = history.steps.size();
        j["initial_mse"] = history.initial_mse;
        j["final_mse"] = history.final_mse;
        j["initial_entropy"] = history.initial_entropy;
        j["final_entropy"] = history.final_entropy;
        j["final_total"] =
            history.steps.empty() ? 0.0 : history.steps.back().loss.total;
        j["active_params"] = history.final_params;
        j["checkpoint_bytes"] = history.final_bytes;
        j["wall_ms"] = history.wall_ms_total;
        j["variational_rank_term"] = history.final_diagnostic.rank_term;
        j["variational_weight_term"] = history.final_diagnostic.weight_term;
        j["layers"] = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < model.layers.size(); ++i) {
            nlohmann::ordered_json layer;
            layer["name"] = model.layers[i].base.name;
            layer["kind"] = kind_name(model.layers[i].base.kind);
            layer["rank"] = history.final_ranks[i];
            layer["nu"] = model.layers[i].nu_value();
            j["layers"].push_back(std::move(layer));
        }
        std::ofstream out = open_out(path);
        out << j.dump(2) << '\n';
        written.push_back(path);
    }

    return written;
}

std::string export_sweep_table(const std::vector<SweepRow>& rows, const std::string& outdir) {
    std::filesystem::create_directories(outdir);
    const std::string path = outdir + "/tradeoff.csv";
    std::ofstream out = open_out(path);
    out << "label,final_mse,params,bytes\n";
    for (const SweepRow& row : rows)
        out << row.label << ',' << double_str(row.final_mse) << ',' << row.params << ','
            << row.bytes << '\n';
    return path;
}

} // namespace lora2
