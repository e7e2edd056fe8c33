#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lora2/checkpoint.hpp"
#include "lora2/config_file.hpp"
#include "lora2/error.hpp"
#include "lora2/reports.hpp"
#include "lora2/rng.hpp"
#include "lora2/selfcheck.hpp"
#include "lora2/trainer.hpp"

using namespace lora2;

namespace {

const std::string tmpdir = std::filesystem::temp_directory_path() / "lora2_test_io";

std::string tmp_path(const std::string& name) {
    std::filesystem::create_directories(tmpdir);
    return tmpdir + "/" + name;
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

ToyTask small_task() {
    ToyTask task;
    task.spec.d_model = 8;
    task.spec.k_tokens = 3;
    task.spec.d_cond = 8;
    task.spec.patch_slots = 2;
    task.planted_ranks = {1, 2, 3, 1, 2, 1, 3, 1, 2};
    task.n_samples = 16;
    return task;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("config round-trip and strictness") {
    TrainConfig c;
    CHECK(parse_config(serialize_config(c)) == c);

    c.mode = LayerMode::FixedRank;
    c.fixed_rank = 32;
    c.seed = 18446744073709551615ULL;
    c.lambda_w = 0.12345678901234567;
    CHECK(parse_config(serialize_config(c)) == c);

    CHECK(selfcheck::config_roundtrip(200, 1).pass);

    CHECK_THROWS_AS(parse_config(serialize_config(c) + "bogus_key=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(serialize_config(c) + "q=0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("q=0.9\n"), ConfigError); // missing keys
    CHECK_THROWS_AS(parse_config(serialize_config(c) + "nonsense line\n"), ConfigError);

    // comments and blank lines are tolerated
    TrainConfig parsed = parse_config("# comment\n\n" + serialize_config(c));
    CHECK(parsed == c);

    const std::string path = tmp_path("config.cfg");
    save_config_file(c, path);
    CHECK(load_config_file(path) == c);
}

TEST_CASE("worked byte-size example: one 8x8 layer named q at d 2 is 165 bytes") {
    AdapterRecord r;
    r.name = "q";
    r.m = 8;
    r.n = 8;
    r.d = 2;
    r.nu = nu_target(0.9, 2);
    r.b_active.assign(16, 0.0F);
    r.a_active.assign(16, 0.25F);

    const std::string path = tmp_path("worked.alr2");
    const std::int64_t bytes = save_checkpoint({r}, path);
    CHECK(bytes == 165);
    CHECK(static_cast<std::int64_t>(std::filesystem::file_size(path)) == 165);
    CHECK(checkpoint_bytes(std::vector<AdapterRecord>{r}) == 165);

    const auto loaded = load_checkpoint_records(path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].name == "q");
    CHECK(loaded[0].d == 2);
    CHECK(loaded[0].nu == r.nu);
}

TEST_CASE("empty record set serializes to 12 bytes") {
    const std::string path = tmp_path("empty.alr2");
    CHECK(save_checkpoint(std::vector<AdapterRecord>{}, path) == 12);
    CHECK(std::filesystem::file_size(path) == 12);
    CHECK(load_checkpoint_records(path).empty());
}

TEST_CASE("round-trip reproduces forwards bitwise at payload precision") {
    TrainConfig config;
    config.r_init = 3;
    config.r_max = 8;
    config.steps = 25;
    config.seed = 9;
    ToyTask task = small_task();
    TrainResult trained = train_run(config, task);
    ToyNet& model = trained.model;

    const std::string path = tmp_path("roundtrip.alr2");
    const std::int64_t bytes = save_checkpoint(model, path);
    CHECK(bytes == checkpoint_bytes(model));
    const ParamCount footprint = active_param_count(model);
    CHECK(footprint.bytes == bytes);
    CHECK(footprint.params == model.active_params());

    // fresh model from the same base, overwritten by the checkpoint
    ToyNet restored = build_toy_net(task.spec, config.adapter_settings(), config.seed);
    load_checkpoint(path, restored);

    // quantize the trained model in place to payload precision
    for (AdaptiveLoraLayer& l : model.layers) {
        Tensor& b = l.b_buf.tape->leaf_value(l.b_buf);
        Tensor& a = l.a_buf.tape->leaf_value(l.a_buf);
        for (double& v : b.data) v = static_cast<double>(static_cast<float>(v));
        for (double& v : a.data) v = static_cast<double>(static_cast<float>(v));
    }

    Rng rng(10);
    for (int i = 0; i < 20; ++i) {
        const Tensor patches = rng.gaussian_tensor(task.spec.d_model, task.spec.patch_slots);
        const Tensor cond = rng.gaussian_tensor(task.spec.d_cond, task.spec.k_tokens);
        CHECK(bitwise_equal(model.eval_output(patches, cond, true),
                            restored.eval_output(patches, cond, true)));
    }

    // save -> load -> save is byte-identical
    const std::string path2 = tmp_path("roundtrip2.alr2");
    save_checkpoint(restored, path2);
    CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("distinct errors: magic, truncation, shape, nonfinite refuse") {
    TrainConfig config;
    config.r_init = 2;
    config.r_max = 4;
    config.steps = 0;
    ToyTask task = small_task();
    TrainResult r = train_run(config, task);

    const std::string path = tmp_path("errors.alr2");
    save_checkpoint(r.model, path);

    // corrupt magic
    {
        auto bytes = read_bytes(path);
        bytes[0] = 'X';
        std::ofstream out(tmp_path("bad_magic.alr2"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint_records(tmp_path("bad_magic.alr2")), MagicMismatchError);

    // truncate
    {
        auto bytes = read_bytes(path);
        bytes.resize(bytes.size() / 2);
        std::ofstream out(tmp_path("trunc.alr2"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint_records(tmp_path("trunc.alr2")), TruncatedFileError);

    // shape mismatch against a differently-sized base
    ToyTask other = small_task();
    other.spec.d_model = 6;
    other.spec.d_cond = 6;
    ToyNet wrong = build_toy_net(other.spec, config.adapter_settings(), config.seed);
    CHECK_THROWS_AS(load_checkpoint(path, wrong), CheckpointShapeError);

    // non-finite weights are refused
    Tensor& b = r.model.layers[0].b_buf.tape->leaf_value(r.model.layers[0].b_buf);
    b.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(save_checkpoint(r.model, tmp_path("nan.alr2")), EvalError);
}

TEST_CASE("stored d wins over the recomputed effective rank") {
    TrainConfig config;
    config.r_init = 2;
    config.r_max = 8;
    config.steps = 0;
    ToyTask task = small_task();
    TrainResult r = train_run(config, task);

    auto records = model_records(r.model);
    // declare d inconsistent with nu on one layer
    records[0].d = 4;
    records[0].b_active.assign(records[0].m * 4, 0.5F);
    records[0].a_active.assign(4 * records[0].n, 0.5F);
    const std::string path = tmp_path("dwins.alr2");
    save_checkpoint(records, path);

    ToyNet restored = build_toy_net(task.spec, config.adapter_settings(), config.seed);
    load_checkpoint(path, restored); // warns on stderr
    CHECK(restored.layers[0].rank.d == 4);
}

TEST_CASE("checkpoint formula over random models") {
    CHECK(selfcheck::checkpoint_formula(50, 2, tmp_path("")).pass);
}

TEST_CASE("exported reports are consistent with the history and checkpoint") {
    TrainConfig config;
    config.r_init = 3;
    config.r_max = 8;
    config.steps = 20;
    config.lambda_r = 0.3; // force some rank movement so ranks.csv has snapshots
    ToyTask task = small_task();
    TrainResult result = train_run(config, task);

    const std::string outdir = tmp_path("reports");
    export_reports(result.history, config, result.model, outdir);

    // metrics.csv rows == steps
    {
        std::ifstream in(outdir + "/metrics.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "step,total,mse,reg,entropy,weight,active_params,bytes");
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == config.steps);
    }

    const std::string ckpt = outdir + "/adapter.alr2";
    const std::int64_t bytes = save_checkpoint(result.model, ckpt);
    const auto records = load_checkpoint_records(ckpt);

    // ranks.csv final ranks equal the checkpoint's d values
    {
        std::ifstream in(outdir + "/ranks.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "layer_name,kind,final_rank,step,rank");
        bool any = false;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            any = true;
            const std::size_t c1 = line.find(',');
            const std::size_t c2 = line.find(',', c1 + 1);
            const std::size_t c3 = line.find(',', c2 + 1);
            const std::string name = line.substr(0, c1);
            const int final_rank = std::stoi(line.substr(c2 + 1, c3 - c2 - 1));
            for (const auto& rec : records)
                if (rec.name == name) CHECK(final_rank == static_cast<int>(rec.d));
        }
        CHECK(any);
    }

    // summary.json byte count equals the save_checkpoint return
    {
        std::ifstream in(outdir + "/summary.json");
        nlohmann::json j;
        in >> j;
        CHECK(j["checkpoint_bytes"].get<std::int64_t>() == bytes);
        CHECK(j["layers"].size() == result.model.layers.size());
        for (std::size_t i = 0; i < records.size(); ++i)
            CHECK(j["layers"][i]["rank"].get<int>() == static_cast<int>(records[i].d));
    }

    // steps = 0 still writes a header-only metrics.csv
    TrainConfig zero = config;
    zero.steps = 0;
    TrainResult empty = train_run(zero, task);
    const std::string outdir2 = tmp_path("reports_empty");
    export_reports(empty.history, zero, empty.model, outdir2);
    std::ifstream in(outdir2 + "/metrics.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,total,mse,reg,entropy,weight,active_params,bytes");
    CHECK_FALSE(std::getline(in, line));
}
