#include "lora2/config_file.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "lora2/error.hpp"

namespace lora2 {

namespace {

std::string double_str(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string mode_str(const TrainConfig& c) {
    if (c.mode == LayerMode::Adaptive) return "adaptive";
    return "fixed_rank(" + std::to_string(c.fixed_rank) + ")";
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: bad value for " + key + ": '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config: trailing junk in " + key + ": '" + v + "'");
    return out;
}

long parse_long(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long out;
    try {
        out = std::stol(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: bad value for " + key + ": '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config: trailing junk in " + key + ": '" + v + "'");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    std::uint64_t out;
    try {
        out = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: bad value for " + key + ": '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config: trailing junk in " + key + ": '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad value for " + key + ": '" + v + "'");
}

} // namespace

std::string serialize_config(const TrainConfig& c) {
    std::ostringstream os;
    os << "q=" << double_str(c.q) << "\n"
       << "r_init=" << c.r_init << "\n"
       << "r_target=" << c.r_target << "\n"
       << "r_max=" << c.r_max << "\n"
       << "lambda_r=" << double_str(c.lambda_r) << "\n"
       << "lambda_e=" << double_str(c.lambda_e) << "\n"
       << "lambda_w=" << double_str(c.lambda_w) << "\n"
       << "learning_rate=" << double_str(c.learning_rate) << "\n"
       << "nu_learning_rate=" << double_str(c.nu_learning_rate) << "\n"
       << "steps=" << c.steps << "\n"
       << "batch_size=" << c.batch_size << "\n"
       << "rank_refresh_interval=" << c.rank_refresh_interval << "\n"
       << "mode=" << mode_str(c) << "\n"
       << "seed=" << c.seed << "\n"
       << "grow_random_b=" << (c.grow_random_b ? "true" : "false") << "\n"
       << "sigma_theta=" << double_str(c.sigma_theta) << "\n"
       << "mu_lambda=" << double_str(c.mu_lambda) << "\n"
       << "sigma_lambda=" << double_str(c.sigma_lambda) << "\n";
    return os.str();
}

TrainConfig parse_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key=value, got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (kv.count(key)) throw ConfigError("config: duplicate key '" + key + "'");
        kv[key] = value;
    }

    static const char* keys[] = {
        "q",          "r_init",           "r_target",   "r_max",
        "lambda_r",   "lambda_e",         "lambda_w",   "learning_rate",
        "nu_learning_rate", "steps",      "batch_size", "rank_refresh_interval",
        "mode",       "seed",             "grow_random_b", "sigma_theta",
        "mu_lambda",  "sigma_lambda",
    };
    for (const auto& [key, value] : kv) {
        bool known = false;
        for (const char* k : keys)
            if (key == k) known = true;
        if (!known) throw ConfigError("config: unknown key '" + key + "'");
    }
    for (const char* k : keys)
        if (!kv.count(k)) throw ConfigError("config: missing key '" + std::string(k) + "'");

    TrainConfig c;
    c.q = parse_double("q", kv["q"]);
    c.r_init = static_cast<int>(parse_long("r_init", kv["r_init"]));
    c.r_target = static_cast<int>(parse_long("r_target", kv["r_target"]));
    c.r_max = static_cast<int>(parse_long("r_max", kv["r_max"]));
    c.lambda_r = parse_double("lambda_r", kv["lambda_r"]);
    c.lambda_e = parse_double("lambda_e", kv["lambda_e"]);
    c.lambda_w = parse_double("lambda_w", kv["lambda_w"]);
    c.learning_rate = parse_double("learning_rate", kv["learning_rate"]);
    c.nu_learning_rate = parse_double("nu_learning_rate", kv["nu_learning_rate"]);
    c.steps = parse_long("steps", kv["steps"]);
    c.batch_size = static_cast<std::size_t>(parse_long("batch_size", kv["batch_size"]));
    c.rank_refresh_interval =
        parse_long("rank_refresh_interval", kv["rank_refresh_interval"]);
    c.seed = parse_u64("seed", kv["seed"]);
    c.grow_random_b = parse_bool("grow_random_b", kv["grow_random_b"]);
    c.sigma_theta = parse_double("sigma_theta", kv["sigma_theta"]);
    c.mu_lambda = parse_double("mu_lambda", kv["mu_lambda"]);
    c.sigma_lambda = parse_double("sigma_lambda", kv["sigma_lambda"]);

    const std::string mode = kv["mode"];
    if (mode == "adaptive") {
        c.mode = LayerMode::Adaptive;
    } else if (mode.rfind("fixed_rank(", 0) == 0 && mode.back() == ')') {
        c.mode = LayerMode::FixedRank;
        c.fixed_rank = static_cast<int>(
            parse_long("mode", mode.substr(11, mode.size() - 12)));
    } else {
        throw ConfigError("config: mode must be 'adaptive' or 'fixed_rank(N)', got '" + mode +
                          "'");
    }
    return c;
}

TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void save_config_file(const TrainConfig& config, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("config: cannot write " + path);
    out << serialize_config(config);
}

} // namespace lora2
