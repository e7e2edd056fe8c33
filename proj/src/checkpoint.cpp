#include "lora2/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>

#include "lora2/error.hpp"
#include "lora2/rank_controller.hpp"

namespace lora2 {

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw TruncatedFileError("checkpoint: unexpected end of file");
    return value;
}

// Finds a raw value whose softplus reproduces nu bitwise. Such a preimage
// exists whenever nu came out of softplus (i.e. out of a real save); for
// hand-made values the closest candidate is used.
double softplus_preimage(double nu) {
    double raw = softplus_inverse(nu);
    if (softplus(raw) == nu) return raw;
    double best = raw;
    double best_err = std::abs(softplus(raw) - nu);
    double up = raw, down = raw;
    for (int i = 0; i < 8; ++i) {
        up = std::nextafter(up, std::numeric_limits<double>::infinity());
        down = std::nextafter(down, -std::numeric_limits<double>::infinity());
        for (double cand : {up, down}) {
            const double err = std::abs(softplus(cand) - nu);
            if (err == 0.0) return cand;
            if (err < best_err) {
                best_err = err;
                best = cand;
            }
        }
    }
    return best;
}

} // namespace

std::int64_t checkpoint_bytes(const std::vector<AdapterRecord>& records) {
    std::int64_t total = 12;
    for (const AdapterRecord& r : records)
        total += 24 + static_cast<std::int64_t>(r.name.size()) +
                 4LL * r.d * (static_cast<std::int64_t>(r.m) + r.n);
    return total;
}

std::int64_t checkpoint_bytes(const ToyNet& model) {
    std::int64_t total = 12;
    for (const AdaptiveLoraLayer& l : model.layers)
        total += 24 + static_cast<std::int64_t>(l.base.name.size()) +
                 4LL * l.rank.d * static_cast<std::int64_t>(l.m() + l.n());
    return total;
}

ParamCount active_param_count(const ToyNet& model) {
    return {model.active_params(), checkpoint_bytes(model)};
}

std::vector<AdapterRecord> model_records(const ToyNet& model) {
    std::vector<AdapterRecord> records;
    records.reserve(model.layers.size());
    for (const AdaptiveLoraLayer& l : model.layers) {
        AdapterRecord r;
        r.name = l.base.name;
        r.m = static_cast<std::uint32_t>(l.m());
        r.n = static_cast<std::uint32_t>(l.n());
        r.d = static_cast<std::uint32_t>(l.rank.d);
        r.nu = l.nu_value();
        const Tensor& b = l.b_buf.value();
        const Tensor& a = l.a_buf.value();
        r.b_active.reserve(static_cast<std::size_t>(r.m) * r.d);
        for (std::size_t i = 0; i < b.rows; ++i)
            for (std::size_t j = 0; j < r.d; ++j)
                r.b_active.push_back(static_cast<float>(b.at(i, j)));
        r.a_active.reserve(static_cast<std::size_t>(r.d) * r.n);
        for (std::size_t i = 0; i < r.d; ++i)
            for (std::size_t j = 0; j < a.cols; ++j)
                r.a_active.push_back(static_cast<float>(a.at(i, j)));
        records.push_back(std::move(r));
    }
    return records;
}

std::int64_t save_checkpoint(const std::vector<AdapterRecord>& records,
                             const std::string& path) {
    for (const AdapterRecord& r : records) {
        if (!std::isfinite(r.nu)) throw EvalError("save_checkpoint: non-finite nu in " + r.name);
        for (float v : r.b_active)
            if (!std::isfinite(v))
                throw EvalError("save_checkpoint: non-finite B weight in " + r.name);
        for (float v : r.a_active)
            if (!std::isfinite(v))
                throw EvalError("save_checkpoint: non-finite A weight in " + r.name);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);

    out.write(checkpoint_magic, 4);
    write_raw(out, checkpoint_version);
    write_raw(out, static_cast<std::uint32_t>(records.size()));
    for (const AdapterRecord& r : records) {
        write_raw(out, static_cast<std::uint32_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        write_raw(out, r.m);
        write_raw(out, r.n);
        write_raw(out, r.d);
        write_raw(out, r.nu);
        out.write(reinterpret_cast<const char*>(r.b_active.data()),
                  static_cast<std::streamsize>(r.b_active.size() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(r.a_active.data()),
                  static_cast<std::streamsize>(r.a_active.size() * sizeof(float)));
    }
    out.flush();
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
    return checkpoint_bytes(records);
}

std::int64_t save_checkpoint(const ToyNet& model, const std::string& path) {
    return save_checkpoint(model_records(model), path);
}

std::vector<AdapterRecord> load_checkpoint_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, checkpoint_magic, 4) != 0)
        throw MagicMismatchError("load_checkpoint: bad magic in " + path);
    const std::uint32_t version = read_raw<std::uint32_t>(in);
    if (version != checkpoint_version)
        throw MagicMismatchError("load_checkpoint: unsupported version " +
                                 std::to_string(version));

    const std::uint32_t count = read_raw<std::uint32_t>(in);
    std::vector<AdapterRecord> records;
    records.reserve(count);
    for (std::uint32_t li = 0; li < count; ++li) {
        AdapterRecord r;
        const std::uint32_t name_len = read_raw<std::uint32_t>(in);
        r.name.resize(name_len);
        in.read(r.name.data(), name_len);
        if (!in) throw TruncatedFileError("checkpoint: unexpected end of file");
        r.m = read_raw<std::uint32_t>(in);
        r.n = read_raw<std::uint32_t>(in);
        r.d = read_raw<std::uint32_t>(in);
        r.nu = read_raw<double>(in);
        r.b_active.resize(static_cast<std::size_t>(r.m) * r.d);
        in.read(reinterpret_cast<char*>(r.b_active.data()),
                static_cast<std::streamsize>(r.b_active.size() * sizeof(float)));
        r.a_active.resize(static_cast<std::size_t>(r.d) * r.n);
        in.read(reinterpret_cast<char*>(r.a_active.data()),
                static_cast<std::streamsize>(r.a_active.size() * sizeof(float)));
        if (!in) throw TruncatedFileError("checkpoint: unexpected end of file");
        records.push_back(std::move(r));
    }
    return records;
}

void apply_records(ToyNet& model, const std::vector<AdapterRecord>& records) {
    if (records.size() != model.layers.size())
        throw CheckpointShapeError("apply_records: " + std::to_string(records.size()) +
                                   " records for " + std::to_string(model.layers.size()) +
                                   " layers");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const AdapterRecord& r = records[i];
        AdaptiveLoraLayer& l = model.layers[i];
        if (r.name != l.base.name)
            throw CheckpointShapeError("apply_records: layer " + std::to_string(i) +
                                       " name '" + r.name + "' != '" + l.base.name + "'");
        if (r.m != l.m() || r.n != l.n())
            throw CheckpointShapeError("apply_records: shape mismatch for " + r.name);
        if (r.d < 1 || static_cast<int>(r.d) > l.rank.r_max)
            throw CheckpointShapeError("apply_records: stored d out of range for " + r.name);

        const int recomputed = effective_rank(r.nu, l.rank.q, l.rank.r_max);
        if (recomputed != static_cast<int>(r.d))
            std::cerr << "warning: " << r.name << ": effective_rank(nu) = " << recomputed
                      << " but stored d = " << r.d << "; keeping stored d\n";

        Tensor& b = l.b_buf.tape->leaf_value(l.b_buf);
        Tensor& a = l.a_buf.tape->leaf_value(l.a_buf);
        b.fill(0.0);
        a.fill(0.0);
        for (std::size_t row = 0; row < r.m; ++row)
            for (std::size_t col = 0; col < r.d; ++col)
                b.at(row, col) = static_cast<double>(r.b_active[row * r.d + col]);
        for (std::size_t row = 0; row < r.d; ++row)
            for (std::size_t col = 0; col < r.n; ++col)
                a.at(row, col) = static_cast<double>(r.a_active[row * r.n + col]);

        l.set_raw_nu(softplus_preimage(r.nu));
        l.rank.d = static_cast<int>(r.d);
        l.b_m.fill(0.0);
        l.b_v.fill(0.0);
        l.a_m.fill(0.0);
        l.a_v.fill(0.0);
        l.nu_m = 0.0;
        l.nu_v = 0.0;
        ++l.generation;
    }
}

void load_checkpoint(const std::string& path, ToyNet& model) {
    apply_records(model, load_checkpoint_records(path));
}

} // namespace lora2
