#include "lora2/toy_net.hpp"

#include <cmath>

#include "lora2/error.hpp"

namespace lora2 {

Tensor row_to_matrix(const Tensor& rows, std::size_t row, std::size_t d,
                     std::size_t tokens) {
    if (rows.cols != d * tokens)
        throw ShapeError("row_to_matrix: row width " + std::to_string(rows.cols) +
                         " != " + std::to_string(d * tokens));
    Tensor out(d, tokens);
    for (std::size_t j = 0; j < tokens; ++j)
        for (std::size_t i = 0; i < d; ++i) out.at(i, j) = rows.at(row, j * d + i);
    return out;
}

void matrix_to_row(const Tensor& mat, Tensor& rows, std::size_t row) {
    if (rows.cols != mat.rows * mat.cols)
        throw ShapeError("matrix_to_row: row width mismatch");
    for (std::size_t j = 0; j < mat.cols; ++j)
        for (std::size_t i = 0; i < mat.rows; ++i)
            rows.at(row, j * mat.rows + i) = mat.at(i, j);
}

ToyNet::SampleOut ToyNet::forward_sample(const Tensor& patches, const Tensor& cond,
                                         bool use_adapters) {
    Var p = tape->constant(patches);
    Var c = tape->constant(cond);
    auto apply = [&](std::size_t i, Var x) {
        return use_adapters ? layers[i].adapted_forward(*tape, x)
                            : layers[i].frozen_forward(*tape, x);
    };
    ToyForwardOut out = toy_forward(spec, apply, p, c);
    return {out.output, out.cross_map};
}

Tensor ToyNet::eval_output(const Tensor& patches, const Tensor& cond, bool use_adapters) {
    const std::size_t mark = tape->mark();
    SampleOut out = forward_sample(patches, cond, use_adapters);
    Tensor value = out.output.value();
    tape->rewind(mark);
    return value;
}

std::vector<int> ToyNet::ranks() const {
    std::vector<int> r;
    r.reserve(layers.size());
    for (const AdaptiveLoraLayer& l : layers) r.push_back(l.rank.d);
    return r;
}

std::int64_t ToyNet::active_params() const {
    std::int64_t total = 0;
    for (const AdaptiveLoraLayer& l : layers) total += l.active_params();
    return total;
}

ToyNet build_toy_net(const ToyNetSpec& spec, const AdapterSettings& settings,
                     std::uint64_t seed) {
    if (spec.d_model == 0 || spec.k_tokens == 0 || spec.d_cond == 0 || spec.patch_slots == 0)
        throw ShapeError("build_toy_net: zero dimension in spec");

    ToyNet net;
    net.spec = spec;
    net.mode = settings.mode;
    net.tape = std::make_unique<Tape>();

    Rng base_rng(derive_seed(seed, 0));
    for (std::size_t i = 0; i < ToyNetSpec::layer_count; ++i) {
        const auto [m, n] = spec.layer_shape(i);
        // fan-in scaled base weights keep activations O(1) through the blocks
        Tensor w = base_rng.gaussian_tensor(m, n, 1.0 / std::sqrt(static_cast<double>(n)));
        FrozenLinear base{std::move(w), kind_name(ToyNetSpec::kinds[i]),
                          ToyNetSpec::kinds[i]};
        AdaptiveLoraLayer layer =
            init_adapter(*net.tape, std::move(base), settings.r_init, settings.q,
                         settings.r_max, derive_seed(seed, 100 + i), settings.mode);
        layer.grow_random_b = settings.grow_random_b;
        net.layers.push_back(std::move(layer));
    }
    net.base_mark = net.tape->mark();
    return net;
}

Tensor Teacher::forward(const Tensor& patches, const Tensor& cond) const {
    Tape tape;
    Var p = tape.constant(patches);
    Var c = tape.constant(cond);
    std::vector<Var> w;
    w.reserve(weights.size());
    for (const Tensor& t : weights) w.push_back(tape.constant(t));
    auto apply = [&](std::size_t i, Var x) { return matmul(w[i], x); };
    return toy_forward(spec, apply, p, c).output.value();
}

Tensor Teacher::delta(std::size_t layer) const {
    Tensor d = weights.at(layer);
    const Tensor& base = base_weights.at(layer);
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] -= base.data[i];
    return d;
}

namespace {

// Orthonormal columns via modified Gram-Schmidt on a Gaussian draw.
Tensor orthonormal_columns(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor q(rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t r = 0; r < rows; ++r) q.at(r, c) = rng.gaussian();
        for (std::size_t prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (std::size_t r = 0; r < rows; ++r) dot += q.at(r, c) * q.at(r, prev);
            for (std::size_t r = 0; r < rows; ++r) q.at(r, c) -= dot * q.at(r, prev);
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < rows; ++r) norm += q.at(r, c) * q.at(r, c);
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < rows; ++r) q.at(r, c) /= norm;
    }
    return q;
}

} // namespace

Teacher plant_teacher(const ToyNet& base_model, const std::vector<int>& ranks, double scale,
                      std::uint64_t seed) {
    if (ranks.size() != base_model.layers.size())
        throw ContractError("plant_teacher: need one rank per layer, got " +
                            std::to_string(ranks.size()));
    Teacher teacher;
    teacher.spec = base_model.spec;
    teacher.planted_ranks = ranks;
    teacher.scale = scale;

    Rng rng(derive_seed(seed, 7));
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        const Tensor& w_star = base_model.layers[i].base.w_star;
        teacher.base_weights.push_back(w_star);
        const int r = ranks[i];
        if (r < 0 || static_cast<std::size_t>(r) > std::min(w_star.rows, w_star.cols))
            throw DomainError("plant_teacher: rank " + std::to_string(r) +
                              " too large for " + w_star.shape_str());
        Tensor w = w_star;
        if (r > 0) {
            Tensor b = orthonormal_columns(rng, w_star.rows, static_cast<std::size_t>(r));
            Tensor a_t = orthonormal_columns(rng, w_star.cols, static_cast<std::size_t>(r));
            for (std::size_t row = 0; row < w.rows; ++row)
                for (std::size_t col = 0; col < w.cols; ++col) {
                    double dw = 0.0;
                    for (std::size_t k = 0; k < static_cast<std::size_t>(r); ++k)
                        dw += b.at(row, k) * a_t.at(col, k);
                    w.at(row, col) += scale * dw;
                }
        }
        teacher.weights.push_back(std::move(w));
    }
    return teacher;
}

const std::vector<int>& default_planted_ranks() {
    static const std::vector<int> ranks = {1, 2, 4, 8, 2, 1, 4, 2, 6};
    return ranks;
}

Dataset sample_dataset(const Teacher& teacher, std::size_t n, double sigma_obs,
                       std::uint64_t seed) {
    if (n < 1) throw ContractError("sample_dataset: n must be >= 1");
    const ToyNetSpec& spec = teacher.spec;
    Dataset data;
    data.sigma_obs = sigma_obs;
    data.seed = seed;

    Rng rng(derive_seed(seed, 11));
    data.inputs = rng.gaussian_tensor(n, spec.input_width());
    data.conds = rng.gaussian_tensor(n, spec.cond_width());
    data.targets = Tensor(n, spec.input_width());
    for (std::size_t i = 0; i < n; ++i) {
        Tensor patches = row_to_matrix(data.inputs, i, spec.d_model, spec.patch_slots);
        Tensor cond = row_to_matrix(data.conds, i, spec.d_cond, spec.k_tokens);
        Tensor out = teacher.forward(patches, cond);
        if (sigma_obs > 0.0)
            for (double& v : out.data) v += rng.gaussian(0.0, sigma_obs);
        matrix_to_row(out, data.targets, i);
    }
    return data;
}

double eval_full_mse(ToyNet& model, const Dataset& data) {
    const ToyNetSpec& spec = model.spec;
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Tensor patches = row_to_matrix(data.inputs, i, spec.d_model, spec.patch_slots);
        Tensor cond = row_to_matrix(data.conds, i, spec.d_cond, spec.k_tokens);
        Tensor out = model.eval_output(patches, cond, true);
        for (std::size_t dim = 0; dim < out.rows; ++dim)
            for (std::size_t tok = 0; tok < out.cols; ++tok) {
                const double diff =
                    out.at(dim, tok) - data.targets.at(i, tok * out.rows + dim);
                acc += diff * diff;
            }
    }
    return acc / static_cast<double>(data.size());
}

double eval_mean_entropy(ToyNet& model, const Dataset& data) {
    const ToyNetSpec& spec = model.spec;
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Tensor patches = row_to_matrix(data.inputs, i, spec.d_model, spec.patch_slots);
        Tensor cond = row_to_matrix(data.conds, i, spec.d_cond, spec.k_tokens);
        const std::size_t mark = model.tape->mark();
        ToyNet::SampleOut out = model.forward_sample(patches, cond, true);
        const Tensor& p = out.cross_map.value();
        double h = 0.0;
        for (std::size_t r = 0; r < p.rows; ++r)
            for (std::size_t c = 0; c < p.cols; ++c) {
                const double v = p.at(r, c);
                if (v > 0.0) h -= v * std::log(v);
            }
        acc += h / static_cast<double>(p.rows);
        model.tape->rewind(mark);
    }
    return acc / static_cast<double>(data.size());
}

} // namespace lora2
