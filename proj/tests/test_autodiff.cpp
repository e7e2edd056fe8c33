#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "lora2/autodiff.hpp"
#include "lora2/error.hpp"
#include "lora2/rng.hpp"

using namespace lora2;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("matmul identity and hand arithmetic") {
    Tape tape;
    Var identity = tape.constant(Tensor(2, 2, {1, 0, 0, 1}));
    Var m = tape.constant(Tensor(2, 2, {3.5, -1.25, 2.0, 7.75}));
    Var out = matmul(identity, m);
    CHECK(bitwise_equal(out.value(), m.value()));

    Var a = tape.constant(Tensor(2, 2, {1, 2, 3, 4}));
    Var b = tape.constant(Tensor(2, 1, {0, 1}));
    Var prod = matmul(a, b);
    CHECK(prod.value().data[0] == 2.0);
    CHECK(prod.value().data[1] == 4.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    Var a = tape.constant(Tensor(2, 3));
    Var b = tape.constant(Tensor(2, 2));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("gradient of sum(a*b) wrt a equals ones * b^T") {
    Rng rng(7);
    const Tensor a0 = rng.gaussian_tensor(3, 4);
    const Tensor b0 = rng.gaussian_tensor(4, 2);

    Tape tape;
    Var a = tape.leaf(a0, true);
    Var b = tape.constant(b0);
    Var loss = sum_all(matmul(a, b));
    tape.backward(loss);

    // ones [3x2] * b^T
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double expected = 0.0;
            for (std::size_t k = 0; k < 2; ++k) expected += b0.at(j, k);
            CHECK(a.grad().at(i, j) == doctest::Approx(expected).epsilon(1e-12));
        }

    auto f = [&](Tape& t, Var x) { return sum_all(matmul(x, t.constant(b0))); };
    CHECK(grad_check(f, a0, 1e-5) <= 1e-6);
}

TEST_CASE("softmax rows: symmetry, exp ratio, row sums") {
    Tape tape;
    Var z = tape.constant(Tensor(1, 4, {0, 0, 0, 0}));
    Var p = softmax_rows(z);
    for (double v : p.value().data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

    Var z2 = tape.constant(Tensor(1, 2, {std::log(1.0), std::log(3.0)}));
    Var p2 = softmax_rows(z2);
    CHECK(p2.value().data[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(p2.value().data[1] == doctest::Approx(0.75).epsilon(1e-14));

    Rng rng(3);
    Var z3 = tape.constant(rng.gaussian_tensor(6, 5, 3.0));
    Var p3 = softmax_rows(z3);
    for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) s += p3.value().at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax shift invariance") {
    Tape tape;
    // exactly representable shift on integer logits: bitwise identical
    Var z = tape.constant(Tensor(1, 3, {1.0, 2.0, 3.0}));
    Var zs = tape.constant(Tensor(1, 3, {1.0 + 8.0, 2.0 + 8.0, 3.0 + 8.0}));
    CHECK(bitwise_equal(softmax_rows(z).value(), softmax_rows(zs).value()));

    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = rng.gaussian_tensor(2, 4);
        Tensor b = a;
        const double c = rng.gaussian(0.0, 5.0);
        for (double& v : b.data) v += c;
        Var pa = softmax_rows(tape.constant(a));
        Var pb = softmax_rows(tape.constant(b));
        for (std::size_t i = 0; i < pa.value().data.size(); ++i)
            CHECK(pa.value().data[i] ==
                  doctest::Approx(pb.value().data[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward: sum gives ones, half squared norm gives x") {
    Rng rng(5);
    const Tensor x0 = rng.gaussian_tensor(4, 3);

    Tape tape;
    Var x = tape.leaf(x0, true);
    tape.backward(sum_all(x));
    for (double g : x.grad().data) CHECK(g == 1.0);

    Tape tape2;
    Var y = tape2.leaf(x0, true);
    tape2.backward(scale(sum_all(square(y)), 0.5));
    for (std::size_t i = 0; i < x0.data.size(); ++i)
        CHECK(y.grad().data[i] == doctest::Approx(x0.data[i]).epsilon(1e-15));
}

TEST_CASE("backward requires scalar loss") {
    Tape tape;
    Var x = tape.leaf(Tensor(2, 2), true);
    CHECK_THROWS_AS(tape.backward(square(x)), ContractError);
}

TEST_CASE("repeated backward accumulates; zero_grads resets") {
    Tape tape;
    Var x = tape.leaf(Tensor(1, 2, {1.0, 2.0}), true);
    Var loss = sum_all(x);
    tape.backward(loss);
    tape.backward(loss);
    for (double g : x.grad().data) CHECK(g == 2.0);
    tape.zero_grads();
    for (double g : x.grad().data) CHECK(g == 0.0);
    tape.backward(loss);
    for (double g : x.grad().data) CHECK(g == 1.0);
}

TEST_CASE("composite matmul+softmax loss matches finite differences") {
    Rng rng(13);
    const Tensor w = rng.gaussian_tensor(3, 3);
    const Tensor x0 = rng.gaussian_tensor(3, 3);
    auto f = [&](Tape& t, Var x) {
        return sum_all(square(softmax_rows(matmul(x, t.constant(w)))));
    };
    CHECK(grad_check(f, x0, 1e-5) <= 1e-6);
}

TEST_CASE("grad_check on linear and quadratic oracles") {
    Rng rng(17);
    auto f_sum = [](Tape&, Var x) { return sum_all(x); };
    CHECK(grad_check(f_sum, rng.gaussian_tensor(3, 3), 1e-5) < 1e-10);

    const Tensor q = rng.gaussian_tensor(5, 5);
    auto f_quad = [&](Tape& t, Var x) {
        return sum_all(square(matmul(t.constant(q), x)));
    };
    CHECK(grad_check(f_quad, rng.gaussian_tensor(5, 1), 1e-5) <= 1e-6);
}

TEST_CASE("grad_check rejects bad h and non-finite f") {
    auto f = [](Tape&, Var x) { return sum_all(x); };
    CHECK_THROWS_AS(grad_check(f, Tensor(1, 1, {1.0}), 1e-2), DomainError);
    auto f_bad = [](Tape& t, Var x) {
        return sum_all(log(x)); // log(-1) = nan
    };
    CHECK_THROWS_AS(grad_check(f_bad, Tensor(1, 1, {-1.0}), 1e-5), EvalError);
}

TEST_CASE("identical tape and seed give bitwise-identical gradients") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tape tape;
        Var x = tape.leaf(rng.gaussian_tensor(4, 4), true);
        Var w = tape.constant(rng.gaussian_tensor(4, 4));
        Var loss = sum_all(square(softmax_rows(matmul(x, w))));
        tape.backward(loss);
        return x.grad();
    };
    CHECK(bitwise_equal(run(99), run(99)));
}

TEST_CASE("slice and concat round-trips with gradient flow") {
    Rng rng(23);
    const Tensor x0 = rng.gaussian_tensor(4, 6);
    auto f = [&](Tape& t, Var x) {
        Var top = slice_rows(x, 0, 2);
        Var bottom = slice_rows(x, 2, 4);
        Var rejoined = concat_rows(top, bottom);
        Var left = slice_cols(rejoined, 0, 3);
        Var right = slice_cols(rejoined, 3, 6);
        return sum_all(square(concat_cols(left, right))) ;
    };
    CHECK(grad_check(f, x0, 1e-5) <= 1e-6);

    Tape tape;
    Var x = tape.constant(x0);
    Var rejoined = concat_cols(slice_cols(x, 0, 2), slice_cols(x, 2, 6));
    CHECK(bitwise_equal(rejoined.value(), x0));
}

TEST_CASE("diag_lmul gradient flows to the diagonal") {
    Rng rng(29);
    const Tensor d0 = rng.gaussian_tensor(1, 4);
    const Tensor x0 = rng.gaussian_tensor(4, 3);
    auto f = [&](Tape& t, Var d) { return sum_all(square(diag_lmul(d, t.constant(x0)))); };
    CHECK(grad_check(f, d0, 1e-5) <= 1e-6);
    auto g = [&](Tape& t, Var x) { return sum_all(square(diag_lmul(t.constant(d0), x))); };
    CHECK(grad_check(g, x0, 1e-5) <= 1e-6);
}
