#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lora2/error.hpp"
#include "lora2/rank_controller.hpp"
#include "lora2/rng.hpp"
#include "lora2/selfcheck.hpp"

using namespace lora2;

TEST_CASE("pmf values") {
    const double ln2 = std::log(2.0);
    CHECK(pmf(1, ln2) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(pmf(2, ln2) == doctest::Approx(0.125).epsilon(1e-14));
    // x = 0 substitution: 1 - e^{-nu}
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const double nu = 1e-4 + 5.0 * rng.uniform();
        CHECK(pmf(0, nu) == doctest::Approx(1.0 - std::exp(-nu)).epsilon(1e-12));
        // algebraically identical to the CDF difference form
        const int j = static_cast<int>(rng.next_u64() % 64);
        const double diff_form =
            (1.0 - std::exp(-nu * (j + 1.0))) - (1.0 - std::exp(-nu * j));
        CHECK(pmf(j, nu) == doctest::Approx(diff_form).epsilon(1e-10));
    }
    CHECK_THROWS_AS(pmf(1, 0.0), DomainError);
    CHECK_THROWS_AS(pmf(1, -0.5), DomainError);
}

TEST_CASE("effective_rank quantile with snap") {
    const double nu64 = -std::log(0.1) / 64.0;
    CHECK(effective_rank(nu64, 0.9, 512) == 64);
    CHECK(effective_rank(2.302585093, 0.9, 512) == 1);
    CHECK(effective_rank(1e-6, 0.9, 512) == 512); // cap binds
    CHECK_THROWS_AS(effective_rank(0.0, 0.9, 512), DomainError);
    CHECK_THROWS_AS(effective_rank(1.0, 1.5, 512), DomainError);
}

TEST_CASE("nu_target values and inverse pair") {
    CHECK(nu_target(0.9, 64) == doctest::Approx(0.03597789208).epsilon(1e-9));
    CHECK(nu_target(0.9, 1) == doctest::Approx(2.302585093).epsilon(1e-9));
    CHECK_THROWS_AS(nu_target(0.9, 0), DomainError);
    for (int r : {8, 16, 32, 64, 128, 256, 512})
        CHECK(effective_rank(nu_target(0.9, r), 0.9, 512) == r);
}

TEST_CASE("truncated_mass closed form") {
    const double ln2 = std::log(2.0);
    CHECK(truncated_mass(ln2, 2) == doctest::Approx(0.375).epsilon(1e-14));
    // geometric tail: sum to large d approaches e^{-nu}
    CHECK(truncated_mass(0.7, 5000) == doctest::Approx(std::exp(-0.7)).epsilon(1e-14));
    // brute-force summation oracle
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const double nu = 1e-4 + 10.0 * rng.uniform();
        const int d = 1 + static_cast<int>(rng.next_u64() % 512);
        double brute = 0.0;
        for (int j = 1; j <= d; ++j) brute += pmf(j, nu);
        CHECK(std::abs(brute - truncated_mass(nu, d)) <= 1e-12);
    }
}

TEST_CASE("importance spectrum values and gradient") {
    Tape tape;
    Var nu = tape.scalar(std::log(2.0));
    Var spec = importance_spectrum(tape, nu, 2);
    CHECK(spec.value().data[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(spec.value().data[1] == doctest::Approx(0.125).epsilon(1e-14));

    // gradient of sum(spectrum) wrt nu via finite differences
    auto f = [](Tape& t, Var nu_var) { return sum_all(importance_spectrum(t, nu_var, 4)); };
    CHECK(grad_check(f, Tensor::scalar(0.6), 1e-5) <= 1e-6);
    CHECK(grad_check(f, Tensor::scalar(2.1), 1e-5) <= 1e-6);
}

TEST_CASE("rank parameter init and refresh") {
    RankParameter p = RankParameter::init(0.9, 512, 8);
    CHECK(p.d == 8);
    CHECK(p.nu() == doctest::Approx(nu_target(0.9, 8)).epsilon(1e-12));
    CHECK(p.refresh() == 8);

    p.raw = softplus_inverse(nu_target(0.9, 3));
    CHECK(p.refresh() == 3);
    CHECK(p.d == 3);

    CHECK_THROWS_AS(RankParameter::init(0.9, 512, 0), DomainError);
    CHECK_THROWS_AS(RankParameter::init(0.9, 512, 513), DomainError);
}

TEST_CASE("softplus keeps nu positive everywhere") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        RankParameter p = RankParameter::init(0.9, 512, 8);
        p.raw = rng.gaussian(0.0, 20.0);
        CHECK(p.nu() > 0.0);
        const int d = p.refresh();
        CHECK(d >= 1);
        CHECK(d <= 512);
    }
    CHECK(softplus(softplus_inverse(1.7)) == doctest::Approx(1.7).epsilon(1e-14));
}

TEST_CASE("property suites: telescoping, inverse pair, monotonicity, spectrum") {
    CHECK(selfcheck::telescoping(10000, 42).pass);
    CHECK(selfcheck::controller_inverse_pair().pass);
    CHECK(selfcheck::rank_monotonicity(2000, 43).pass);
    CHECK(selfcheck::spectrum_shape(200, 44).pass);
}
