#include "fpgame/entropy.hpp"
#include "fpgame/errors.hpp"
#include "fpgame/perturb.hpp"

#include <doctest.h>

#include <cmath>

using namespace fpgame;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

Partition line(double a, double b, std::size_t n) {
    Vector lo(1), hi(1);
    lo << a;
    hi << b;
    return Partition(lo, hi, {n});
}

Vector v1(double x) { return Vector::Constant(1, x); }

// dZ = -Z dt + sqrt(eps) dW.
struct OrnsteinUhlenbeck {
    MultiChannelSystem sys{m1(0.0), {m1(1.0)}};
    FeedbackProfile profile{std::vector<Matrix>{m1(-1.0)}};
    Matrix sigma = m1(1.0);
};

double row_l1(const UlamMatrix& a, const UlamMatrix& b, std::size_t i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += std::abs(a.value(i, j) - b.value(i, j));
    return acc;
}

double second_moment(const DensityVector& d) {
    const auto& p = d.partition();
    double acc = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double lo = p.cell_lower(i)(0), hi = lo + p.cell_width(0);
        acc += d[i] * (hi * hi * hi - lo * lo * lo) / 3.0;
    }
    return acc;
}

}  // namespace

TEST_CASE("zero noise reduces to the Euler scheme") {
    OrnsteinUhlenbeck ou;
    SdePathConfig cfg{1e-3, 1000, 1, 0};
    const auto z = simulate_sde_endpoint(ou.sys, ou.profile, ou.sigma, 0.0, v1(1.0), cfg);
    CHECK(std::abs(z(0) - std::exp(-1.0)) < 2e-3);
    CHECK(z(0) == std::pow(1.0 - 1e-3, 1000));
}

TEST_CASE("paths are reproducible per stream") {
    OrnsteinUhlenbeck ou;
    SdePathConfig cfg{1e-2, 200, 1, 99};
    const auto a = simulate_sde(ou.sys, ou.profile, ou.sigma, 0.3, v1(0.2), cfg, {3, 17});
    const auto b = simulate_sde(ou.sys, ou.profile, ou.sigma, 0.3, v1(0.2), cfg, {3, 17});
    const auto c = simulate_sde(ou.sys, ou.profile, ou.sigma, 0.3, v1(0.2), cfg, {3, 18});
    REQUIRE(a.size() == 201);
    bool differs = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k](0) == b[k](0));
        differs = differs || a[k](0) != c[k](0);
    }
    CHECK(differs);
    CHECK(simulate_sde_endpoint(ou.sys, ou.profile, ou.sigma, 0.3, v1(0.2), cfg, {3, 17})(0) == a.back()(0));
}

TEST_CASE("ensemble variance approaches the stationary value") {
    OrnsteinUhlenbeck ou;
    SdePathConfig cfg{1e-2, 1000, 20000, 4};
    const auto one = ensemble_statistics(ou.sys, ou.profile, ou.sigma, 0.1, v1(0.0), cfg, 1);
    // Stationary variance of dZ = -Z dt + sqrt(eps) sigma dW is eps sigma^2 / 2.
    CHECK(std::abs(one.covariance(0, 0) - 0.05) < 0.1 * 0.05);
    CHECK(std::abs(one.mean(0)) < 0.01);
    CHECK(one.t == doctest::Approx(10.0));
    const auto many = ensemble_statistics(ou.sys, ou.profile, ou.sigma, 0.1, v1(0.0), cfg, 6);
    CHECK(one.mean(0) == many.mean(0));
    CHECK(one.covariance(0, 0) == many.covariance(0, 0));
}

TEST_CASE("two-dimensional noise uses independent lanes") {
    Matrix A(2, 2);
    A << -1.0, 0.0, 0.0, -2.0;
    MultiChannelSystem sys(A, {Matrix::Identity(2, 2)});
    FeedbackProfile p(std::vector<Matrix>{Matrix::Zero(2, 2)});
    SdePathConfig cfg{1e-2, 800, 20000, 11};
    const auto s = ensemble_statistics(sys, p, Matrix::Identity(2, 2), 0.2, Vector::Zero(2), cfg, 4);
    // Stationary covariance: diag(eps / (2 * 1), eps / (2 * 2)).
    CHECK(std::abs(s.covariance(0, 0) - 0.1) < 0.01);
    CHECK(std::abs(s.covariance(1, 1) - 0.05) < 0.005);
    CHECK(std::abs(s.covariance(0, 1)) < 0.005);
}

TEST_CASE("stochastic Ulam matrix") {
    OrnsteinUhlenbeck ou;
    const auto part = line(-1.0, 1.0, 32);
    SdePathConfig cfg{1e-2, 0, 256, 5};
    SUBCASE("zero noise is close to the deterministic matrix") {
        SdePathConfig fine{1e-3, 0, 256, 5};
        const auto stochastic = build_stochastic_ulam(part, ou.sys, ou.profile, ou.sigma, 0.0, 0.5, fine);
        const double s = std::exp(-0.5);
        const auto det = build_ulam(part, [s](const Vector& x) { return Vector(s * x); }, 256);
        for (std::size_t i = 0; i < 32; ++i) CHECK(row_l1(stochastic, det, i) <= 0.05);
    }
    SUBCASE("zero diffusion map equals the noiseless sampler") {
        const auto a = build_stochastic_ulam(part, ou.sys, ou.profile, ou.sigma, 0.0, 0.5, cfg);
        const auto b = build_stochastic_ulam(part, ou.sys, ou.profile, m1(0.0), 0.7, 0.5, cfg);
        CHECK(a == b);
    }
    SUBCASE("strong noise gives nearly uniform rows") {
        const auto coarse = line(-1.0, 1.0, 16);
        SdePathConfig wide{1e-2, 0, 1600, 2};
        const auto P = build_stochastic_ulam(coarse, ou.sys, ou.profile, ou.sigma, 10.0, 1.0, wide, {1.0, 4});
        for (std::size_t i = 0; i < 16; ++i) {
            double kept = 0.0, h = 0.0;
            for (const auto& e : P.row(i)) kept += e.count;
            for (const auto& e : P.row(i)) {
                const double q = e.count / kept;
                h -= q * std::log(q);
            }
            CHECK(h >= 0.95 * std::log(16.0));
        }
    }
    SUBCASE("thread count does not change the matrix") {
        const auto a = build_stochastic_ulam(part, ou.sys, ou.profile, ou.sigma, 0.1, 0.5, cfg, {0.05, 1});
        const auto b = build_stochastic_ulam(part, ou.sys, ou.profile, ou.sigma, 0.1, 0.5, cfg, {0.05, 7});
        CHECK(a == b);
    }
    SUBCASE("too few paths per cell") {
        SdePathConfig few{1e-2, 0, 50, 5};
        CHECK_THROWS_AS(build_stochastic_ulam(part, ou.sys, ou.profile, ou.sigma, 0.1, 0.5, few), ConfigError);
    }
    SUBCASE("non-square path counts use a low-discrepancy start pattern") {
        Vector lo = Vector::Constant(2, -1.0), hi = Vector::Constant(2, 1.0);
        Partition sq(lo, hi, {4, 4});
        MultiChannelSystem sys(Matrix::Zero(2, 2), {Matrix::Identity(2, 2)});
        FeedbackProfile zero(std::vector<Matrix>{Matrix::Zero(2, 2)});
        SdePathConfig c{1e-2, 0, 150, 1};
        const auto P = build_stochastic_ulam(sq, sys, zero, Matrix::Identity(2, 2), 0.0, 0.3, c);
        CHECK(P.to_dense() == Matrix::Identity(16, 16));
    }
}

TEST_CASE("perturbed stationary densities") {
    OrnsteinUhlenbeck ou;
    const auto part = line(-1.0, 1.0, 128);
    StationaryOptions sopts{1e-12, 100000, false};
    SUBCASE("zero noise matches the deterministic stationary density") {
        SdePathConfig cfg{1e-2, 0, 256, 3};
        const auto P0 = build_stochastic_ulam(part, ou.sys, ou.profile, ou.sigma, 0.0, 0.5, cfg);
        const auto s = std::exp(-0.5);
        const auto det = build_ulam(part, [s](const Vector& x) { return Vector(s * x); }, 256);
        const auto a = perturbed_stationary(P0, DensityVector::uniform(part), sopts);
        const auto b = stationary_density(det, DensityVector::uniform(part), sopts);
        CHECK(l1_distance(a.density, b.density) <= 1e-9);
    }
    SUBCASE("second moment of the linear SDE") {
        SdePathConfig cfg{1e-2, 0, 400, 8};
        const auto P = build_stochastic_ulam(part, ou.sys, ou.profile, ou.sigma, 0.1, 0.5, cfg);
        const auto st = perturbed_stationary(P, DensityVector::uniform(part), sopts);
        CHECK(std::abs(second_moment(st.density) - 0.05) < 0.15 * 0.05);
    }
    SUBCASE("distance to the noiseless density shrinks with the noise") {
        SdePathConfig cfg{1e-2, 0, 256, 3};
        const auto wide = line(-2.0, 2.0, 128);
        const auto base = perturbed_stationary(
            build_stochastic_ulam(wide, ou.sys, ou.profile, ou.sigma, 0.0, 0.5, cfg), DensityVector::uniform(wide),
            sopts);
        auto dist = [&](double eps) {
            const auto P = build_stochastic_ulam(wide, ou.sys, ou.profile, ou.sigma, eps, 0.5, cfg);
            return l1_distance(perturbed_stationary(P, DensityVector::uniform(wide), sopts).density, base.density);
        };
        CHECK(dist(0.2) > dist(0.05));
    }
}

TEST_CASE("resilience report") {
    OrnsteinUhlenbeck ou;
    const auto part = line(-2.0, 2.0, 32);
    NoiseSpec noise{ou.sigma, {0.2, 0.1, 0.05, 0.0}};
    ResilienceConfig cfg(part, {0.5, 1.0}, {1e-2, 0, 256, 21});
    cfg.kl_floor = 1e-12;
    cfg.estimate_noise_floor = true;
    std::vector<double> bump(32, 0.0);
    for (std::size_t i = 8; i < 24; ++i) bump[i] = 0.5;
    const std::vector<DensityVector> dens{DensityVector::uniform(part), DensityVector::create(part, bump)};
    const auto rep = resilience_report(ou.sys, ou.profile, noise, cfg, dens);
    CHECK(rep.entries.size() == 4 * 2 * 2);
    for (const auto& e : rep.entries) {
        if (e.epsilon == 0.0) {
            CHECK(e.l1_distance == 0.0);
            CHECK(e.rel_entropy == 0.0);
            CHECK(e.violation_mass == 0.0);
        }
        CHECK(e.l1_distance <= 2.0);
        CHECK_FALSE(e.rejected);
    }
    CHECK(rep.theta_eps.back() == 0.0);
    CHECK(rep.monotone);
    REQUIRE(rep.noise_floor.has_value());
    CHECK(*rep.noise_floor >= 0.0);

    ResilienceConfig strict = cfg;
    strict.kl_floor = 0.0;
    strict.estimate_noise_floor = false;
    const auto unfloored = resilience_report(ou.sys, ou.profile, noise, strict, dens);
    bool saw_violation = false;
    for (const auto& e : unfloored.entries)
        if (e.violation_mass > 0.0) {
            saw_violation = true;
            CHECK(std::isinf(e.rel_entropy));
        }
    CHECK(saw_violation);
}

TEST_CASE("resilience deviation sweep") {
    OrnsteinUhlenbeck ou;
    const auto part = line(-2.0, 2.0, 16);
    NoiseSpec noise{ou.sigma, {0.1, 0.0}};
    ResilienceConfig cfg(part, {0.5}, {1e-2, 0, 100, 1});
    cfg.kl_floor = 1e-12;
    StrategySpace space;
    space.candidates = {{m1(-1.0), m1(-2.0), m1(1.0)}};
    const auto rep = resilience_report(ou.sys, ou.profile, noise, cfg, {DensityVector::uniform(part)}, &space);
    REQUIRE(rep.deviations.size() == 2);
    CHECK(rep.deviations[0].candidate == 1);
    CHECK_FALSE(rep.deviations[0].rejected);
    CHECK(rep.deviations[0].theta_eps.size() == 2);
    CHECK(rep.deviations[1].rejected);
}

TEST_CASE("noise specification validation") {
    NoiseSpec ok{m1(1.0), {0.2, 0.1, 0.0}};
    CHECK_NOTHROW(ok.validate(1));
    NoiseSpec increasing{m1(1.0), {0.1, 0.2}};
    CHECK_THROWS_AS(increasing.validate(1), ConfigError);
    NoiseSpec negative{m1(1.0), {0.1, -0.1}};
    CHECK_THROWS_AS(negative.validate(1), ConfigError);
    CHECK_THROWS_AS(ok.validate(2), ConfigError);
}
