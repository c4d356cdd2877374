#include "fpgame/errors.hpp"
#include "fpgame/transfer.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace fpgame;

namespace {

Partition line(double a, double b, std::size_t n) {
    Vector lo(1), hi(1);
    lo << a;
    hi << b;
    return Partition(lo, hi, {n});
}

PointMap scalar_map(std::function<double(double)> f) {
    return [f](const Vector& x) {
        Vector y(1);
        y << f(x(0));
        return y;
    };
}

DensityVector random_density(const Partition& p, std::mt19937_64& rng, double zeros = 0.0) {
    return DensityVector::create(p, oracle::densities_from_masses(oracle::random_masses(rng, p.cell_count(), zeros),
                                                                  p.cell_volume()));
}

double golden() { return (std::sqrt(5.0) - 1.0) / 2.0; }

}  // namespace

TEST_CASE("partition indexing") {
    Vector lo(2), hi(2);
    lo << -1.0, 0.0;
    hi << 1.0, 3.0;
    Partition p(lo, hi, {4, 3});
    CHECK(p.cell_count() == 12);
    CHECK(p.cell_volume() == doctest::Approx(0.5));
    Vector x(2);
    x << 0.9, 0.5;
    CHECK(*p.locate(x) == 3 * 3 + 0);
    x << 1.0, 3.0;
    CHECK(*p.locate(x) == 11);
    x << 1.0001, 1.0;
    CHECK_FALSE(p.locate(x).has_value());
    CHECK(p.multi_index(7) == std::vector<std::size_t>{2, 1});
    CHECK(p.cell_center(7)(0) == doctest::Approx(0.25));
    CHECK(p.cell_center(7)(1) == doctest::Approx(1.5));

    try {
        Partition(hi, lo, {4, 3});
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("domain.lower") != std::string::npos);
    }
}

TEST_CASE("density validation") {
    const auto p = line(0.0, 1.0, 4);
    CHECK_THROWS_AS(DensityVector::create(p, {1.0, 1.0, 1.0, -0.1}), ConfigError);
    CHECK_THROWS_AS(DensityVector::create(p, {1.0, 1.0, 1.0, 2.0}), ConfigError);
    CHECK(DensityVector::uniform(p).mass() == doctest::Approx(1.0));
}

TEST_CASE("Ulam matrix of simple maps") {
    SUBCASE("identity") {
        const auto p = line(-1.0, 1.0, 16);
        const auto P = build_ulam(p, [](const Vector& x) { return x; }, 4);
        CHECK(P.to_dense() == Matrix::Identity(16, 16));
        CHECK(P.max_leakage() == 0.0);
    }
    SUBCASE("halving map matches direct sub-grid images") {
        const auto p = line(-1.0, 1.0, 16);
        const auto P = build_ulam(p, scalar_map([](double x) { return x / 2.0; }), 8);
        const auto oracle_P = oracle::dense_ulam_1d([](double x) { return x / 2.0; }, -1.0, 1.0, 16, 8);
        CHECK((P.to_dense() - oracle_P).cwiseAbs().maxCoeff() == 0.0);
        // Columns outside [-1/2, 1/2] are cells 0..3 and 12..15.
        for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t j : {0, 1, 2, 3, 12, 13, 14, 15}) CHECK(P.value(i, j) == 0.0);
    }
    SUBCASE("reflection is the reversal permutation") {
        const auto p = line(-1.0, 1.0, 10);
        const auto P = build_ulam(p, scalar_map([](double x) { return -x; }), 4);
        const Matrix R = Matrix::Identity(10, 10).rowwise().reverse();
        CHECK(P.to_dense() == R);
    }
    SUBCASE("sample counts must be a perfect power") {
        const auto p = line(0.0, 1.0, 4);
        CHECK_THROWS_AS(build_ulam(p, [](const Vector& x) { return x; }, 1), ConfigError);
        Vector lo = Vector::Zero(2), hi = Vector::Ones(2);
        CHECK_THROWS_AS(build_ulam(Partition(lo, hi, {2, 2}), [](const Vector& x) { return x; }, 8), ConfigError);
    }
    SUBCASE("excess leakage names the worst cell") {
        const auto p = line(-1.0, 1.0, 8);
        try {
            build_ulam(p, scalar_map([](double x) { return x + 0.3; }), 10);
            FAIL("expected leakage rejection");
        } catch (const DomainEscapeError& e) {
            CHECK(e.cell() == 7);
            CHECK(e.leakage() == doctest::Approx(1.0));
        }
    }
    SUBCASE("thread count does not change the matrix") {
        const auto p = line(-1.0, 1.0, 64);
        UlamOptions one, many;
        many.threads = 8;
        const auto map = scalar_map([](double x) { return 0.9 * x + 0.05 * std::sin(7 * x); });
        CHECK(build_ulam(p, map, 9, one) == build_ulam(p, map, 9, many));
    }
}

TEST_CASE("Frobenius-Perron push-forward") {
    SUBCASE("identity keeps the density") {
        const auto p = line(0.0, 1.0, 32);
        std::mt19937_64 rng(1);
        const auto theta = random_density(p, rng);
        const auto out = apply_fp(build_ulam(p, [](const Vector& x) { return x; }, 4), theta);
        for (std::size_t i = 0; i < 32; ++i) CHECK(out[i] == theta[i]);
    }
    SUBCASE("uniform density under halving concentrates on the central half") {
        const auto p = line(-1.0, 1.0, 64);
        const auto out = apply_fp(build_ulam(p, scalar_map([](double x) { return x / 2.0; }), 16),
                                  DensityVector::uniform(p));
        // Analytic push-forward: theta(2x) * 2 = 1 on [-1/2, 1/2].
        for (std::size_t i = 0; i < 64; ++i) {
            const double c = p.cell_center(i)(0);
            const double expected = std::abs(c) < 0.5 ? 1.0 : 0.0;
            if (std::abs(std::abs(c) - 0.5) > p.cell_width(0)) CHECK(out[i] == doctest::Approx(expected));
        }
        CHECK(out.mass() == doctest::Approx(1.0));
    }
    SUBCASE("mass bookkeeping with leakage is exact to counts") {
        const auto p = line(-1.0, 1.0, 32);
        UlamOptions opts;
        opts.leak_tol = 1.0;
        const auto P = build_ulam(p, scalar_map([](double x) { return 1.1 * x; }), 8, opts);
        std::mt19937_64 rng(2);
        const auto theta = random_density(p, rng);
        const auto out = apply_fp(P, theta);
        double leaked = 0.0;
        for (std::size_t i = 0; i < 32; ++i)
            leaked += theta[i] * p.cell_volume() * static_cast<double>(P.escaped_count(i)) / P.samples_per_row();
        CHECK(out.mass() == doctest::Approx(theta.mass() - leaked).epsilon(1e-14));
        CHECK(apply_fp(P, theta, true).mass() == doctest::Approx(1.0));

        UlamOptions strict;
        strict.leak_tol = 0.5;
        CHECK_THROWS_AS(build_ulam(p, scalar_map([](double x) { return 2.0 * x; }), 8, strict), DomainEscapeError);
    }
}

TEST_CASE("Koopman operator") {
    const auto p = line(-1.0, 1.0, 16);
    const auto contract = build_ulam(p, scalar_map([](double x) { return 0.7 * x; }), 4);
    const auto c = apply_koopman(contract, ObservableVector(p, std::vector<double>(16, 2.5)));
    for (std::size_t i = 0; i < 16; ++i) CHECK(c[i] == doctest::Approx(2.5));

    const auto R = build_ulam(p, scalar_map([](double x) { return -x; }), 4);
    std::vector<double> z(16);
    std::iota(z.begin(), z.end(), 0.0);
    const auto shuffled = apply_koopman(R, ObservableVector(p, z));
    for (std::size_t i = 0; i < 16; ++i) CHECK(shuffled[i] == z[15 - i]);

    const auto zeta = ObservableVector::from_function(p, [](const Vector& x) { return std::cos(5 * x(0)); });
    CHECK(apply_koopman(contract, zeta).sup_norm() <= zeta.sup_norm());
}

TEST_CASE("adjoint residual") {
    const auto p = line(-1.0, 1.0, 64);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    auto random_observable = [&] {
        std::vector<double> v(64);
        for (auto& x : v) x = n(rng);
        return ObservableVector(p, v);
    };
    const auto id = build_ulam(p, [](const Vector& x) { return x; }, 4);
    CHECK(adjoint_residual(id, random_density(p, rng), random_observable()) == 0.0);

    const auto P = build_ulam(p, scalar_map([](double x) { return 0.6 * x + 0.1; }), 16);
    CHECK(P.max_leakage() == 0.0);
    for (int k = 0; k < 20; ++k) CHECK(adjoint_residual(P, random_density(p, rng), random_observable()) <= 1e-12);

    UlamOptions opts;
    opts.leak_tol = 1.0;
    const auto leaky = build_ulam(p, scalar_map([](double x) { return 1.02 * x; }), 16, opts);
    const auto theta = random_density(p, rng);
    const auto zeta = random_observable();
    double bound = 0.0;
    for (std::size_t i = 0; i < 64; ++i) bound += theta[i] * p.cell_volume() * leaky.leakage(i);
    CHECK(adjoint_residual(leaky, theta, zeta) <= bound * zeta.sup_norm() + 1e-15);
}

TEST_CASE("stationary density") {
    SUBCASE("identity converges in one iteration") {
        const auto p = line(0.0, 1.0, 8);
        std::mt19937_64 rng(7);
        const auto theta = random_density(p, rng);
        const auto r = stationary_density(build_ulam(p, [](const Vector& x) { return x; }, 4), theta);
        CHECK(r.iterations == 1);
        CHECK(l1_distance(r.density, theta) <= 1e-15);
    }
    SUBCASE("reversal with Cesaro averaging symmetrizes") {
        const auto p = line(-1.0, 1.0, 12);
        std::mt19937_64 rng(8);
        const auto theta = random_density(p, rng);
        StationaryOptions opts;
        opts.cesaro = true;
        const auto r = stationary_density(build_ulam(p, scalar_map([](double x) { return -x; }), 4), theta, opts);
        for (std::size_t i = 0; i < 12; ++i) CHECK(r.density[i] == doctest::Approx((theta[i] + theta[11 - i]) / 2));
        opts.cesaro = false;
        opts.max_iter = 200;
        CHECK_THROWS_AS(stationary_density(build_ulam(p, scalar_map([](double x) { return -x; }), 4), theta, opts),
                        NonConvergenceError);
    }
    SUBCASE("contracting flow concentrates at the origin") {
        const auto p = line(-1.0, 1.0, 64);
        const double s = std::exp(-0.5);
        const auto P = build_ulam(p, scalar_map([s](double x) { return s * x; }), 16);
        StationaryOptions opts;
        opts.tol = 1e-12;
        const auto r = stationary_density(P, DensityVector::uniform(p), opts);
        // Direct long-horizon push-forward: every point is within one cell of 0.
        const double central = (r.density[31] + r.density[32]) * p.cell_volume();
        CHECK(central >= 0.99);
        CHECK(r.residual <= 1e-9);
        CHECK(invariance_check(P, r.density) <= 1e-9);
        CHECK(invariance_check(P, DensityVector::uniform(p)) > 0.1);
    }
    SUBCASE("Cesaro average of an irrational rotation approaches uniform") {
        const auto p = line(0.0, 1.0, 64);
        const double g = golden();
        const auto P = build_ulam(p, scalar_map([g](double x) { return std::fmod(x + g, 1.0); }), 16);
        std::vector<double> point(64, 0.0);
        point[5] = 64.0;
        const auto avg = cesaro_average(P, DensityVector::create(p, point), 2000);
        CHECK(l1_distance(avg, DensityVector::uniform(p)) < 0.02);
        CHECK(invariance_check(P, DensityVector::uniform(p)) < 1e-12);
    }
}

TEST_CASE("Birkhoff averages") {
    const double g = golden();
    Vector x0(1);
    x0 << 0.1;
    const auto rotate = scalar_map([g](double x) { return std::fmod(x + g, 1.0); });
    const auto cos2pi = [](const Vector& x) { return std::cos(2.0 * M_PI * x(0)); };
    CHECK(std::abs(birkhoff_average(rotate, x0, cos2pi, 100000)) < 5e-3);
    CHECK(birkhoff_average(rotate, x0, [](const Vector&) { return 3.0; }, 1000) == doctest::Approx(3.0));
    CHECK(birkhoff_average([](const Vector& x) { return x; }, x0, cos2pi, 1000) == cos2pi(x0));

    const auto p = line(-1.0, 1.0, 8);
    x0 << 0.5;
    try {
        birkhoff_average(scalar_map([](double x) { return 1.5 * x; }), x0, cos2pi, 100, &p);
        FAIL("expected escape");
    } catch (const DomainEscapeError& e) {
        CHECK(e.cell() == 2);
    }
}

TEST_CASE("semigroup properties of the discretized operator") {
    const auto p = line(-1.0, 1.0, 64);
    const auto P = build_ulam(p, scalar_map([](double x) { return 0.8 * x + 0.05; }), 16);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = random_density(p, rng, 0.3);
        const auto b = random_density(p, rng, 0.3);
        const double w = u(rng);
        std::vector<double> mix(64);
        for (std::size_t i = 0; i < 64; ++i) mix[i] = w * a[i] + (1 - w) * b[i];
        const auto pa = apply_fp(P, a), pb = apply_fp(P, b);
        const auto pm = apply_fp(P, DensityVector::create(p, mix));
        for (std::size_t i = 0; i < 64; ++i) {
            CHECK(pm[i] == doctest::Approx(w * pa[i] + (1 - w) * pb[i]).epsilon(1e-12));
            CHECK(pa[i] >= 0.0);
        }
        CHECK(pa.mass() == doctest::Approx(1.0).epsilon(1e-12));
    }
}
