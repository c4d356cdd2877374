#include "fpgame/errors.hpp"
#include "fpgame/game.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

using namespace fpgame;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

Partition line(double a, double b, std::size_t n) {
    Vector lo(1), hi(1);
    lo << a;
    hi << b;
    return Partition(lo, hi, {n});
}

StrategySpace scalar_space(std::vector<double> c0, std::vector<double> c1) {
    StrategySpace s;
    s.candidates.resize(2);
    for (double v : c0) s.candidates[0].push_back(m1(v));
    for (double v : c1) s.candidates[1].push_back(m1(v));
    return s;
}

// a = 1, b1 = b2 = 1, candidates {-1, -1.5, -2} per channel.
struct ScalarGame {
    MultiChannelSystem sys{m1(1.0), {m1(1.0), m1(1.0)}};
    StrategySpace space = scalar_space({-1.0, -1.5, -2.0}, {-1.0, -1.5, -2.0});
    GameConfig cfg{line(-1.0, 1.0, 64), {0.25, 0.5, 0.75, 1.0}};
};

// Max over the grid, computed per profile without the search machinery.
double objective(const MultiChannelSystem& sys, const FeedbackProfile& p, const GameConfig& cfg) {
    double worst = -std::numeric_limits<double>::infinity();
    for (double v : criterion(sys, p, 0, cfg)) worst = std::max(worst, v);
    return worst;
}

// Exhaustive enumeration: choices from which no channel can improve by more than tol.
std::vector<StrategyChoice> exhaustive_equilibria(const MultiChannelSystem& sys, const StrategySpace& space,
                                                  const GameConfig& cfg) {
    std::map<StrategyChoice, double> value;
    for (std::size_t a = 0; a < space.candidates[0].size(); ++a)
        for (std::size_t b = 0; b < space.candidates[1].size(); ++b)
            value[{a, b}] = objective(sys, profile_from_choice(space, {a, b}), cfg);
    std::vector<StrategyChoice> out;
    for (const auto& [choice, v] : value) {
        bool stable = true;
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t k = 0; k < space.candidates[j].size(); ++k) {
                auto dev = choice;
                dev[j] = k;
                if (value[dev] < v - cfg.tol) stable = false;
            }
        if (stable) out.push_back(choice);
    }
    return out;
}

}  // namespace

TEST_CASE("strategy enumeration") {
    const auto s = scalar_space({-1, -2}, {-1, -2, -3});
    CHECK(s.combinations() == 6);
    const auto all = all_choices(s);
    REQUIRE(all.size() == 6);
    CHECK(all[0] == StrategyChoice{0, 0});
    CHECK(all[1] == StrategyChoice{0, 1});
    CHECK(all[5] == StrategyChoice{1, 2});
    CHECK_THROWS_AS(profile_from_choice(s, {2, 0}), ConfigError);
}

TEST_CASE("criterion values") {
    SUBCASE("zero closed loop gives zero at every time") {
        MultiChannelSystem sys(m1(1.0), {m1(1.0), m1(1.0)});
        GameConfig cfg(line(-1.0, 1.0, 32), {0.5, 1.0, 2.0});
        FeedbackProfile p(std::vector<Matrix>{m1(-0.5), m1(-0.5)});
        for (double v : criterion(sys, p, 0, cfg)) CHECK(v == 0.0);
    }
    SUBCASE("halving the support costs ln 2") {
        MultiChannelSystem sys(m1(0.0), {m1(1.0)});
        GameConfig cfg(line(-1.0, 1.0, 256), {std::log(2.0)});
        FeedbackProfile p(std::vector<Matrix>{m1(-1.0)});
        // Push-forward is uniform on [-1/2, 1/2]: int 1 * ln(1 / (1/2)) dx = ln 2.
        CHECK(std::abs(criterion(sys, p, 0, cfg)[0] - std::log(2.0)) < 5e-3);
    }
    SUBCASE("independent of the channel index") {
        ScalarGame g;
        const auto p = profile_from_choice(g.space, {1, 2});
        CHECK(criterion(g.sys, p, 0, g.cfg) == criterion(g.sys, p, 1, g.cfg));
    }
    SUBCASE("leakage is reported with the time and profile") {
        MultiChannelSystem sys(m1(1.0), {m1(1.0)});
        GameConfig cfg(line(-1.0, 1.0, 16), {0.5});
        FeedbackProfile p(std::vector<Matrix>{m1(0.0)});
        try {
            criterion(sys, p, 0, cfg);
            FAIL("expected leakage");
        } catch (const DomainEscapeError& e) {
            CHECK(std::string(e.what()).find("t=0.5") != std::string::npos);
        }
    }
}

TEST_CASE("best response") {
    ScalarGame g;
    SUBCASE("single candidate") {
        StrategySpace s = scalar_space({-1.5}, {-1.0, -2.0});
        const auto br = best_response(g.sys, profile_from_choice(s, {0, 1}), 0, s, g.cfg);
        CHECK(br.index == 0);
        CHECK(br.gain.L(0, 0) == -1.5);
    }
    SUBCASE("single channel agrees with exhaustive argmin") {
        MultiChannelSystem sys(m1(0.5), {m1(1.0)});
        StrategySpace s;
        s.candidates = {{m1(-2.0), m1(-1.0), m1(-1.5)}};
        const auto br = best_response(sys, FeedbackProfile(std::vector<Matrix>{m1(-2.0)}), 0, s, g.cfg);
        std::size_t best = 0;
        double best_value = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < 3; ++k) {
            const double v = objective(sys, FeedbackProfile(std::vector<Matrix>{s.candidates[0][k]}), g.cfg);
            if (v < best_value) {
                best_value = v;
                best = k;
            }
        }
        CHECK(br.index == best);
        CHECK(br.objective == best_value);
    }
    SUBCASE("symmetric channels respond identically") {
        const auto p = profile_from_choice(g.space, {2, 2});
        const auto a = best_response(g.sys, p, 0, g.space, g.cfg);
        const auto b = best_response(g.sys, p, 1, g.space, g.cfg);
        CHECK(a.index == b.index);
        CHECK(a.objectives == b.objectives);
    }
    SUBCASE("no admissible candidate") {
        MultiChannelSystem sys(m1(3.0), {m1(1.0)});
        StrategySpace s;
        s.candidates = {{m1(-1.0), m1(-2.0)}};
        s.stability_filter = true;
        CHECK_THROWS_AS(best_response(sys, FeedbackProfile(std::vector<Matrix>{m1(-1.0)}), 0, s, g.cfg),
                        EmptyStrategyError);
    }
}

TEST_CASE("equilibrium search") {
    ScalarGame g;
    SUBCASE("single-candidate channels settle immediately") {
        const auto s = scalar_space({-1.5}, {-1.0});
        const auto r = find_equilibrium(g.sys, s, g.cfg, {0, 0});
        CHECK(r.converged);
        CHECK(r.rounds == 1);
        CHECK(r.choice == StrategyChoice{0, 0});
    }
    SUBCASE("matches exhaustive enumeration from every start") {
        const auto oracle_set = exhaustive_equilibria(g.sys, g.space, g.cfg);
        REQUIRE(oracle_set.size() == 1);
        CHECK(oracle_set[0] == StrategyChoice{0, 0});
        for (const auto& start : all_choices(g.space)) {
            const auto r = find_equilibrium(g.sys, g.space, g.cfg, start);
            CHECK(r.converged);
            CHECK(r.choice == oracle_set[0]);
            CHECK(r.history.front() == start);
        }
    }
    SUBCASE("repeated runs are identical, whatever the thread count") {
        auto cfg = g.cfg;
        const auto a = find_equilibrium(g.sys, g.space, cfg, {2, 1});
        cfg.threads = 4;
        const auto b = find_equilibrium(g.sys, g.space, cfg, {2, 1});
        CHECK(a.choice == b.choice);
        CHECK(a.per_channel_criteria == b.per_channel_criteria);
        CHECK(a.history == b.history);
    }
}

TEST_CASE("equilibrium verification") {
    SUBCASE("measure-preserving equilibrium passes every condition") {
        MultiChannelSystem sys(m1(1.0), {m1(1.0), m1(1.0)});
        const auto space = scalar_space({-0.5, -1.0, -1.5}, {-0.5, -1.0, -1.5});
        GameConfig cfg(line(-1.0, 1.0, 32), {0.5, 1.0, 1.5});
        const auto r = find_equilibrium(sys, space, cfg, {2, 2});
        REQUIRE(r.converged);
        CHECK(r.choice == StrategyChoice{0, 0});
        const auto rep = verify_equilibrium(sys, r.profile, space, cfg);
        CHECK(rep.no_deviation_pass());
        CHECK(rep.convergence_pass());
        CHECK(rep.entropy_pass());
        CHECK(rep.deviations_checked == 4);
    }
    SUBCASE("dominated profile fails the no-deviation condition") {
        ScalarGame g;
        const auto rep = verify_equilibrium(g.sys, profile_from_choice(g.space, {2, 0}), g.space, g.cfg);
        CHECK_FALSE(rep.no_deviation_pass());
        CHECK(rep.densities[0].no_deviation.margin > 0.0);
    }
    SUBCASE("single channel with a single candidate is vacuous") {
        MultiChannelSystem sys(m1(0.0), {m1(1.0)});
        StrategySpace s;
        s.candidates = {{m1(0.0)}};
        GameConfig cfg(line(-1.0, 1.0, 16), {0.5, 1.0});
        const auto rep = verify_equilibrium(sys, FeedbackProfile(std::vector<Matrix>{m1(0.0)}), s, cfg);
        CHECK(rep.pass());
        CHECK(rep.deviations_checked == 0);
    }
    SUBCASE("extra densities are checked too") {
        ScalarGame g;
        std::vector<double> v(64, 0.0);
        for (std::size_t i = 16; i < 48; ++i) v[i] = 1.0;
        g.cfg.extra_densities.push_back(DensityVector::create(g.cfg.partition, v));
        const auto rep = verify_equilibrium(g.sys, profile_from_choice(g.space, {0, 0}), g.space, g.cfg);
        CHECK(rep.densities.size() == 2);
        CHECK(rep.no_deviation_pass());
        CHECK(rep.convergence_pass());
    }
}

TEST_CASE("contraction estimate") {
    SUBCASE("identity flow") {
        MultiChannelSystem sys(m1(0.0), {m1(1.0)});
        StrategySpace s;
        s.candidates = {{m1(0.0)}};
        GameConfig cfg(line(-1.0, 1.0, 32), {0.5, 1.0});
        const auto est = contraction_estimate(sys, s, cfg, DensityVector::uniform(cfg.partition), 0.5, 50, 1);
        CHECK(est.kappa == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(est.drift == 0.0);
        CHECK_FALSE(est.ball_ok);
    }
    SUBCASE("sampled pairs lie in the ball") {
        const auto p = line(0.0, 1.0, 40);
        const auto center = DensityVector::uniform(p);
        const auto sample = sample_ball_pairs(center, 0.3, 100, 5);
        REQUIRE(sample.pairs.size() == 100);
        for (const auto& [a, b] : sample.pairs) {
            CHECK(l1_distance(a, center) <= 0.3 + 1e-12);
            CHECK(l1_distance(b, center) <= 0.3 + 1e-12);
            CHECK(a.mass() == doctest::Approx(1.0));
        }
        const auto again = sample_ball_pairs(center, 0.3, 100, 5);
        for (std::size_t k = 0; k < 100; ++k) CHECK(l1_distance(sample.pairs[k].first, again.pairs[k].first) == 0.0);
    }
}

TEST_CASE("entropy decay trace") {
    ScalarGame g;
    const auto p = profile_from_choice(g.space, {0, 0});
    const std::vector<double> grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
    SUBCASE("stationary density traces to zero") {
        const auto st = stationary_density(transfer_operator(g.sys, p, 1.0, g.cfg), g.cfg.reference,
                                           {1e-12, 100000, false});
        const auto trace = entropy_decay_trace(g.sys, p, {st.density}, grid, g.cfg, st.density);
        for (const auto& row : trace.rows) CHECK(std::abs(row.relative_entropy) < 1e-9);
    }
    SUBCASE("uniform density decreases until it reaches the stationary state") {
        const auto trace = entropy_decay_trace(g.sys, p, {g.cfg.reference}, grid, g.cfg, 1e-12);
        const auto s = trace.series(0);
        REQUIRE(s.size() == grid.size());
        for (std::size_t k = 1; k < s.size(); ++k) {
            if (s[k - 1] > 1e-9)
                CHECK(s[k] < s[k - 1]);
            else
                CHECK(s[k] <= s[k - 1] + 1e-6);
        }
        CHECK(trace.non_increasing(0, 1e-6));
        CHECK(s.back() < 0.05);
    }
    SUBCASE("unsupported densities are skipped without a floor") {
        const auto trace = entropy_decay_trace(g.sys, p, {g.cfg.reference}, grid, g.cfg);
        CHECK(trace.skipped == std::vector<std::size_t>{0});
        CHECK(trace.warnings.size() == 1);
        CHECK(trace.rows.empty());
    }
}

TEST_CASE("criterion entries are nonnegative and the stationary residual holds on the grid") {
    ScalarGame g;
    for (const auto& c : all_choices(g.space))
        for (double v : criterion(g.sys, profile_from_choice(g.space, c), 0, g.cfg)) CHECK(v >= 0.0);
    g.cfg.stationary.tol = 1e-12;
    const auto r = find_equilibrium(g.sys, g.space, g.cfg, {0, 0});
    REQUIRE(r.stationary_residuals.size() == g.cfg.time_grid.size());
    for (double res : r.stationary_residuals) CHECK(res <= 10 * g.cfg.stationary.tol);
}
