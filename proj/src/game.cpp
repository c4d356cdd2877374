#include "fpgame/game.hpp"

#include "fpgame/errors.hpp"
#include "fpgame/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace fpgame {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

std::size_t rk4_steps(double t, const GameConfig& cfg) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(t * cfg.steps_per_unit_time)));
}

double kl_or_inf(const DensityVector& xi, const DensityVector& theta) {
    try {
        return relative_entropy(xi, theta);
    } catch (const SupportError&) {
        return kInf;
    }
}

double max_of(const std::vector<double>& v) {
    double m = -kInf;
    for (double x : v) m = std::max(m, x);
    return m;
}

// Ulam matrices per profile at every grid time, built once. nullopt marks a
// profile rejected for leakage or instability.
class OperatorCache {
public:
    OperatorCache(const MultiChannelSystem& sys, const GameConfig& cfg, bool stability_filter)
        : sys_(sys), cfg_(cfg), stability_filter_(stability_filter) {}

    const std::vector<UlamMatrix>* get(const FeedbackProfile& profile) {
        const auto key = profile.hash();
        auto it = cache_.find(key);
        if (it == cache_.end()) it = cache_.emplace(key, build(profile)).first;
        return it->second ? &*it->second : nullptr;
    }

private:
    std::optional<std::vector<UlamMatrix>> build(const FeedbackProfile& profile) const {
        if (stability_filter_ && !is_hurwitz(sys_, profile)) return std::nullopt;
        std::vector<UlamMatrix> ops;
        ops.reserve(cfg_.time_grid.size());
        try {
            for (double t : cfg_.time_grid) ops.push_back(transfer_operator(sys_, profile, t, cfg_));
        } catch (const DomainEscapeError&) {
            return std::nullopt;
        } catch (const DivergenceError&) {
            return std::nullopt;
        }
        return ops;
    }

    const MultiChannelSystem& sys_;
    const GameConfig& cfg_;
    bool stability_filter_;
    std::map<std::uint64_t, std::optional<std::vector<UlamMatrix>>> cache_;
};

std::vector<double> criteria_from(const std::vector<UlamMatrix>& ops, const DensityVector& reference) {
    std::vector<double> out;
    out.reserve(ops.size());
    for (const auto& P : ops) out.push_back(kl_or_inf(apply_fp(P, reference, true), reference));
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Strategy space and configuration

void StrategySpace::validate(const MultiChannelSystem& sys) const {
    if (candidates.size() != sys.channels())
        throw ConfigError("game.candidates: expected " + std::to_string(sys.channels()) + " channel lists");
    for (std::size_t j = 0; j < candidates.size(); ++j) {
        if (candidates[j].empty())
            throw ConfigError("game.candidates[" + std::to_string(j) + "]: must not be empty");
        for (std::size_t k = 0; k < candidates[j].size(); ++k) {
            const auto& L = candidates[j][k];
            if (L.rows() != sys.input_dim(j) || L.cols() != sys.dim() || !L.allFinite())
                throw ConfigError("game.candidates[" + std::to_string(j) + "][" + std::to_string(k) +
                                  "]: expected a finite " + std::to_string(sys.input_dim(j)) + "x" +
                                  std::to_string(sys.dim()) + " gain");
        }
    }
}

std::size_t StrategySpace::combinations() const {
    std::size_t n = 1;
    for (const auto& c : candidates) n *= c.size();
    return n;
}

FeedbackProfile profile_from_choice(const StrategySpace& space, const StrategyChoice& choice) {
    if (choice.size() != space.channels()) throw ConfigError("strategy choice: wrong number of channels");
    std::vector<Matrix> gains;
    gains.reserve(choice.size());
    for (std::size_t j = 0; j < choice.size(); ++j) {
        if (choice[j] >= space.candidates[j].size())
            throw ConfigError("strategy choice: index out of range for channel " + std::to_string(j));
        gains.push_back(space.candidates[j][choice[j]]);
    }
    return FeedbackProfile(std::move(gains));
}

std::vector<StrategyChoice> all_choices(const StrategySpace& space) {
    std::vector<StrategyChoice> out;
    const std::size_t total = space.combinations();
    out.reserve(total);
    for (std::size_t n = 0; n < total; ++n) {
        StrategyChoice c(space.channels());
        std::size_t rem = n;
        for (std::size_t j = space.channels(); j-- > 0;) {
            c[j] = rem % space.candidates[j].size();
            rem /= space.candidates[j].size();
        }
        out.push_back(std::move(c));
    }
    return out;
}

GameConfig::GameConfig(Partition p, std::vector<double> grid)
    : partition(p), time_grid(std::move(grid)), reference(DensityVector::uniform(p)) {}

void GameConfig::validate() const {
    if (time_grid.empty()) throw ConfigError("game.time_grid: must not be empty");
    for (std::size_t k = 0; k < time_grid.size(); ++k) {
        const std::string where = "game.time_grid[" + std::to_string(k) + "]";
        if (!std::isfinite(time_grid[k])) throw ConfigError(where + ": must be finite");
        if (k == 0 && !(time_grid[k] > 0.0)) throw ConfigError(where + ": must be > 0");
        if (k > 0 && !(time_grid[k] > time_grid[k - 1])) throw ConfigError(where + ": must be increasing");
    }
    if (!(reference.partition() == partition)) throw ConfigError("game.reference_density: partition mismatch");
    for (std::size_t k = 0; k < extra_densities.size(); ++k)
        if (!(extra_densities[k].partition() == partition))
            throw ConfigError("game.extra_densities[" + std::to_string(k) + "]: partition mismatch");
    if (!(tol > 0.0)) throw ConfigError("game.tol: must be > 0");
    if (max_rounds < 1) throw ConfigError("game.max_rounds: must be >= 1");
    if (!(leak_tol >= 0.0 && leak_tol <= 1.0)) throw ConfigError("domain.leak_tol: must lie in [0, 1]");
    if (!(steps_per_unit_time > 0.0)) throw ConfigError("ulam.steps_per_unit_time: must be > 0");
}

// ---------------------------------------------------------------------------
// Criterion and best response

UlamMatrix transfer_operator(const MultiChannelSystem& sys, const FeedbackProfile& profile, double t,
                             const GameConfig& cfg) {
    const auto flow = flow_map(sys, profile, 0.0, t, rk4_steps(t, cfg));
    UlamOptions opts;
    opts.leak_tol = cfg.leak_tol;
    opts.threads = cfg.threads;
    opts.metadata = {0.0, t, profile.hash()};
    return build_ulam(cfg.partition, [&flow](const Vector& x) { return flow(x); }, cfg.samples_per_cell, opts);
}

std::vector<double> criterion(const MultiChannelSystem& sys, const FeedbackProfile& profile, std::size_t channel,
                              const GameConfig& cfg) {
    cfg.validate();
    check_profile(sys, profile);
    if (channel >= sys.channels()) throw ConfigError("criterion: channel index out of range");
    std::vector<double> out;
    out.reserve(cfg.time_grid.size());
    for (double t : cfg.time_grid) {
        try {
            const auto P = transfer_operator(sys, profile, t, cfg);
            out.push_back(kl_or_inf(apply_fp(P, cfg.reference, true), cfg.reference));
        } catch (const DomainEscapeError& e) {
            throw DomainEscapeError(std::string(e.what()) + " (t=" + std::to_string(t) + ", profile " +
                                        hex(profile.hash()) + ")",
                                    e.cell(), e.leakage());
        }
    }
    return out;
}

namespace {

BestResponse best_response_cached(const FeedbackProfile& profile, std::size_t channel, const StrategySpace& space,
                                  const GameConfig& cfg, OperatorCache& cache) {
    const auto& list = space.candidates.at(channel);
    BestResponse out;
    out.objectives.assign(list.size(), kInf);
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < list.size(); ++k) {
        const auto deviation = profile.with_gain(channel, list[k]);
        const auto* ops = cache.get(deviation);
        if (!ops) continue;
        out.objectives[k] = max_of(criteria_from(*ops, cfg.reference));
        if (!std::isfinite(out.objectives[k])) continue;
        if (!best || out.objectives[k] < out.objectives[*best]) best = k;
    }
    if (!best)
        throw EmptyStrategyError("channel " + std::to_string(channel) +
                                 ": no admissible candidate (all rejected for instability, leakage or an unbounded criterion)");
    out.index = *best;
    out.gain = {channel, list[*best]};
    out.objective = out.objectives[*best];
    return out;
}

}  // namespace

BestResponse best_response(const MultiChannelSystem& sys, const FeedbackProfile& profile, std::size_t channel,
                           const StrategySpace& space, const GameConfig& cfg) {
    cfg.validate();
    space.validate(sys);
    check_profile(sys, profile);
    if (channel >= sys.channels()) throw ConfigError("best_response: channel index out of range");
    OperatorCache cache(sys, cfg, space.stability_filter);
    return best_response_cached(profile, channel, space, cfg, cache);
}

// ---------------------------------------------------------------------------
// Equilibrium search and verification

EquilibriumResult find_equilibrium(const MultiChannelSystem& sys, const StrategySpace& space, const GameConfig& cfg,
                                   const StrategyChoice& initial) {
    cfg.validate();
    space.validate(sys);
    OperatorCache cache(sys, cfg, space.stability_filter);

    StrategyChoice choice = initial;
    FeedbackProfile profile = profile_from_choice(space, choice);
    EquilibriumResult result{profile, choice, {}, std::nullopt, std::numeric_limits<double>::quiet_NaN(), {},
                             std::numeric_limits<double>::quiet_NaN(), false, 0, false, {}};
    result.history.push_back(choice);

    auto objective_of = [&](const FeedbackProfile& p) {
        const auto* ops = cache.get(p);
        return ops ? max_of(criteria_from(*ops, cfg.reference)) : kInf;
    };

    for (std::size_t round = 1; round <= cfg.max_rounds; ++round) {
        bool changed = false;
        for (std::size_t j = 0; j < sys.channels(); ++j) {
            const auto br = best_response_cached(profile, j, space, cfg, cache);
            if (br.index == choice[j]) continue;
            const double current = objective_of(profile);
            if (std::isfinite(current) && !(br.objective < current - cfg.tol)) continue;
            choice[j] = br.index;
            profile = profile_from_choice(space, choice);
            changed = true;
        }
        result.history.push_back(choice);
        result.rounds = round;
        if (!changed) {
            result.converged = true;
            break;
        }
    }
    result.profile = profile;
    result.choice = choice;
    if (!result.converged) return result;

    const auto* ops = cache.get(profile);
    if (!ops) throw EmptyStrategyError("equilibrium profile is not admissible");
    const auto crit = criteria_from(*ops, cfg.reference);
    result.per_channel_criteria.assign(sys.channels(), crit);

    auto st = stationary_density(ops->back(), cfg.reference, cfg.stationary);
    result.stationary_entropy = entropy(st.density).value;
    result.entropy_dominance = true;
    for (const auto& P : *ops) {
        result.stationary_residuals.push_back(invariance_check(P, st.density));
        const auto pushed = apply_fp(P, cfg.reference, true);
        if (result.stationary_entropy < entropy(pushed).value - cfg.tol) result.entropy_dominance = false;
    }
    result.horizon_distance = l1_distance(apply_fp(ops->back(), cfg.reference, true), st.density);
    result.stationary = std::move(st.density);
    return result;
}

bool EquilibriumReport::no_deviation_pass() const {
    return std::all_of(densities.begin(), densities.end(), [](const auto& d) { return d.no_deviation.pass; });
}
bool EquilibriumReport::convergence_pass() const {
    return std::all_of(densities.begin(), densities.end(), [](const auto& d) { return d.convergence.pass; });
}
bool EquilibriumReport::entropy_pass() const {
    return std::all_of(densities.begin(), densities.end(), [](const auto& d) { return d.entropy.pass; });
}

EquilibriumReport verify_equilibrium(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                     const StrategySpace& space, const GameConfig& cfg) {
    cfg.validate();
    space.validate(sys);
    check_profile(sys, profile);
    OperatorCache cache(sys, cfg, space.stability_filter);
    const auto* base_ops = cache.get(profile);
    if (!base_ops) throw EmptyStrategyError("verify_equilibrium: the profile itself is not admissible");

    EquilibriumReport report;
    auto st = stationary_density(base_ops->back(), cfg.reference, cfg.stationary);
    const double stationary_entropy = entropy(st.density).value;

    // Deviations that differ from the profile's own gain.
    struct Deviation {
        std::size_t channel;
        std::size_t candidate;
        const std::vector<UlamMatrix>* ops;
    };
    std::vector<Deviation> deviations;
    for (std::size_t j = 0; j < space.channels(); ++j) {
        for (std::size_t k = 0; k < space.candidates[j].size(); ++k) {
            const auto& L = space.candidates[j][k];
            if (L == profile.gain(j)) continue;
            const auto* ops = cache.get(profile.with_gain(j, L));
            if (!ops) {
                ++report.deviations_rejected;
                continue;
            }
            ++report.deviations_checked;
            deviations.push_back({j, k, ops});
        }
    }

    std::vector<const DensityVector*> densities{&cfg.reference};
    for (const auto& d : cfg.extra_densities) densities.push_back(&d);

    for (std::size_t di = 0; di < densities.size(); ++di) {
        const auto& theta = *densities[di];
        DensityVerification v;
        v.density_index = di;

        const auto base = criteria_from(*base_ops, theta);
        for (const auto& dev : deviations) {
            const auto crit = criteria_from(*dev.ops, theta);
            for (std::size_t k = 0; k < crit.size(); ++k) {
                const double margin = base[k] - crit[k];
                if (std::isnan(margin)) continue;
                if (margin > v.no_deviation.margin) {
                    v.no_deviation.margin = margin;
                    v.no_deviation.detail = "channel " + std::to_string(dev.channel) + " candidate " +
                                            std::to_string(dev.candidate) + " at t=" +
                                            std::to_string(cfg.time_grid[k]);
                }
            }
        }
        v.no_deviation.pass = !(v.no_deviation.margin > cfg.tol);

        std::vector<double> distances;
        for (const auto& P : *base_ops) distances.push_back(l1_distance(apply_fp(P, theta, true), st.density));
        for (std::size_t k = 1; k < distances.size(); ++k) {
            const double margin = distances[k] - distances[k - 1];
            if (margin > v.convergence.margin) {
                v.convergence.margin = margin;
                v.convergence.detail = "worst step between t=" + std::to_string(cfg.time_grid[k - 1]) +
                                       " and t=" + std::to_string(cfg.time_grid[k]);
            }
        }
        v.convergence.pass = !(v.convergence.margin > cfg.tol);
        if (v.convergence.detail.empty())
            v.convergence.detail = "final distance " + std::to_string(distances.back());

        auto check_entropy = [&](const std::vector<UlamMatrix>& ops, const std::string& who) {
            for (std::size_t k = 0; k < ops.size(); ++k) {
                const double margin = entropy(apply_fp(ops[k], theta, true)).value - stationary_entropy;
                if (margin > v.entropy.margin) {
                    v.entropy.margin = margin;
                    v.entropy.detail = who + " at t=" + std::to_string(cfg.time_grid[k]);
                }
            }
        };
        check_entropy(*base_ops, "profile");
        for (const auto& dev : deviations)
            check_entropy(*dev.ops, "channel " + std::to_string(dev.channel) + " candidate " +
                                        std::to_string(dev.candidate));
        v.entropy.pass = !(v.entropy.margin > cfg.tol);

        report.densities.push_back(std::move(v));
    }
    report.stationary = std::move(st.density);
    return report;
}

// ---------------------------------------------------------------------------
// Contraction estimate

BallSample sample_ball_pairs(const DensityVector& center, double beta, std::size_t n_pairs, std::uint64_t seed) {
    if (!(beta > 0.0)) throw ConfigError("contraction: beta must be > 0");
    if (n_pairs < 1) throw ConfigError("contraction: n_pairs must be >= 1");
    const Philox4x32 gen(seed);
    const auto& part = center.partition();
    const std::size_t M = center.size();

    // Counter layout: (pair, attempt, member, word index).
    auto draw = [&](std::uint32_t pair, std::uint32_t attempt, std::uint32_t member) {
        std::vector<double> eta(M);
        for (std::size_t i = 0; i < M; ++i) {
            const auto block = gen({pair, attempt, member, static_cast<std::uint32_t>(i)});
            eta[i] = -std::log(uniform_open_closed(block[0], block[1]));
        }
        const auto target = DensityVector::normalized(part, std::move(eta));
        const double dist = l1_distance(target, center);
        const auto block = gen({pair, attempt, member, static_cast<std::uint32_t>(M)});
        const double u = uniform_open_closed(block[0], block[1]);
        const double step = dist > 0.0 ? std::min(1.0, beta * u / dist) : 0.0;
        std::vector<double> values(M);
        for (std::size_t i = 0; i < M; ++i) values[i] = (1.0 - step) * center[i] + step * target[i];
        return DensityVector::normalized(part, std::move(values));
    };

    BallSample out;
    for (std::uint32_t p = 0; p < n_pairs; ++p) {
        for (std::uint32_t attempt = 0;; ++attempt) {
            auto a = draw(p, attempt, 0);
            auto b = draw(p, attempt, 1);
            if (l1_distance(a, b) < 1e-12) {
                ++out.resampled;
                if (attempt > 1000) throw NumericalError("contraction: cannot draw distinct densities");
                continue;
            }
            out.pairs.emplace_back(std::move(a), std::move(b));
            break;
        }
    }
    return out;
}

ContractionEstimate contraction_estimate(const MultiChannelSystem& sys, const StrategySpace& space,
                                         const GameConfig& cfg, const DensityVector& center, double beta,
                                         std::size_t n_pairs, std::uint64_t seed) {
    cfg.validate();
    space.validate(sys);
    if (!(center.partition() == cfg.partition)) throw ConfigError("contraction: center partition mismatch");
    const auto sample = sample_ball_pairs(center, beta, n_pairs, seed);

    ContractionEstimate est;
    est.resampled = sample.resampled;
    OperatorCache cache(sys, cfg, space.stability_filter);
    const auto& part = cfg.partition;
    for (const auto& choice : all_choices(space)) {
        const auto* ops = cache.get(profile_from_choice(space, choice));
        if (!ops) continue;
        ++est.profiles;
        for (const auto& P : *ops) {
            est.drift = std::max(est.drift, l1_distance(apply_fp(P, center, false), center));
            for (const auto& [a, b] : sample.pairs) {
                const auto pa = apply_fp(P, a, false);
                const auto pb = apply_fp(P, b, false);
                double num = 0.0;
                for (std::size_t i = 0; i < pa.size(); ++i) num += std::abs(pb[i] - pa[i]);
                num *= part.cell_volume();
                est.kappa = std::max(est.kappa, num / l1_distance(b, a));
                ++est.evaluations;
            }
        }
    }
    if (est.profiles == 0) throw EmptyStrategyError("contraction: no admissible candidate combination");
    est.ball_ok = est.kappa < 1.0 && est.drift <= beta * (1.0 - est.kappa);
    return est;
}

// ---------------------------------------------------------------------------
// Entropy decay

std::vector<double> DecayTrace::series(std::size_t density_index) const {
    std::vector<double> out;
    for (const auto& r : rows)
        if (r.density_index == density_index) out.push_back(r.relative_entropy);
    return out;
}

bool DecayTrace::non_increasing(std::size_t density_index, double tol) const {
    const auto s = series(density_index);
    for (std::size_t k = 1; k < s.size(); ++k)
        if (s[k] > s[k - 1] + tol) return false;
    return !s.empty();
}

DecayTrace entropy_decay_trace(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                               const std::vector<DensityVector>& densities, const std::vector<double>& t_grid,
                               const GameConfig& cfg, double floor) {
    cfg.validate();
    const auto P = transfer_operator(sys, profile, cfg.horizon(), cfg);
    auto st = stationary_density(P, cfg.reference, cfg.stationary);
    return entropy_decay_trace(sys, profile, densities, t_grid, cfg, st.density, floor);
}

DecayTrace entropy_decay_trace(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                               const std::vector<DensityVector>& densities, const std::vector<double>& t_grid,
                               const GameConfig& cfg, const DensityVector& stationary, double floor) {
    if (!(floor >= 0.0)) throw ConfigError("kl floor must be nonnegative");
    if (t_grid.empty()) throw ConfigError("entropy trace: time grid must not be empty");
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        if (!(t_grid[k] >= 0.0)) throw ConfigError("entropy trace: times must be >= 0");
        if (k > 0 && !(t_grid[k] > t_grid[k - 1]))
            throw ConfigError("entropy trace: t_grid[" + std::to_string(k) + "] must be increasing");
    }
    DecayTrace trace{stationary, {}, {}, {}};

    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < densities.size(); ++i) {
        if (!(densities[i].partition() == cfg.partition))
            throw ConfigError("entropy trace: density " + std::to_string(i) + " partition mismatch");
        if (floor == 0.0 && support_violation_mass(densities[i], stationary) > 0.0) {
            trace.skipped.push_back(i);
            trace.warnings.push_back("density " + std::to_string(i) +
                                     " is not supported inside the stationary support; relative entropy is "
                                     "infinite, skipped");
            continue;
        }
        active.push_back(i);
    }

    for (double t : t_grid) {
        const auto P = transfer_operator(sys, profile, t, cfg);
        for (std::size_t i : active) {
            const auto pushed = apply_fp(P, densities[i], true);
            DecayRow row;
            row.density_index = i;
            row.t = t;
            row.entropy = entropy(pushed).value;
            row.violation_mass = support_violation_mass(pushed, stationary);
            row.relative_entropy = (floor == 0.0 && row.violation_mass > 0.0)
                                       ? kInf
                                       : relative_entropy_floored(pushed, stationary, floor);
            trace.rows.push_back(row);
        }
    }
    return trace;
}

}  // namespace fpgame
