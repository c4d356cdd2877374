#include "fpgame/perturb.hpp"

#include "fpgame/entropy.hpp"
#include "fpgame/errors.hpp"
#include "fpgame/parallel.hpp"
#include "fpgame/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fpgame {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Closed-loop matrices along the step grid; a single entry for constant systems.
class DriftSchedule {
public:
    DriftSchedule(const MultiChannelSystem& sys, const FeedbackProfile& profile, double h, std::size_t steps)
        : constant_(!sys.time_varying()) {
        if (constant_) {
            drift_.push_back(closed_loop_matrix(sys, profile, 0.0));
        } else {
            drift_.reserve(steps);
            for (std::size_t k = 0; k < steps; ++k)
                drift_.push_back(closed_loop_matrix(sys, profile, static_cast<double>(k) * h));
        }
    }
    const Matrix& at(std::size_t step) const { return constant_ ? drift_.front() : drift_[step]; }

private:
    bool constant_;
    std::vector<Matrix> drift_;
};

// One Euler-Maruyama step in place. noise_scale = sqrt(eps * h); zero skips the draw.
void em_step(Vector& z, Vector& scratch, const Matrix& M, const Matrix& sigma, double h, double noise_scale,
             const Philox4x32& gen, StreamId stream, std::size_t step) {
    const Eigen::Index d = z.size();
    scratch.noalias() = M * z;
    z += h * scratch;
    if (noise_scale == 0.0) return;
    for (Eigen::Index lane = 0; 2 * lane < d; ++lane) {
        const auto pair = normal_pair(gen, {static_cast<std::uint32_t>(step), stream.path, stream.cell,
                                            static_cast<std::uint32_t>(lane)});
        scratch(2 * lane) = pair[0];
        if (2 * lane + 1 < d) scratch(2 * lane + 1) = pair[1];
    }
    z.noalias() += noise_scale * (sigma * scratch);
}

void check_inputs(const MultiChannelSystem& sys, const FeedbackProfile& profile, const Matrix& sigma, double eps,
                  const Vector& x0) {
    check_profile(sys, profile);
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ConfigError("perturb.epsilon: must be finite and >= 0");
    if (sigma.rows() != sys.dim() || sigma.cols() != sys.dim() || !sigma.allFinite())
        throw ConfigError("perturb.sigma: expected a finite d x d matrix");
    if (x0.size() != sys.dim() || !x0.allFinite()) throw ConfigError("perturb.x0: expected a finite d-vector");
}

template <class Visit>
void run_path(const MultiChannelSystem& sys, const DriftSchedule& drift, const Matrix& sigma, double eps,
              const Vector& x0, double h, std::size_t steps, const Philox4x32& gen, StreamId stream, Visit&& visit) {
    Vector z = x0;
    Vector scratch(sys.dim());
    const double noise_scale = std::sqrt(eps * h);
    for (std::size_t k = 0; k < steps; ++k) {
        em_step(z, scratch, drift.at(k), sigma, h, noise_scale, gen, stream, k);
        if (!z.allFinite())
            throw DivergenceError("SDE path diverged at step " + std::to_string(k + 1), k + 1);
        visit(z);
    }
}

// Fractional offsets in [0,1)^d of the p-th start point among n.
class StartPattern {
public:
    StartPattern(int dim, std::size_t n) : dim_(dim) {
        const auto guess = static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(n), 1.0 / dim)));
        for (std::size_t q = guess > 1 ? guess - 1 : 1; q <= guess + 1; ++q) {
            std::size_t power = 1;
            for (int k = 0; k < dim; ++k) power *= q;
            if (power == n) grid_ = q;
        }
        // Generalized golden ratio: root of x^(d+1) = x + 1.
        double phi = 2.0;
        for (int it = 0; it < 64; ++it) phi = std::pow(1.0 + phi, 1.0 / (dim + 1));
        alpha_.resize(dim);
        for (int k = 0; k < dim; ++k) alpha_(k) = std::fmod(std::pow(1.0 / phi, k + 1), 1.0);
    }

    Vector offset(std::size_t p) const {
        Vector u(dim_);
        if (grid_ > 0) {
            std::size_t rem = p;
            for (int k = dim_; k-- > 0;) {
                u(k) = (static_cast<double>(rem % grid_) + 0.5) / static_cast<double>(grid_);
                rem /= grid_;
            }
        } else {
            for (int k = 0; k < dim_; ++k) {
                const double v = 0.5 + static_cast<double>(p + 1) * alpha_(k);
                u(k) = v - std::floor(v);
            }
        }
        return u;
    }

private:
    int dim_;
    std::size_t grid_ = 0;
    Vector alpha_;
};

}  // namespace

void NoiseSpec::validate(int dim) const {
    if (sigma.rows() != dim || sigma.cols() != dim) throw ConfigError("perturb.sigma: expected a d x d matrix");
    if (!sigma.allFinite()) throw ConfigError("perturb.sigma: entries must be finite");
    if (epsilons.empty()) throw ConfigError("perturb.epsilon_list: must not be empty");
    for (std::size_t k = 0; k < epsilons.size(); ++k) {
        const std::string where = "perturb.epsilon_list[" + std::to_string(k) + "]";
        if (!(epsilons[k] >= 0.0) || !std::isfinite(epsilons[k])) throw ConfigError(where + ": must be >= 0");
        if (k > 0 && !(epsilons[k] < epsilons[k - 1])) throw ConfigError(where + ": must be decreasing");
    }
}

void SdePathConfig::validate() const {
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("perturb.h: must be > 0");
    if (n_paths < 1) throw ConfigError("perturb.n_paths: must be >= 1");
    if (n_paths > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("perturb.n_paths: too large");
}

std::vector<Vector> simulate_sde(const MultiChannelSystem& sys, const FeedbackProfile& profile, const Matrix& sigma,
                                 double eps, const Vector& x0, const SdePathConfig& cfg, StreamId stream) {
    cfg.validate();
    check_inputs(sys, profile, sigma, eps, x0);
    const DriftSchedule drift(sys, profile, cfg.h, cfg.n_steps);
    const Philox4x32 gen(cfg.seed);
    std::vector<Vector> path;
    path.reserve(cfg.n_steps + 1);
    path.push_back(x0);
    run_path(sys, drift, sigma, eps, x0, cfg.h, cfg.n_steps, gen, stream, [&](const Vector& z) { path.push_back(z); });
    return path;
}

Vector simulate_sde_endpoint(const MultiChannelSystem& sys, const FeedbackProfile& profile, const Matrix& sigma,
                             double eps, const Vector& x0, const SdePathConfig& cfg, StreamId stream) {
    cfg.validate();
    check_inputs(sys, profile, sigma, eps, x0);
    const DriftSchedule drift(sys, profile, cfg.h, cfg.n_steps);
    const Philox4x32 gen(cfg.seed);
    Vector last = x0;
    run_path(sys, drift, sigma, eps, x0, cfg.h, cfg.n_steps, gen, stream, [&](const Vector& z) { last = z; });
    return last;
}

EnsembleStatistics ensemble_statistics(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                       const Matrix& sigma, double eps, const Vector& x0, const SdePathConfig& cfg,
                                       unsigned threads) {
    cfg.validate();
    check_inputs(sys, profile, sigma, eps, x0);
    const DriftSchedule drift(sys, profile, cfg.h, cfg.n_steps);
    const Philox4x32 gen(cfg.seed);
    const int d = sys.dim();
    Matrix endpoints(d, static_cast<Eigen::Index>(cfg.n_paths));
    parallel_for(cfg.n_paths, threads, [&](std::size_t p) {
        Vector last = x0;
        run_path(sys, drift, sigma, eps, x0, cfg.h, cfg.n_steps, gen, {0, static_cast<std::uint32_t>(p)},
                 [&](const Vector& z) { last = z; });
        endpoints.col(static_cast<Eigen::Index>(p)) = last;
    });

    EnsembleStatistics stats;
    stats.t = cfg.h * static_cast<double>(cfg.n_steps);
    stats.paths = cfg.n_paths;
    stats.mean = Vector::Zero(d);
    for (Eigen::Index p = 0; p < endpoints.cols(); ++p) stats.mean += endpoints.col(p);
    stats.mean /= static_cast<double>(cfg.n_paths);
    stats.covariance = Matrix::Zero(d, d);
    for (Eigen::Index p = 0; p < endpoints.cols(); ++p) {
        const Vector c = endpoints.col(p) - stats.mean;
        stats.covariance += c * c.transpose();
    }
    if (cfg.n_paths > 1) stats.covariance /= static_cast<double>(cfg.n_paths - 1);
    return stats;
}

UlamMatrix build_stochastic_ulam(const Partition& partition, const MultiChannelSystem& sys,
                                 const FeedbackProfile& profile, const Matrix& sigma, double eps, double t,
                                 const SdePathConfig& cfg, const StochasticUlamOptions& options) {
    cfg.validate();
    if (cfg.n_paths < 100) throw ConfigError("perturb.n_paths: at least 100 paths per cell are required");
    if (partition.dim() != sys.dim()) throw ConfigError("domain: dimension differs from the system");
    if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError("stochastic ulam: t must be finite and >= 0");
    check_inputs(sys, profile, sigma, eps, partition.lower());

    const auto steps = static_cast<std::size_t>(std::llround(t / cfg.h));
    const double h = steps > 0 ? t / static_cast<double>(steps) : 0.0;
    const DriftSchedule drift(sys, profile, h, steps);
    const Philox4x32 gen(cfg.seed);
    const StartPattern pattern(partition.dim(), cfg.n_paths);
    const int d = partition.dim();
    Vector width(d);
    for (int k = 0; k < d; ++k) width(k) = partition.cell_width(k);

    const std::size_t M = partition.cell_count();
    std::vector<std::vector<UlamMatrix::Entry>> rows(M);
    std::vector<std::uint32_t> escaped(M, 0);
    parallel_for(M, options.threads, [&](std::size_t cell) {
        const Vector origin = partition.cell_lower(cell);
        std::vector<std::uint32_t> landing;
        landing.reserve(cfg.n_paths);
        for (std::size_t p = 0; p < cfg.n_paths; ++p) {
            const Vector x0 = origin + pattern.offset(p).cwiseProduct(width);
            Vector last = x0;
            run_path(sys, drift, sigma, eps, x0, h, steps, gen,
                     {static_cast<std::uint32_t>(cell), static_cast<std::uint32_t>(p)},
                     [&](const Vector& z) { last = z; });
            if (auto target = partition.locate(last))
                landing.push_back(static_cast<std::uint32_t>(*target));
            else
                ++escaped[cell];
        }
        std::sort(landing.begin(), landing.end());
        for (std::size_t k = 0; k < landing.size();) {
            std::size_t end = k;
            while (end < landing.size() && landing[end] == landing[k]) ++end;
            rows[cell].push_back({landing[k], static_cast<std::uint32_t>(end - k)});
            k = end;
        }
    });
    return UlamMatrix(partition, static_cast<std::uint32_t>(cfg.n_paths), std::move(rows), std::move(escaped),
                      options.leak_tol, {0.0, t, profile.hash()});
}

StationaryResult perturbed_stationary(const UlamMatrix& perturbed, const DensityVector& initial,
                                      const StationaryOptions& options) {
    return stationary_density(perturbed, initial, options);
}

namespace {

struct Sweep {
    std::vector<ResilienceEntry> entries;
    std::vector<double> theta_eps;
};

Sweep sweep(const MultiChannelSystem& sys, const FeedbackProfile& profile, const NoiseSpec& noise,
            const ResilienceConfig& cfg, const std::vector<DensityVector>& densities) {
    const StochasticUlamOptions opts{cfg.leak_tol, cfg.threads};
    std::vector<UlamMatrix> reference;
    reference.reserve(cfg.time_grid.size());
    for (double t : cfg.time_grid)
        reference.push_back(build_stochastic_ulam(cfg.partition, sys, profile, noise.sigma, 0.0, t, cfg.paths, opts));

    Sweep out;
    for (double eps : noise.epsilons) {
        double sup = 0.0;
        for (std::size_t k = 0; k < cfg.time_grid.size(); ++k) {
            const double t = cfg.time_grid[k];
            std::optional<UlamMatrix> perturbed;
            if (eps > 0.0) {
                try {
                    perturbed.emplace(
                        build_stochastic_ulam(cfg.partition, sys, profile, noise.sigma, eps, t, cfg.paths, opts));
                } catch (const DomainEscapeError&) {
                }
            }
            for (std::size_t i = 0; i < densities.size(); ++i) {
                ResilienceEntry e;
                e.epsilon = eps;
                e.t = t;
                e.density_id = i;
                const auto base = apply_fp(reference[k], densities[i], true);
                if (eps == 0.0) {
                    // Same sampler, noise off: the perturbed operator is the reference.
                    out.entries.push_back(e);
                    continue;
                }
                if (!perturbed) {
                    e.rejected = true;
                    e.l1_distance = std::numeric_limits<double>::quiet_NaN();
                    e.rel_entropy = kInf;
                    sup = kInf;
                    out.entries.push_back(e);
                    continue;
                }
                const auto moved = apply_fp(*perturbed, densities[i], true);
                e.l1_distance = l1_distance(moved, base);
                e.violation_mass = support_violation_mass(moved, base);
                e.rel_entropy = (cfg.kl_floor == 0.0 && e.violation_mass > 0.0)
                                    ? kInf
                                    : relative_entropy_floored(moved, base, cfg.kl_floor);
                sup = std::max(sup, e.rel_entropy);
                out.entries.push_back(e);
            }
        }
        out.theta_eps.push_back(sup);
    }
    return out;
}

bool non_increasing(const std::vector<double>& v) {
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[k - 1]) return false;
    return true;
}

}  // namespace

ResilienceReport resilience_report(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                   const NoiseSpec& noise, const ResilienceConfig& cfg,
                                   const std::vector<DensityVector>& densities, const StrategySpace* deviations) {
    noise.validate(sys.dim());
    cfg.paths.validate();
    check_profile(sys, profile);
    if (cfg.time_grid.empty()) throw ConfigError("game.time_grid: must not be empty");
    for (std::size_t k = 0; k < cfg.time_grid.size(); ++k)
        if (!(cfg.time_grid[k] >= 0.0) || (k > 0 && !(cfg.time_grid[k] > cfg.time_grid[k - 1])))
            throw ConfigError("game.time_grid[" + std::to_string(k) + "]: must be increasing and >= 0");
    if (!(cfg.kl_floor >= 0.0)) throw ConfigError("kl floor must be nonnegative");
    if (densities.empty()) throw ConfigError("resilience: at least one density is required");
    for (std::size_t i = 0; i < densities.size(); ++i)
        if (!(densities[i].partition() == cfg.partition))
            throw ConfigError("resilience: density " + std::to_string(i) + " partition mismatch");

    ResilienceReport report;
    report.epsilons = noise.epsilons;
    auto main = sweep(sys, profile, noise, cfg, densities);
    report.entries = std::move(main.entries);
    report.theta_eps = std::move(main.theta_eps);
    report.monotone = non_increasing(report.theta_eps);

    if (cfg.estimate_noise_floor) {
        std::optional<double> smallest;
        for (double eps : noise.epsilons)
            if (eps > 0.0) smallest = eps;
        if (smallest) {
            const StochasticUlamOptions opts{1.0, cfg.threads};
            SdePathConfig other = cfg.paths;
            other.seed = cfg.paths.seed + 1;
            double floor = 0.0;
            for (double t : cfg.time_grid) {
                const auto a = build_stochastic_ulam(cfg.partition, sys, profile, noise.sigma, *smallest, t,
                                                     cfg.paths, opts);
                const auto b =
                    build_stochastic_ulam(cfg.partition, sys, profile, noise.sigma, *smallest, t, other, opts);
                for (const auto& theta : densities) {
                    const auto pa = apply_fp(a, theta, true);
                    const auto pb = apply_fp(b, theta, true);
                    const double v = (cfg.kl_floor == 0.0 && support_violation_mass(pa, pb) > 0.0)
                                         ? kInf
                                         : relative_entropy_floored(pa, pb, cfg.kl_floor);
                    floor = std::max(floor, v);
                }
            }
            report.noise_floor = floor;
        }
    }

    if (deviations) {
        deviations->validate(sys);
        for (std::size_t j = 0; j < deviations->channels(); ++j) {
            for (std::size_t k = 0; k < deviations->candidates[j].size(); ++k) {
                const auto& L = deviations->candidates[j][k];
                if (L == profile.gain(j)) continue;
                DeviationResilience dev{j, k, {}, false};
                try {
                    dev.theta_eps = sweep(sys, profile.with_gain(j, L), noise, cfg, densities).theta_eps;
                } catch (const DomainEscapeError&) {
                    dev.rejected = true;
                } catch (const DivergenceError&) {
                    dev.rejected = true;
                }
                report.deviations.push_back(std::move(dev));
            }
        }
    }
    return report;
}

}  // namespace fpgame
