#pragma once

// Small additive noise on the closed loop, dZ = M Z dt + sqrt(eps) sigma dW,
// simulated with Euler-Maruyama on counter-based random streams, and the
// resulting Monte Carlo transfer operators.

#include "fpgame/game.hpp"
#include "fpgame/system.hpp"
#include "fpgame/transfer.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace fpgame {

struct NoiseSpec {
    Matrix sigma;                   ///< constant d x d diffusion map
    std::vector<double> epsilons;   ///< strictly decreasing, >= 0

    void validate(int dim) const;
};

struct SdePathConfig {
    double h = 1e-2;
    std::size_t n_steps = 100;
    std::size_t n_paths = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Selects the random stream: normals for step k come from counter (k, path, cell, lane).
struct StreamId {
    std::uint32_t cell = 0;
    std::uint32_t path = 0;
};

/// States Z_0..Z_n of one Euler-Maruyama path. eps == 0 gives plain Euler.
/// Throws DivergenceError on a non-finite state.
std::vector<Vector> simulate_sde(const MultiChannelSystem& sys, const FeedbackProfile& profile, const Matrix& sigma,
                                 double eps, const Vector& x0, const SdePathConfig& cfg, StreamId stream = {});

/// Final state only.
Vector simulate_sde_endpoint(const MultiChannelSystem& sys, const FeedbackProfile& profile, const Matrix& sigma,
                             double eps, const Vector& x0, const SdePathConfig& cfg, StreamId stream = {});

struct EnsembleStatistics {
    double t = 0.0;
    std::size_t paths = 0;
    Vector mean;
    Matrix covariance;  ///< unbiased (n - 1) estimator
};

/// Endpoint statistics over cfg.n_paths paths from x0 (path index p uses stream {0, p}).
EnsembleStatistics ensemble_statistics(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                       const Matrix& sigma, double eps, const Vector& x0, const SdePathConfig& cfg,
                                       unsigned threads = 1);

struct StochasticUlamOptions {
    double leak_tol = 0.05;
    unsigned threads = 1;
};

/// Row i is the empirical law at time t of n_paths paths started from stratified
/// points of cell i (a regular sub-grid when n_paths is a perfect d-th power, a
/// Kronecker sequence otherwise). The step is t / round(t / h).
UlamMatrix build_stochastic_ulam(const Partition& partition, const MultiChannelSystem& sys,
                                 const FeedbackProfile& profile, const Matrix& sigma, double eps, double t,
                                 const SdePathConfig& cfg, const StochasticUlamOptions& options = {});

/// Stationary density of a perturbed operator.
StationaryResult perturbed_stationary(const UlamMatrix& perturbed, const DensityVector& initial,
                                      const StationaryOptions& options = {});

struct ResilienceConfig {
    ResilienceConfig(Partition partition, std::vector<double> time_grid, SdePathConfig paths)
        : partition(std::move(partition)), time_grid(std::move(time_grid)), paths(paths) {}

    Partition partition;
    std::vector<double> time_grid;
    SdePathConfig paths;
    double leak_tol = 0.05;
    /// Added to the unperturbed push-forward inside the relative entropy; 0 disables.
    double kl_floor = 0.0;
    unsigned threads = 1;
    /// Also estimate the Monte Carlo floor from two seeds at the smallest positive eps.
    bool estimate_noise_floor = false;
};

struct ResilienceEntry {
    double epsilon = 0.0;
    double t = 0.0;
    std::size_t density_id = 0;
    double l1_distance = 0.0;
    double rel_entropy = 0.0;      ///< +infinity on an unfloored support violation
    double violation_mass = 0.0;   ///< perturbed mass where the unperturbed density is 0
    bool rejected = false;         ///< perturbed operator exceeded leak_tol
};

struct DeviationResilience {
    std::size_t channel = 0;
    std::size_t candidate = 0;
    std::vector<double> theta_eps;
    bool rejected = false;
};

struct ResilienceReport {
    std::vector<double> epsilons;
    std::vector<ResilienceEntry> entries;
    std::vector<double> theta_eps;  ///< sup over t and densities, per eps
    bool monotone = false;          ///< theta_eps non-increasing as eps decreases
    std::optional<double> noise_floor;
    std::vector<DeviationResilience> deviations;
};

/// Compares perturbed and unperturbed push-forwards of every density at every grid
/// time. The unperturbed operator is the same sampler run with eps = 0, so eps = 0
/// rows are exactly zero. With a strategy space, every unilateral deviation from
/// the profile is swept as well.
ResilienceReport resilience_report(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                   const NoiseSpec& noise, const ResilienceConfig& cfg,
                                   const std::vector<DensityVector>& densities,
                                   const StrategySpace* deviations = nullptr);

}  // namespace fpgame
