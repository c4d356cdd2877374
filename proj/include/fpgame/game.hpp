#pragma once

// Best-response search for equilibrium feedback gains over finite candidate
// sets. A channel's criterion at time t is the relative entropy of the
// pushed-forward reference density against the reference itself; channels
// minimize the worst value over the evaluation grid.

#include "fpgame/entropy.hpp"
#include "fpgame/system.hpp"
#include "fpgame/transfer.hpp"

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace fpgame {

struct StrategySpace {
    /// candidates[j] is channel j's ordered candidate list.
    std::vector<std::vector<Matrix>> candidates;
    /// Reject combinations whose closed loop is not Hurwitz.
    bool stability_filter = false;

    std::size_t channels() const noexcept { return candidates.size(); }
    void validate(const MultiChannelSystem& sys) const;
    /// Number of candidate combinations (product of list sizes).
    std::size_t combinations() const;
};

/// Index of the chosen candidate per channel.
using StrategyChoice = std::vector<std::size_t>;

FeedbackProfile profile_from_choice(const StrategySpace& space, const StrategyChoice& choice);
/// Mixed-radix enumeration of all combinations, channel 0 slowest.
std::vector<StrategyChoice> all_choices(const StrategySpace& space);

struct GameConfig {
    GameConfig(Partition partition, std::vector<double> time_grid);

    Partition partition;
    std::vector<double> time_grid;
    DensityVector reference;              ///< defaults to uniform on the box
    std::vector<DensityVector> extra_densities;  ///< re-checked by verify_equilibrium
    double tol = 1e-9;
    std::size_t max_rounds = 50;
    std::size_t samples_per_cell = 16;
    double leak_tol = 0.05;
    double steps_per_unit_time = 200.0;  ///< RK4 resolution of the flow maps
    StationaryOptions stationary{};
    unsigned threads = 1;

    void validate() const;
    double horizon() const { return time_grid.back(); }
};

/// Ulam matrix of the closed-loop flow over [0, t].
UlamMatrix transfer_operator(const MultiChannelSystem& sys, const FeedbackProfile& profile, double t,
                             const GameConfig& cfg);

/// Entry k = H_r(P_{t_k} theta_ref | theta_ref) with the push-forward renormalized.
/// Mass landing outside the reference support gives +infinity. Leakage rejections
/// propagate as DomainEscapeError naming t and the profile hash.
std::vector<double> criterion(const MultiChannelSystem& sys, const FeedbackProfile& profile, std::size_t channel,
                              const GameConfig& cfg);

struct BestResponse {
    std::size_t index = 0;
    FeedbackGain gain;
    double objective = 0.0;
    /// Objective per candidate; +infinity marks rejected candidates.
    std::vector<double> objectives;
};

/// Minimizes max_t criterion over channel j's candidates with the others held at
/// `profile`. Ties go to the lowest index. Throws EmptyStrategyError if every
/// candidate is rejected by the stability or leakage filters.
BestResponse best_response(const MultiChannelSystem& sys, const FeedbackProfile& profile, std::size_t channel,
                           const StrategySpace& space, const GameConfig& cfg);

struct EquilibriumResult {
    FeedbackProfile profile;
    StrategyChoice choice;
    /// per_channel_criteria[j][k] at time_grid[k].
    std::vector<std::vector<double>> per_channel_criteria;
    std::optional<DensityVector> stationary;
    double stationary_entropy = std::numeric_limits<double>::quiet_NaN();
    /// ||P_t theta* - theta*||_1 at every grid time.
    std::vector<double> stationary_residuals;
    /// ||P_T theta_ref - theta*||_1 at the horizon T.
    double horizon_distance = std::numeric_limits<double>::quiet_NaN();
    /// stationary entropy >= H(P_t theta_ref) - tol at every grid time.
    bool entropy_dominance = false;
    std::size_t rounds = 0;
    bool converged = false;
    /// Choice after every round, starting with the initial one.
    std::vector<StrategyChoice> history;
};

/// Round-robin best responses (channels 0..N-1) until a full round changes nothing
/// or max_rounds is reached. A channel only switches when the improvement exceeds tol.
EquilibriumResult find_equilibrium(const MultiChannelSystem& sys, const StrategySpace& space, const GameConfig& cfg,
                                   const StrategyChoice& initial);

struct ConditionCheck {
    bool pass = true;
    /// Worst violation; <= tol means pass. -infinity when nothing was checked.
    double margin = -std::numeric_limits<double>::infinity();
    std::string detail;
};

struct DensityVerification {
    std::size_t density_index = 0;  ///< 0 = reference, k = extra_densities[k-1]
    ConditionCheck no_deviation;    ///< criterion dominance at every grid time
    ConditionCheck convergence;     ///< ||P_t theta - theta*||_1 non-increasing
    ConditionCheck entropy;         ///< H(P_t^{dev} theta) <= H(theta*)
};

struct EquilibriumReport {
    std::vector<DensityVerification> densities;
    std::optional<DensityVector> stationary;
    std::size_t deviations_checked = 0;
    std::size_t deviations_rejected = 0;

    bool no_deviation_pass() const;
    bool convergence_pass() const;
    bool entropy_pass() const;
    bool pass() const { return no_deviation_pass() && convergence_pass() && entropy_pass(); }
};

/// Checks every unilateral candidate deviation at every grid time for the reference
/// density and each extra density.
EquilibriumReport verify_equilibrium(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                     const StrategySpace& space, const GameConfig& cfg);

struct BallSample {
    std::vector<std::pair<DensityVector, DensityVector>> pairs;
    std::size_t resampled = 0;
};

/// n_pairs density pairs in the L1 ball of radius beta around center, each drawn as
/// a random convex step toward a Dirichlet(1) density. Pairs closer than 1e-12 are
/// redrawn and counted.
BallSample sample_ball_pairs(const DensityVector& center, double beta, std::size_t n_pairs, std::uint64_t seed);

struct ContractionEstimate {
    double kappa = 0.0;
    double drift = 0.0;
    bool ball_ok = false;
    std::size_t resampled = 0;
    std::size_t evaluations = 0;
    std::size_t profiles = 0;
};

/// kappa = max over sampled pairs, admissible candidate combinations and grid times
/// of ||P(theta2 - theta1)||_1 / ||theta2 - theta1||_1; drift = max ||P theta0 - theta0||_1.
/// Push-forwards are not renormalized so the ratio is that of the linear operator.
ContractionEstimate contraction_estimate(const MultiChannelSystem& sys, const StrategySpace& space,
                                         const GameConfig& cfg, const DensityVector& center, double beta,
                                         std::size_t n_pairs, std::uint64_t seed);

struct DecayRow {
    std::size_t density_index = 0;
    double t = 0.0;
    double entropy = 0.0;
    double relative_entropy = 0.0;  ///< +infinity on support violation
    double violation_mass = 0.0;
};

struct DecayTrace {
    DensityVector stationary;
    std::vector<DecayRow> rows;
    std::vector<std::size_t> skipped;
    std::vector<std::string> warnings;

    std::vector<double> series(std::size_t density_index) const;
    bool non_increasing(std::size_t density_index, double tol) const;
};

/// H_r(P_t theta | theta*) for every density and time. theta* is the stationary
/// density of P at cfg's horizon started from cfg.reference. With floor == 0 a
/// density not supported inside supp theta* is skipped with a warning; with
/// floor > 0 the reference becomes theta* + floor and nothing is skipped.
DecayTrace entropy_decay_trace(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                               const std::vector<DensityVector>& densities, const std::vector<double>& t_grid,
                               const GameConfig& cfg, double floor = 0.0);

/// Same, against a caller-supplied stationary density.
DecayTrace entropy_decay_trace(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                               const std::vector<DensityVector>& densities, const std::vector<double>& t_grid,
                               const GameConfig& cfg, const DensityVector& stationary, double floor = 0.0);

}  // namespace fpgame
