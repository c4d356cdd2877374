#pragma once

// Multi-channel linear plant x' = (A(t) + sum_j B_j(t) L_j) x with constant
// per-channel state-feedback gains, and its state-transition matrices.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fpgame {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Coefficients active on [start, next segment start).
struct CoefficientSegment {
    double start = 0.0;
    Matrix A;
    std::vector<Matrix> B;
};

class MultiChannelSystem {
public:
    /// Constant coefficients.
    MultiChannelSystem(Matrix A, std::vector<Matrix> B);

    /// Piecewise-constant coefficients. The first segment must start at t = 0 and
    /// starts must be strictly increasing; every segment has the same shapes.
    explicit MultiChannelSystem(std::vector<CoefficientSegment> schedule);

    int dim() const noexcept { return static_cast<int>(segments_.front().A.rows()); }
    std::size_t channels() const noexcept { return segments_.front().B.size(); }
    int input_dim(std::size_t channel) const { return static_cast<int>(segments_.front().B.at(channel).cols()); }

    bool time_varying() const noexcept { return segments_.size() > 1; }
    const std::vector<CoefficientSegment>& segments() const noexcept { return segments_; }
    const CoefficientSegment& segment_at(double t) const;

    /// Segment starts strictly inside (t0, t1).
    std::vector<double> breakpoints_between(double t0, double t1) const;

private:
    std::vector<CoefficientSegment> segments_;
};

struct FeedbackGain {
    std::size_t channel = 0;
    Matrix L;
};

/// One gain per channel, indexed 0..N-1.
class FeedbackProfile {
public:
    /// gains[j] is the gain of channel j.
    explicit FeedbackProfile(std::vector<Matrix> gains);
    /// Any order; each channel index must appear exactly once.
    explicit FeedbackProfile(const std::vector<FeedbackGain>& gains);

    std::size_t channels() const noexcept { return gains_.size(); }
    const Matrix& gain(std::size_t channel) const { return gains_.at(channel); }
    const std::vector<Matrix>& gains() const noexcept { return gains_; }

    /// Copy with channel j's gain replaced (a unilateral deviation).
    FeedbackProfile with_gain(std::size_t channel, Matrix L) const;

    /// Stable hash of the gain entries, used for artifact metadata.
    std::uint64_t hash() const noexcept;

private:
    std::vector<Matrix> gains_;
};

/// Throws ConfigError unless the profile has one gain per channel with shape r_j x d.
void check_profile(const MultiChannelSystem& sys, const FeedbackProfile& profile);

struct TransitionMatrix {
    double t0 = 0.0;
    double t1 = 0.0;
    Matrix phi;
};

/// A(t) + sum_j B_j(t) L_j on the segment active at t.
Matrix closed_loop_matrix(const MultiChannelSystem& sys, const FeedbackProfile& profile, double t);

/// A(t) + sum_{i != j} B_i(t) L_i: the loop with channel j left open.
Matrix closed_loop_without(const MultiChannelSystem& sys, const FeedbackProfile& profile, std::size_t channel, double t);

/// Fixed-step RK4 solution of Phi' = M(t) Phi, Phi(t0) = I. Steps are split across
/// coefficient segments so no step straddles a discontinuity.
TransitionMatrix integrate_transition(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                      double t0, double t1, std::size_t steps);

struct ChannelDecomposition {
    TransitionMatrix rest;     ///< all channels except j closed
    TransitionMatrix channel;  ///< driven by Phi_rest^{-1} B_j L_j Phi_rest
};

/// Splits the full transition into Phi_rest(t, t0) * Phi_j(t, t0). Both factors are
/// integrated as one coupled RK4 system. Throws ConditioningError when Phi_rest
/// becomes numerically singular.
ChannelDecomposition decompose_transition(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                          std::size_t channel, double t0, double t1, std::size_t steps);

/// x -> Phi x for a fixed transition matrix.
class LinearFlow {
public:
    explicit LinearFlow(TransitionMatrix transition) : transition_(std::move(transition)) {}

    Vector operator()(const Vector& x) const { return transition_.phi * x; }
    const TransitionMatrix& transition() const noexcept { return transition_; }

private:
    TransitionMatrix transition_;
};

LinearFlow flow_map(const MultiChannelSystem& sys, const FeedbackProfile& profile, double t0, double t1,
                    std::size_t steps);

/// True when every eigenvalue of the closed loop has negative real part on every segment.
bool is_hurwitz(const MultiChannelSystem& sys, const FeedbackProfile& profile);

}  // namespace fpgame
