#include "fpgame/system.hpp"

#include "fpgame/errors.hpp"
#include "fpgame/hash.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fpgame {

namespace {

void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw ConfigError(what + ": entries must be finite");
}

void validate_segment(const CoefficientSegment& seg, const CoefficientSegment& first, std::size_t index) {
    const std::string where = "system.schedule[" + std::to_string(index) + "]";
    if (seg.A.rows() < 1 || seg.A.rows() != seg.A.cols())
        throw ConfigError(where + ".A: must be a non-empty square matrix");
    if (seg.B.empty()) throw ConfigError(where + ".B: at least one channel is required");
    require_finite(seg.A, where + ".A");
    if (seg.A.rows() != first.A.rows() || seg.B.size() != first.B.size())
        throw ConfigError(where + ": shapes differ from the first segment");
    for (std::size_t j = 0; j < seg.B.size(); ++j) {
        const auto& B = seg.B[j];
        const std::string bwhere = where + ".B[" + std::to_string(j) + "]";
        if (B.rows() != seg.A.rows()) throw ConfigError(bwhere + ": must have d rows");
        if (B.cols() < 1) throw ConfigError(bwhere + ": must have at least one column");
        if (B.cols() != first.B[j].cols()) throw ConfigError(bwhere + ": column count differs from the first segment");
        require_finite(B, bwhere);
    }
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

// Splits [t0, t1] at coefficient breakpoints and spreads `steps` over the pieces.
struct Piece {
    double begin;
    double end;
    std::size_t steps;
};

std::vector<Piece> pieces(const MultiChannelSystem& sys, double t0, double t1, std::size_t steps) {
    std::vector<double> cuts{t0};
    for (double b : sys.breakpoints_between(t0, t1)) cuts.push_back(b);
    cuts.push_back(t1);
    std::vector<Piece> out;
    if (cuts.size() == 2) {
        out.push_back({t0, t1, steps});
        return out;
    }
    const double total = t1 - t0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double len = cuts[k + 1] - cuts[k];
        const auto share = static_cast<std::size_t>(std::llround(static_cast<double>(steps) * len / total));
        out.push_back({cuts[k], cuts[k + 1], std::max<std::size_t>(1, share)});
    }
    return out;
}

void check_interval(double t0, double t1, std::size_t steps) {
    if (!std::isfinite(t0) || !std::isfinite(t1)) throw ConfigError("transition interval must be finite");
    if (t1 < t0) throw ConfigError("transition interval: t1 must be >= t0");
    if (steps < 1) throw ConfigError("transition steps must be >= 1");
}

}  // namespace

MultiChannelSystem::MultiChannelSystem(Matrix A, std::vector<Matrix> B)
    : MultiChannelSystem(std::vector<CoefficientSegment>{CoefficientSegment{0.0, std::move(A), std::move(B)}}) {}

MultiChannelSystem::MultiChannelSystem(std::vector<CoefficientSegment> schedule) : segments_(std::move(schedule)) {
    if (segments_.empty()) throw ConfigError("system.schedule: at least one segment is required");
    if (segments_.front().start != 0.0) throw ConfigError("system.schedule[0].t: must start at 0");
    for (std::size_t k = 0; k < segments_.size(); ++k) {
        validate_segment(segments_[k], segments_.front(), k);
        if (k > 0 && !(segments_[k].start > segments_[k - 1].start))
            throw ConfigError("system.schedule[" + std::to_string(k) + "].t: must be increasing");
    }
}

const CoefficientSegment& MultiChannelSystem::segment_at(double t) const {
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double value, const CoefficientSegment& s) { return value < s.start; });
    return it == segments_.begin() ? segments_.front() : *std::prev(it);
}

std::vector<double> MultiChannelSystem::breakpoints_between(double t0, double t1) const {
    std::vector<double> out;
    for (const auto& s : segments_)
        if (s.start > t0 && s.start < t1) out.push_back(s.start);
    return out;
}

FeedbackProfile::FeedbackProfile(std::vector<Matrix> gains) : gains_(std::move(gains)) {
    if (gains_.empty()) throw ConfigError("feedback profile: at least one gain is required");
}

FeedbackProfile::FeedbackProfile(const std::vector<FeedbackGain>& gains) {
    if (gains.empty()) throw ConfigError("feedback profile: at least one gain is required");
    gains_.resize(gains.size());
    std::vector<bool> seen(gains.size(), false);
    for (const auto& g : gains) {
        if (g.channel >= gains.size())
            throw ConfigError("feedback profile: channel index " + std::to_string(g.channel) + " out of range");
        if (seen[g.channel])
            throw ConfigError("feedback profile: channel " + std::to_string(g.channel) + " appears twice");
        seen[g.channel] = true;
        gains_[g.channel] = g.L;
    }
}

FeedbackProfile FeedbackProfile::with_gain(std::size_t channel, Matrix L) const {
    FeedbackProfile copy = *this;
    copy.gains_.at(channel) = std::move(L);
    return copy;
}

std::uint64_t FeedbackProfile::hash() const noexcept {
    Fnv1a h;
    for (const auto& L : gains_) {
        h.update(static_cast<std::uint64_t>(L.rows()));
        h.update(static_cast<std::uint64_t>(L.cols()));
        for (Eigen::Index r = 0; r < L.rows(); ++r)
            for (Eigen::Index c = 0; c < L.cols(); ++c) h.update(L(r, c));
    }
    return h.digest();
}

void check_profile(const MultiChannelSystem& sys, const FeedbackProfile& profile) {
    if (profile.channels() != sys.channels())
        throw ConfigError("feedback profile: expected " + std::to_string(sys.channels()) + " gains, got " +
                          std::to_string(profile.channels()));
    for (std::size_t j = 0; j < sys.channels(); ++j) {
        const auto& L = profile.gain(j);
        if (L.rows() != sys.input_dim(j) || L.cols() != sys.dim())
            throw ConfigError("channels[" + std::to_string(j) + "].gains: expected shape " +
                              std::to_string(sys.input_dim(j)) + "x" + std::to_string(sys.dim()));
        if (!L.allFinite()) throw ConfigError("channels[" + std::to_string(j) + "].gains: entries must be finite");
    }
}

Matrix closed_loop_matrix(const MultiChannelSystem& sys, const FeedbackProfile& profile, double t) {
    check_profile(sys, profile);
    const auto& seg = sys.segment_at(t);
    Matrix M = seg.A;
    for (std::size_t j = 0; j < seg.B.size(); ++j) M += seg.B[j] * profile.gain(j);
    return M;
}

Matrix closed_loop_without(const MultiChannelSystem& sys, const FeedbackProfile& profile, std::size_t channel,
                           double t) {
    check_profile(sys, profile);
    if (channel >= sys.channels()) throw ConfigError("channel index " + std::to_string(channel) + " out of range");
    const auto& seg = sys.segment_at(t);
    Matrix M = seg.A;
    for (std::size_t j = 0; j < seg.B.size(); ++j)
        if (j != channel) M += seg.B[j] * profile.gain(j);
    return M;
}

TransitionMatrix integrate_transition(const MultiChannelSystem& sys, const FeedbackProfile& profile, double t0,
                                      double t1, std::size_t steps) {
    check_interval(t0, t1, steps);
    check_profile(sys, profile);
    const int d = sys.dim();
    Matrix phi = Matrix::Identity(d, d);
    if (t1 == t0) return {t0, t1, phi};

    std::size_t step_index = 0;
    for (const auto& piece : pieces(sys, t0, t1, steps)) {
        const Matrix M = closed_loop_matrix(sys, profile, piece.begin);
        const double h = (piece.end - piece.begin) / static_cast<double>(piece.steps);
        for (std::size_t s = 0; s < piece.steps; ++s, ++step_index) {
            const Matrix k1 = M * phi;
            const Matrix k2 = M * (phi + 0.5 * h * k1);
            const Matrix k3 = M * (phi + 0.5 * h * k2);
            const Matrix k4 = M * (phi + h * k3);
            phi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!all_finite(phi))
                throw DivergenceError("transition integration diverged at step " + std::to_string(step_index),
                                      step_index);
        }
    }
    return {t0, t1, phi};
}

ChannelDecomposition decompose_transition(const MultiChannelSystem& sys, const FeedbackProfile& profile,
                                          std::size_t channel, double t0, double t1, std::size_t steps) {
    check_interval(t0, t1, steps);
    check_profile(sys, profile);
    if (channel >= sys.channels()) throw ConfigError("channel index " + std::to_string(channel) + " out of range");
    const int d = sys.dim();
    Matrix rest = Matrix::Identity(d, d);
    Matrix own = Matrix::Identity(d, d);
    if (t1 == t0) return {{t0, t1, rest}, {t0, t1, own}};

    constexpr double kMinRcond = 1e-12;
    std::size_t step_index = 0;
    // Right-hand side of Y' = X^{-1} K X Y.
    auto channel_rate = [&](const Matrix& X, const Matrix& K, const Matrix& Y) -> Matrix {
        Eigen::PartialPivLU<Matrix> lu(X);
        if (!(lu.rcond() > kMinRcond))
            throw ConditioningError("open-loop transition for channel " + std::to_string(channel) +
                                    " is near-singular at step " + std::to_string(step_index));
        return lu.solve(K * X * Y);
    };

    for (const auto& piece : pieces(sys, t0, t1, steps)) {
        const Matrix M = closed_loop_without(sys, profile, channel, piece.begin);
        const Matrix K = sys.segment_at(piece.begin).B[channel] * profile.gain(channel);
        const double h = (piece.end - piece.begin) / static_cast<double>(piece.steps);
        for (std::size_t s = 0; s < piece.steps; ++s, ++step_index) {
            const Matrix a1 = M * rest;
            const Matrix b1 = channel_rate(rest, K, own);
            const Matrix X2 = rest + 0.5 * h * a1, Y2 = own + 0.5 * h * b1;
            const Matrix a2 = M * X2;
            const Matrix b2 = channel_rate(X2, K, Y2);
            const Matrix X3 = rest + 0.5 * h * a2, Y3 = own + 0.5 * h * b2;
            const Matrix a3 = M * X3;
            const Matrix b3 = channel_rate(X3, K, Y3);
            const Matrix X4 = rest + h * a3, Y4 = own + h * b3;
            const Matrix a4 = M * X4;
            const Matrix b4 = channel_rate(X4, K, Y4);
            rest += (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            own += (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            if (!all_finite(rest) || !all_finite(own))
                throw DivergenceError("decomposition diverged at step " + std::to_string(step_index), step_index);
        }
    }
    return {{t0, t1, rest}, {t0, t1, own}};
}

LinearFlow flow_map(const MultiChannelSystem& sys, const FeedbackProfile& profile, double t0, double t1,
                    std::size_t steps) {
    return LinearFlow(integrate_transition(sys, profile, t0, t1, steps));
}

bool is_hurwitz(const MultiChannelSystem& sys, const FeedbackProfile& profile) {
    for (const auto& seg : sys.segments()) {
        const Matrix M = closed_loop_matrix(sys, profile, seg.start);
        Eigen::EigenSolver<Matrix> solver(M, false);
        if (solver.info() != Eigen::Success) return false;
        if ((solver.eigenvalues().real().array() >= 0.0).any()) return false;
    }
    return true;
}

}  // namespace fpgame
