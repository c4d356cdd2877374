#include "fpgame/transfer.hpp"

#include "fpgame/errors.hpp"
#include "fpgame/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace fpgame {

namespace {

constexpr double kMassTol = 1e-9;

void check_same_partition(const Partition& a, const Partition& b, const char* what) {
    if (!(a == b)) throw ConfigError(std::string(what) + ": partitions do not match");
}

std::size_t integer_root(std::size_t value, int dim) {
    const auto guess = static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(value), 1.0 / dim)));
    for (std::size_t q = (guess > 1 ? guess - 1 : 1); q <= guess + 1; ++q) {
        std::size_t power = 1;
        for (int k = 0; k < dim; ++k) power *= q;
        if (power == value) return q;
    }
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Partition

Partition::Partition(Vector lower, Vector upper, std::vector<std::size_t> cells_per_axis)
    : lower_(std::move(lower)), upper_(std::move(upper)), cells_per_axis_(std::move(cells_per_axis)) {
    if (lower_.size() < 1) throw ConfigError("domain.lower: must have at least one component");
    if (upper_.size() != lower_.size()) throw ConfigError("domain.upper: dimension differs from domain.lower");
    if (cells_per_axis_.size() != static_cast<std::size_t>(lower_.size()))
        throw ConfigError("domain.cells_per_axis: dimension differs from domain.lower");
    if (!lower_.allFinite() || !upper_.allFinite()) throw ConfigError("domain.lower: bounds must be finite");
    for (Eigen::Index k = 0; k < lower_.size(); ++k)
        if (!(lower_(k) < upper_(k)))
            throw ConfigError("domain.lower[" + std::to_string(k) + "]: must be < domain.upper[" +
                              std::to_string(k) + "]");
    cell_count_ = 1;
    width_.resize(lower_.size());
    cell_volume_ = 1.0;
    for (std::size_t k = 0; k < cells_per_axis_.size(); ++k) {
        if (cells_per_axis_[k] < 1)
            throw ConfigError("domain.cells_per_axis[" + std::to_string(k) + "]: must be positive");
        cell_count_ *= cells_per_axis_[k];
        const auto axis = static_cast<Eigen::Index>(k);
        width_(axis) = (upper_(axis) - lower_(axis)) / static_cast<double>(cells_per_axis_[k]);
        cell_volume_ *= width_(axis);
    }
    if (cell_count_ > std::numeric_limits<std::uint32_t>::max())
        throw ConfigError("domain.cells_per_axis: too many cells");
}

std::optional<std::size_t> Partition::locate(const Vector& x) const {
    std::size_t index = 0;
    for (Eigen::Index k = 0; k < lower_.size(); ++k) {
        const double v = x(k);
        if (!(v >= lower_(k) && v <= upper_(k))) return std::nullopt;
        const auto n = cells_per_axis_[static_cast<std::size_t>(k)];
        auto c = static_cast<std::size_t>(std::floor((v - lower_(k)) / width_(k)));
        c = std::min(c, n - 1);
        index = index * n + c;
    }
    return index;
}

bool Partition::contains(const Vector& x) const {
    if (x.size() != lower_.size()) return false;
    return ((x.array() >= lower_.array()) && (x.array() <= upper_.array())).all();
}

std::vector<std::size_t> Partition::multi_index(std::size_t cell) const {
    std::vector<std::size_t> idx(cells_per_axis_.size());
    for (std::size_t k = cells_per_axis_.size(); k-- > 0;) {
        idx[k] = cell % cells_per_axis_[k];
        cell /= cells_per_axis_[k];
    }
    return idx;
}

Vector Partition::cell_lower(std::size_t cell) const {
    const auto idx = multi_index(cell);
    Vector out(lower_.size());
    for (Eigen::Index k = 0; k < lower_.size(); ++k)
        out(k) = lower_(k) + static_cast<double>(idx[static_cast<std::size_t>(k)]) * width_(k);
    return out;
}

Vector Partition::cell_center(std::size_t cell) const { return cell_lower(cell) + 0.5 * width_; }

bool Partition::operator==(const Partition& other) const {
    return cells_per_axis_ == other.cells_per_axis_ && lower_ == other.lower_ && upper_ == other.upper_;
}

// ---------------------------------------------------------------------------
// DensityVector / ObservableVector

DensityVector DensityVector::sub_density(Partition partition, std::vector<double> values) {
    if (values.size() != partition.cell_count())
        throw ConfigError("density: expected " + std::to_string(partition.cell_count()) + " values, got " +
                          std::to_string(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!(values[i] >= 0.0) || !std::isfinite(values[i]))
            throw ConfigError("density[" + std::to_string(i) + "]: must be finite and nonnegative");
    DensityVector out(std::move(partition), std::move(values));
    if (out.mass() > 1.0 + kMassTol) throw ConfigError("density: mass exceeds 1");
    return out;
}

DensityVector DensityVector::create(Partition partition, std::vector<double> values, double mass_tol) {
    if (values.size() != partition.cell_count())
        throw ConfigError("density: expected " + std::to_string(partition.cell_count()) + " values, got " +
                          std::to_string(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!(values[i] >= 0.0) || !std::isfinite(values[i]))
            throw ConfigError("density[" + std::to_string(i) + "]: must be finite and nonnegative");
    DensityVector out(std::move(partition), std::move(values));
    if (std::abs(out.mass() - 1.0) > mass_tol)
        throw ConfigError("density: mass " + std::to_string(out.mass()) + " differs from 1");
    return out;
}

DensityVector DensityVector::normalized(Partition partition, std::vector<double> values) {
    if (values.size() != partition.cell_count()) throw ConfigError("density: size does not match partition");
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] >= 0.0) || !std::isfinite(values[i]))
            throw ConfigError("density[" + std::to_string(i) + "]: must be finite and nonnegative");
        total += values[i];
    }
    total *= partition.cell_volume();
    if (!(total > 0.0)) throw NumericalError("density: cannot normalize zero mass");
    for (double& v : values) v /= total;
    return DensityVector(std::move(partition), std::move(values));
}

DensityVector DensityVector::uniform(const Partition& partition) {
    return DensityVector(partition, std::vector<double>(partition.cell_count(), 1.0 / partition.total_volume()));
}

double DensityVector::mass() const noexcept {
    return std::accumulate(values_.begin(), values_.end(), 0.0) * partition_.cell_volume();
}

ObservableVector::ObservableVector(Partition partition, std::vector<double> values)
    : partition_(std::move(partition)), values_(std::move(values)) {
    if (values_.size() != partition_.cell_count()) throw ConfigError("observable: size does not match partition");
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (!std::isfinite(values_[i])) throw ConfigError("observable[" + std::to_string(i) + "]: must be finite");
}

ObservableVector ObservableVector::from_function(const Partition& partition,
                                                 const std::function<double(const Vector&)>& f) {
    std::vector<double> values(partition.cell_count());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = f(partition.cell_center(i));
    return ObservableVector(partition, std::move(values));
}

double ObservableVector::sup_norm() const noexcept {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
}

// ---------------------------------------------------------------------------
// UlamMatrix

UlamMatrix::UlamMatrix(Partition partition, std::uint32_t samples_per_row, std::vector<std::vector<Entry>> rows,
                       std::vector<std::uint32_t> escaped, double leak_tol, FlowMetadata meta)
    : partition_(std::move(partition)),
      samples_(samples_per_row),
      escaped_(std::move(escaped)),
      leak_tol_(leak_tol),
      meta_(meta) {
    const std::size_t M = partition_.cell_count();
    if (rows.size() != M || escaped_.size() != M) throw ConfigError("ulam: row count does not match partition");
    if (samples_ == 0) throw ConfigError("ulam: samples per row must be positive");
    if (!(leak_tol_ >= 0.0 && leak_tol_ <= 1.0)) throw ConfigError("domain.leak_tol: must lie in [0, 1]");
    row_ptr_.assign(M + 1, 0);
    for (std::size_t i = 0; i < M; ++i) {
        auto& r = rows[i];
        std::sort(r.begin(), r.end(), [](const Entry& a, const Entry& b) { return a.col < b.col; });
        std::uint64_t total = escaped_[i];
        std::size_t begin = entries_.size();
        for (const auto& e : r) {
            if (e.col >= M) throw ConfigError("ulam: column index out of range");
            if (e.count == 0) continue;
            total += e.count;
            if (entries_.size() > begin && entries_.back().col == e.col)
                entries_.back().count += e.count;
            else
                entries_.push_back(e);
        }
        if (total != samples_)
            throw ConfigError("ulam: row " + std::to_string(i) + " counts do not sum to samples per row");
        row_ptr_[i + 1] = entries_.size();
    }
    std::size_t worst = 0;
    for (std::size_t i = 1; i < M; ++i)
        if (escaped_[i] > escaped_[worst]) worst = i;
    if (M > 0 && leakage(worst) > leak_tol_) {
        throw DomainEscapeError("leakage " + std::to_string(leakage(worst)) + " from cell " + std::to_string(worst) +
                                    " exceeds leak_tol " + std::to_string(leak_tol_),
                                worst, leakage(worst));
    }
}

double UlamMatrix::value(std::size_t i, std::size_t j) const {
    for (const auto& e : row(i))
        if (e.col == j) return static_cast<double>(e.count) / samples_;
    return 0.0;
}

double UlamMatrix::max_leakage() const noexcept {
    std::uint32_t worst = 0;
    for (auto e : escaped_) worst = std::max(worst, e);
    return static_cast<double>(worst) / samples_;
}

Matrix UlamMatrix::to_dense() const {
    const auto M = static_cast<Eigen::Index>(size());
    Matrix dense = Matrix::Zero(M, M);
    for (std::size_t i = 0; i < size(); ++i)
        for (const auto& e : row(i))
            dense(static_cast<Eigen::Index>(i), e.col) = static_cast<double>(e.count) / samples_;
    return dense;
}

bool UlamMatrix::operator==(const UlamMatrix& other) const {
    if (!(partition_ == other.partition_) || samples_ != other.samples_ || row_ptr_ != other.row_ptr_ ||
        escaped_ != other.escaped_ || entries_.size() != other.entries_.size())
        return false;
    for (std::size_t k = 0; k < entries_.size(); ++k)
        if (entries_[k].col != other.entries_[k].col || entries_[k].count != other.entries_[k].count) return false;
    return true;
}

UlamMatrix build_ulam(const Partition& partition, const PointMap& map, std::size_t samples_per_cell,
                      const UlamOptions& options) {
    const int d = partition.dim();
    const std::size_t q = integer_root(samples_per_cell, d);
    if (q < 2)
        throw ConfigError("ulam.samples_per_cell: must be q^d with integer q >= 2, got " +
                          std::to_string(samples_per_cell));
    if (samples_per_cell > std::numeric_limits<std::uint32_t>::max())
        throw ConfigError("ulam.samples_per_cell: too large");

    const std::size_t M = partition.cell_count();
    std::vector<std::vector<UlamMatrix::Entry>> rows(M);
    std::vector<std::uint32_t> escaped(M, 0);

    Vector width(d);
    for (int k = 0; k < d; ++k) width(k) = partition.cell_width(k);

    parallel_for(M, options.threads, [&](std::size_t cell) {
        const Vector origin = partition.cell_lower(cell);
        std::vector<std::uint32_t> landing;
        landing.reserve(samples_per_cell);
        std::vector<std::size_t> sub(static_cast<std::size_t>(d), 0);
        Vector x(d);
        for (std::size_t s = 0; s < samples_per_cell; ++s) {
            std::size_t rem = s;
            for (int k = d; k-- > 0;) {
                sub[static_cast<std::size_t>(k)] = rem % q;
                rem /= q;
            }
            for (int k = 0; k < d; ++k)
                x(k) = origin(k) + (static_cast<double>(sub[static_cast<std::size_t>(k)]) + 0.5) /
                                       static_cast<double>(q) * width(k);
            const Vector y = map(x);
            if (y.size() != d) throw ConfigError("ulam: point map returned a vector of the wrong dimension");
            if (auto target = partition.locate(y))
                landing.push_back(static_cast<std::uint32_t>(*target));
            else
                ++escaped[cell];
        }
        std::sort(landing.begin(), landing.end());
        auto& row = rows[cell];
        for (std::size_t k = 0; k < landing.size();) {
            std::size_t end = k;
            while (end < landing.size() && landing[end] == landing[k]) ++end;
            row.push_back({landing[k], static_cast<std::uint32_t>(end - k)});
            k = end;
        }
    });

    return UlamMatrix(partition, static_cast<std::uint32_t>(samples_per_cell), std::move(rows), std::move(escaped),
                      options.leak_tol, options.metadata);
}

// ---------------------------------------------------------------------------
// Operators

DensityVector apply_fp(const UlamMatrix& P, const DensityVector& density, bool renormalize) {
    check_same_partition(P.partition(), density.partition(), "apply_fp");
    const std::size_t M = P.size();
    std::vector<double> out(M, 0.0);
    const double inv_samples = 1.0 / P.samples_per_row();
    double leaked = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        const double v = density[i];
        if (v == 0.0) continue;
        for (const auto& e : P.row(i)) out[e.col] += v * (e.count * inv_samples);
        leaked += v * P.leakage(i);
    }
    if (!renormalize) return DensityVector::sub_density(P.partition(), std::move(out));

    const double in_mass = density.mass();
    const double leaked_fraction = in_mass > 0.0 ? leaked * P.partition().cell_volume() / in_mass : 0.0;
    if (leaked_fraction > P.leak_tol() + 1e-12)
        throw DomainEscapeError("apply_fp: leaked fraction " + std::to_string(leaked_fraction) +
                                    " exceeds leak_tol; refusing to renormalize",
                                0, leaked_fraction);
    return DensityVector::normalized(P.partition(), std::move(out));
}

ObservableVector apply_koopman(const UlamMatrix& P, const ObservableVector& observable) {
    check_same_partition(P.partition(), observable.partition(), "apply_koopman");
    std::vector<double> out(P.size(), 0.0);
    const double inv_samples = 1.0 / P.samples_per_row();
    for (std::size_t i = 0; i < P.size(); ++i) {
        double acc = 0.0;
        for (const auto& e : P.row(i)) acc += (e.count * inv_samples) * observable[e.col];
        out[i] = acc;
    }
    return ObservableVector(P.partition(), std::move(out));
}

double adjoint_residual(const UlamMatrix& P, const DensityVector& density, const ObservableVector& observable) {
    const auto pushed = apply_fp(P, density, false);
    const auto pulled = apply_koopman(P, observable);
    const double vol = P.partition().cell_volume();
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        lhs += pushed[i] * observable[i];
        rhs += density[i] * pulled[i];
    }
    return std::abs(lhs - rhs) * vol;
}

double l1_distance(const DensityVector& a, const DensityVector& b) {
    check_same_partition(a.partition(), b.partition(), "l1_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc * a.partition().cell_volume();
}

double invariance_check(const UlamMatrix& P, const DensityVector& density) {
    return l1_distance(apply_fp(P, density, true), density);
}

StationaryResult stationary_density(const UlamMatrix& P, const DensityVector& initial,
                                    const StationaryOptions& options) {
    check_same_partition(P.partition(), initial.partition(), "stationary_density");
    if (!(options.tol > 0.0)) throw ConfigError("stationary.tol: must be positive");
    if (options.max_iter < 1) throw ConfigError("stationary.max_iter: must be >= 1");
    if (P.max_leakage() > P.leak_tol()) throw DomainEscapeError("stationary_density: matrix not accepted", 0, P.max_leakage());

    if (!options.cesaro) {
        DensityVector current = initial;
        double diff = std::numeric_limits<double>::infinity();
        for (std::size_t n = 1; n <= options.max_iter; ++n) {
            DensityVector next = apply_fp(P, current, true);
            diff = l1_distance(next, current);
            current = std::move(next);
            if (diff < options.tol) {
                const double residual = invariance_check(P, current);
                return {std::move(current), n, residual};
            }
        }
        throw NonConvergenceError("stationary_density: no convergence after " + std::to_string(options.max_iter) +
                                      " iterations (last L1 step " + std::to_string(diff) + ")",
                                  options.max_iter, diff);
    }

    const std::size_t M = P.size();
    const auto& part = P.partition();
    std::vector<double> sum(initial.values().begin(), initial.values().end());
    DensityVector current = initial;
    double residual = std::numeric_limits<double>::infinity();
    for (std::size_t n = 1; n <= options.max_iter; ++n) {
        if (n > 1) {
            current = apply_fp(P, current, true);
            for (std::size_t i = 0; i < M; ++i) sum[i] += current[i];
        }
        auto average = DensityVector::normalized(part, sum);
        residual = invariance_check(P, average);
        if (residual < options.tol) return {std::move(average), n, residual};
    }
    throw NonConvergenceError("stationary_density (Cesaro): no convergence after " +
                                  std::to_string(options.max_iter) + " iterations (last residual " +
                                  std::to_string(residual) + ")",
                              options.max_iter, residual);
}

DensityVector cesaro_average(const UlamMatrix& P, const DensityVector& initial, std::size_t n) {
    check_same_partition(P.partition(), initial.partition(), "cesaro_average");
    if (n < 1) throw ConfigError("cesaro_average: n must be >= 1");
    std::vector<double> sum(initial.values().begin(), initial.values().end());
    DensityVector current = initial;
    for (std::size_t k = 1; k < n; ++k) {
        current = apply_fp(P, current, true);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += current[i];
    }
    return DensityVector::normalized(P.partition(), std::move(sum));
}

double birkhoff_average(const PointMap& map, const Vector& x0, const std::function<double(const Vector&)>& observable,
                        std::size_t n_steps, const Partition* domain) {
    if (n_steps < 1) throw ConfigError("birkhoff_average: n_steps must be >= 1");
    Vector x = x0;
    // Running mean: exact for constant sequences.
    double mean = 0.0;
    for (std::size_t k = 0; k < n_steps; ++k) {
        if (domain && !domain->contains(x))
            throw DomainEscapeError("trajectory left the domain at step " + std::to_string(k), k, 1.0);
        mean += (observable(x) - mean) / static_cast<double>(k + 1);
        if (k + 1 < n_steps) x = map(x);
    }
    return mean;
}

}  // namespace fpgame
