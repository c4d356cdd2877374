#pragma once

// Ulam (piecewise-constant Galerkin) discretization of Frobenius-Perron and
// Koopman operators on a uniform box grid, plus stationary-density solvers.

#include "fpgame/system.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace fpgame {

/// Uniform grid over a compact box. Cells are numbered in row-major order
/// (last axis fastest).
class Partition {
public:
    Partition(Vector lower, Vector upper, std::vector<std::size_t> cells_per_axis);

    int dim() const noexcept { return static_cast<int>(lower_.size()); }
    std::size_t cell_count() const noexcept { return cell_count_; }
    double cell_volume() const noexcept { return cell_volume_; }
    double total_volume() const noexcept { return cell_volume_ * static_cast<double>(cell_count_); }
    const Vector& lower() const noexcept { return lower_; }
    const Vector& upper() const noexcept { return upper_; }
    const std::vector<std::size_t>& cells_per_axis() const noexcept { return cells_per_axis_; }
    double cell_width(int axis) const { return width_(axis); }

    /// Cell containing x; the closed upper face belongs to the last cell.
    std::optional<std::size_t> locate(const Vector& x) const;
    bool contains(const Vector& x) const;

    std::vector<std::size_t> multi_index(std::size_t cell) const;
    Vector cell_lower(std::size_t cell) const;
    Vector cell_center(std::size_t cell) const;

    bool operator==(const Partition& other) const;

private:
    Vector lower_;
    Vector upper_;
    Vector width_;
    std::vector<std::size_t> cells_per_axis_;
    std::size_t cell_count_ = 0;
    double cell_volume_ = 0.0;
};

/// Piecewise-constant density: values are cell averages (1/volume units).
class DensityVector {
public:
    /// Validates nonnegativity and unit mass (within mass_tol).
    static DensityVector create(Partition partition, std::vector<double> values, double mass_tol = 1e-9);
    /// Validates nonnegativity and mass <= 1; used for push-forwards that leak.
    static DensityVector sub_density(Partition partition, std::vector<double> values);
    /// Scales nonnegative values to unit mass.
    static DensityVector normalized(Partition partition, std::vector<double> values);
    static DensityVector uniform(const Partition& partition);

    const Partition& partition() const noexcept { return partition_; }
    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    double mass() const noexcept;

private:
    DensityVector(Partition partition, std::vector<double> values)
        : partition_(std::move(partition)), values_(std::move(values)) {}

    Partition partition_;
    std::vector<double> values_;
};

/// Bounded cell-average observable.
class ObservableVector {
public:
    ObservableVector(Partition partition, std::vector<double> values);
    /// Samples f at cell centers.
    static ObservableVector from_function(const Partition& partition, const std::function<double(const Vector&)>& f);

    const Partition& partition() const noexcept { return partition_; }
    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    double sup_norm() const noexcept;

private:
    Partition partition_;
    std::vector<double> values_;
};

struct FlowMetadata {
    double t0 = 0.0;
    double t1 = 0.0;
    std::uint64_t profile_hash = 0;
};

/// Row-substochastic transfer matrix stored as integer landing counts in CSR
/// form. P[i][j] = counts / samples_per_row; leakage[i] = escaped / samples_per_row.
class UlamMatrix {
public:
    struct Entry {
        std::uint32_t col;
        std::uint32_t count;
    };

    /// rows[i] lists (col, count) pairs; duplicate columns are merged and sorted.
    /// Throws DomainEscapeError if a row's leakage exceeds leak_tol.
    UlamMatrix(Partition partition, std::uint32_t samples_per_row, std::vector<std::vector<Entry>> rows,
               std::vector<std::uint32_t> escaped, double leak_tol, FlowMetadata meta = {});

    const Partition& partition() const noexcept { return partition_; }
    std::size_t size() const noexcept { return escaped_.size(); }
    std::uint32_t samples_per_row() const noexcept { return samples_; }
    double leak_tol() const noexcept { return leak_tol_; }
    const FlowMetadata& metadata() const noexcept { return meta_; }

    std::span<const Entry> row(std::size_t i) const {
        return {entries_.data() + row_ptr_[i], entries_.data() + row_ptr_[i + 1]};
    }
    double value(std::size_t i, std::size_t j) const;
    double leakage(std::size_t i) const { return static_cast<double>(escaped_[i]) / samples_; }
    std::uint32_t escaped_count(std::size_t i) const { return escaped_[i]; }
    double max_leakage() const noexcept;
    std::size_t nonzeros() const noexcept { return entries_.size(); }

    Matrix to_dense() const;
    bool operator==(const UlamMatrix& other) const;

private:
    Partition partition_;
    std::uint32_t samples_;
    std::vector<std::size_t> row_ptr_;
    std::vector<Entry> entries_;
    std::vector<std::uint32_t> escaped_;
    double leak_tol_;
    FlowMetadata meta_;
};

using PointMap = std::function<Vector(const Vector&)>;

struct UlamOptions {
    double leak_tol = 0.05;
    unsigned threads = 1;
    FlowMetadata metadata{};
};

/// Maps q^d regularly spaced interior points of every cell (offsets (k + 1/2)/q)
/// and counts landing cells. samples_per_cell must be q^d with q >= 2.
UlamMatrix build_ulam(const Partition& partition, const PointMap& map, std::size_t samples_per_cell,
                      const UlamOptions& options = {});

/// Push-forward: transported masses m' = P^T m. With renormalize the result is scaled
/// back to unit mass, allowed only while the leaked fraction stays within P's leak_tol.
DensityVector apply_fp(const UlamMatrix& P, const DensityVector& density, bool renormalize = false);

/// (U zeta)_i = sum_j P[i][j] zeta_j.
ObservableVector apply_koopman(const UlamMatrix& P, const ObservableVector& observable);

/// |<P theta, zeta> - <theta, U zeta>| with volume-weighted inner products.
double adjoint_residual(const UlamMatrix& P, const DensityVector& density, const ObservableVector& observable);

/// Volume-weighted L1 distance.
double l1_distance(const DensityVector& a, const DensityVector& b);

struct StationaryOptions {
    double tol = 1e-10;
    std::size_t max_iter = 100000;
    bool cesaro = false;
};

struct StationaryResult {
    DensityVector density;
    std::size_t iterations = 0;
    /// ||P theta* - theta*||_1 of the returned density (renormalized push-forward).
    double residual = 0.0;
};

/// Power iteration theta <- normalize(P theta) until consecutive iterates are within
/// tol in L1. With cesaro the running average of P^k theta0 is returned instead and
/// the stopping test is its own fixed-point residual. Throws NonConvergenceError.
StationaryResult stationary_density(const UlamMatrix& P, const DensityVector& initial,
                                    const StationaryOptions& options = {});

/// (1/n) sum_{k<n} P^k theta0, each power renormalized.
DensityVector cesaro_average(const UlamMatrix& P, const DensityVector& initial, std::size_t n);

/// ||P theta - theta||_1 (renormalized push-forward).
double invariance_check(const UlamMatrix& P, const DensityVector& density);

/// (1/n) sum_{k<n} f(S^k x0). With a domain, leaving it throws DomainEscapeError
/// whose cell() is the offending step index.
double birkhoff_average(const PointMap& map, const Vector& x0, const std::function<double(const Vector&)>& observable,
                        std::size_t n_steps, const Partition* domain = nullptr);

}  // namespace fpgame
