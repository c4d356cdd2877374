#pragma once

// Entropy functionals of piecewise-constant densities, in nats. Cells with zero
// density contribute nothing (0 ln 0 = 0).

#include "fpgame/transfer.hpp"

#include <cstddef>

namespace fpgame {

struct EntropyReport {
    double value = 0.0;
    std::size_t support_cells = 0;
};

/// -sum_i theta_i ln(theta_i) vol.
EntropyReport entropy(const DensityVector& density);

/// sum_i xi_i ln(xi_i / theta_i) vol over cells with xi_i > 0. Throws SupportError
/// naming the first cell where xi > 0 but theta = 0.
double relative_entropy(const DensityVector& xi, const DensityVector& theta);

/// Relative entropy against the reference theta + floor (not renormalized), so
/// every cell is in the reference support when floor > 0.
double relative_entropy_floored(const DensityVector& xi, const DensityVector& theta, double floor);

/// Mass of xi sitting on cells where theta vanishes.
double support_violation_mass(const DensityVector& xi, const DensityVector& theta);

/// Cross-entropy minus entropy, (-sum theta ln xi) - (-sum theta ln theta). Equals
/// relative_entropy(theta, xi); the support condition is supp theta in supp xi.
double gibbs_gap(const DensityVector& theta, const DensityVector& xi);

/// sum_i V_i theta_i vol.
double expectation(const ObservableVector& V, const DensityVector& density);

}  // namespace fpgame
