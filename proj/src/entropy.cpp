#include "fpgame/entropy.hpp"

#include "fpgame/errors.hpp"

#include <cmath>
#include <string>

namespace fpgame {

namespace {

void check_pair(const Partition& a, const Partition& b) {
    if (!(a == b)) throw ConfigError("entropy: partitions do not match");
}

}  // namespace

EntropyReport entropy(const DensityVector& density) {
    EntropyReport report;
    double acc = 0.0;
    for (double v : density.values()) {
        if (v > 0.0) {
            acc -= v * std::log(v);
            ++report.support_cells;
        }
    }
    report.value = acc * density.partition().cell_volume();
    return report;
}

double relative_entropy(const DensityVector& xi, const DensityVector& theta) {
    check_pair(xi.partition(), theta.partition());
    double acc = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i) {
        const double p = xi[i];
        if (p == 0.0) continue;
        const double q = theta[i];
        if (q == 0.0)
            throw SupportError("relative_entropy: cell " + std::to_string(i) +
                                   " carries mass outside the reference support",
                               i);
        acc += p * std::log(p / q);
    }
    return acc * xi.partition().cell_volume();
}

double relative_entropy_floored(const DensityVector& xi, const DensityVector& theta, double floor) {
    if (!(floor >= 0.0)) throw ConfigError("kl floor must be nonnegative");
    if (floor == 0.0) return relative_entropy(xi, theta);
    check_pair(xi.partition(), theta.partition());
    double acc = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i) {
        const double p = xi[i];
        if (p > 0.0) acc += p * std::log(p / (theta[i] + floor));
    }
    return acc * xi.partition().cell_volume();
}

double support_violation_mass(const DensityVector& xi, const DensityVector& theta) {
    check_pair(xi.partition(), theta.partition());
    double acc = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i)
        if (xi[i] > 0.0 && theta[i] == 0.0) acc += xi[i];
    return acc * xi.partition().cell_volume();
}

double gibbs_gap(const DensityVector& theta, const DensityVector& xi) {
    check_pair(theta.partition(), xi.partition());
    double cross = 0.0;
    double self = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double p = theta[i];
        if (p == 0.0) continue;
        if (xi[i] == 0.0)
            throw SupportError("gibbs_gap: cell " + std::to_string(i) + " is outside the support of xi", i);
        cross -= p * std::log(xi[i]);
        self -= p * std::log(p);
    }
    return (cross - self) * theta.partition().cell_volume();
}

double expectation(const ObservableVector& V, const DensityVector& density) {
    check_pair(V.partition(), density.partition());
    double acc = 0.0;
    for (std::size_t i = 0; i < V.size(); ++i) acc += V[i] * density[i];
    return acc * density.partition().cell_volume();
}

}  // namespace fpgame
