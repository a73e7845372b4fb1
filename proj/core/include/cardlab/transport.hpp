#pragma once

#include <cstddef>
#include <vector>

#include "cardlab/datasets.hpp"

namespace cardlab {

// n points in R^d, uniform mass, stored row-major.
struct EmpiricalMeasure {
    std::size_t d = 0;
    std::vector<double> points;

    EmpiricalMeasure() = default;
    EmpiricalMeasure(std::size_t dim, std::vector<double> pts);
    static EmpiricalMeasure from(const std::vector<Vec2>& pts);

    std::size_t n() const { return d == 0 ? 0 : points.size() / d; }
    const double* row(std::size_t i) const { return points.data() + i * d; }
};

struct Coupling {
    std::vector<std::size_t> permutation;  // exact case: A[i] -> B[perm[i]]
    std::vector<double> plan;              // entropic case: n x n, row-major, mass 1/n per row
    double transport_cost = 0.0;           // mean squared distance under the coupling
};

struct W2Result {
    double distance = 0.0;
    Coupling coupling;
};

struct SinkhornResult {
    double distance = 0.0;  // sqrt of <C, P> for the returned plan
    bool converged = false;
    std::size_t iterations = 0;
    double marginal_violation = 0.0;
    Coupling coupling;
};

double sq_dist(const double* a, const double* b, std::size_t d);

W2Result w2_exact(const EmpiricalMeasure& A, const EmpiricalMeasure& B);
double brute_force_w2(const EmpiricalMeasure& A, const EmpiricalMeasure& B);
SinkhornResult w2_sinkhorn(const EmpiricalMeasure& A, const EmpiricalMeasure& B, double reg_eps,
                           std::size_t max_iters = 100000, double tol = 1e-9);

// Mean squared distance of a given assignment, for feasibility comparisons.
double assignment_cost(const EmpiricalMeasure& A, const EmpiricalMeasure& B,
                       const std::vector<std::size_t>& perm);

// Median of the pairwise squared-distance matrix; a natural unit for reg_eps.
double median_cost(const EmpiricalMeasure& A, const EmpiricalMeasure& B);

}  // namespace cardlab
