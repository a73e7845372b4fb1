#include "cardlab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cardlab {

namespace {

void check_pair(const EmpiricalMeasure& A, const EmpiricalMeasure& B, const char* who) {
    if (A.d != B.d) throw std::invalid_argument(std::string(who) + ": dimension mismatch");
    if (A.n() != B.n())
        throw std::invalid_argument(std::string(who) + ": measures must have equal size (" +
                                    std::to_string(A.n()) + " vs " + std::to_string(B.n()) + ")");
    if (A.n() == 0) throw std::invalid_argument(std::string(who) + ": empty measure");
}

std::vector<double> cost_matrix(const EmpiricalMeasure& A, const EmpiricalMeasure& B) {
    const std::size_t n = A.n();
    std::vector<double> C(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] = sq_dist(A.row(i), B.row(j), A.d);
    return C;
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(std::size_t dim, std::vector<double> pts)
    : d(dim), points(std::move(pts)) {
    if (d == 0 || points.size() % d != 0)
        throw std::invalid_argument("EmpiricalMeasure: point array not a multiple of d");
    for (double v : points)
        if (!std::isfinite(v)) throw std::invalid_argument("EmpiricalMeasure: non-finite entry");
}

EmpiricalMeasure EmpiricalMeasure::from(const std::vector<Vec2>& pts) {
    std::vector<double> flat;
    flat.reserve(pts.size() * 2);
    for (const auto& p : pts) {
        flat.push_back(p[0]);
        flat.push_back(p[1]);
    }
    return EmpiricalMeasure(2, std::move(flat));
}

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double t = a[k] - b[k];
        s += t * t;
    }
    return s;
}

double assignment_cost(const EmpiricalMeasure& A, const EmpiricalMeasure& B,
                       const std::vector<std::size_t>& perm) {
    check_pair(A, B, "assignment_cost");
    double s = 0.0;
    for (std::size_t i = 0; i < A.n(); ++i) s += sq_dist(A.row(i), B.row(perm.at(i)), A.d);
    return s / static_cast<double>(A.n());
}

// Shortest augmenting path with row/column potentials (Kuhn-Munkres in the
// Jonker-Volgenant style). Rows are added one at a time; each addition runs a
// Dijkstra-like search over reduced costs, so the whole thing is O(n^3).
W2Result w2_exact(const EmpiricalMeasure& A, const EmpiricalMeasure& B) {
    check_pair(A, B, "w2_exact");
    const std::size_t n = A.n();
    const auto C = cost_matrix(A, B);
    constexpr double INF = std::numeric_limits<double>::infinity();

    // 1-based arrays; column 0 is the virtual source.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), INF);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = INF;
            std::size_t j1 = 0;
            const double* crow = C.data() + (i0 - 1) * n;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = crow[j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    W2Result r;
    r.coupling.permutation.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) r.coupling.permutation[p[j] - 1] = j - 1;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += C[i * n + r.coupling.permutation[i]];
    r.coupling.transport_cost = total / static_cast<double>(n);
    r.distance = std::sqrt(r.coupling.transport_cost);
    return r;
}

double brute_force_w2(const EmpiricalMeasure& A, const EmpiricalMeasure& B) {
    check_pair(A, B, "brute_force_w2");
    const std::size_t n = A.n();
    if (n > 8) throw std::invalid_argument("brute_force_w2: n > 8 is not enumerable here");
    const auto C = cost_matrix(A, B);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += C[i * n + perm[i]];
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / static_cast<double>(n));
}

double median_cost(const EmpiricalMeasure& A, const EmpiricalMeasure& B) {
    check_pair(A, B, "median_cost");
    auto C = cost_matrix(A, B);
    auto mid = C.begin() + static_cast<std::ptrdiff_t>(C.size() / 2);
    std::nth_element(C.begin(), mid, C.end());
    return *mid;
}

// Log-domain Sinkhorn so that small reg_eps does not underflow the kernel.
SinkhornResult w2_sinkhorn(const EmpiricalMeasure& A, const EmpiricalMeasure& B, double reg_eps,
                           std::size_t max_iters, double tol) {
    check_pair(A, B, "w2_sinkhorn");
    if (!(reg_eps > 0.0)) throw std::invalid_argument("w2_sinkhorn: reg_eps must be > 0");
    const std::size_t n = A.n();
    const auto C = cost_matrix(A, B);
    const double log_mu = -std::log(static_cast<double>(n));
    std::vector<double> f(n, 0.0), g(n, 0.0), buf(n);

    double eps = reg_eps;
    auto lse_rows = [&](std::vector<double>& out_f) {
        for (std::size_t i = 0; i < n; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                buf[j] = (g[j] - C[i * n + j]) / eps;
                m = std::max(m, buf[j]);
            }
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += std::exp(buf[j] - m);
            out_f[i] = -eps * (log_mu + m + std::log(s));
        }
    };
    auto lse_cols = [&](std::vector<double>& out_g) {
        for (std::size_t j = 0; j < n; ++j) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) {
                buf[i] = (f[i] - C[i * n + j]) / eps;
                m = std::max(m, buf[i]);
            }
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += std::exp(buf[i] - m);
            out_g[j] = -eps * (log_mu + m + std::log(s));
        }
    };
    // P_ij = mu_i nu_j exp((f_i + g_j - C_ij)/eps); rows and columns should sum to 1/n.
    auto plan_at = [&](std::size_t i, std::size_t j) {
        return std::exp((f[i] + g[j] - C[i * n + j]) / eps + 2.0 * log_mu);
    };
    // After the column update columns are exact; measure the row error.
    auto row_violation = [&] {
        double viol = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += plan_at(i, j);
            viol = std::max(viol, std::abs(s - 1.0 / static_cast<double>(n)));
        }
        return viol;
    };

    // Epsilon scaling: halve the regularisation from the largest cost down to
    // reg_eps, warm-starting the potentials. Small reg_eps converges orders of
    // magnitude faster this way than from cold potentials.
    std::vector<double> schedule;
    for (double e = *std::max_element(C.begin(), C.end()); e > reg_eps; e *= 0.5) schedule.push_back(e);
    schedule.push_back(reg_eps);

    SinkhornResult r;
    std::size_t it = 0;
    for (std::size_t stage = 0; stage < schedule.size() && it < max_iters; ++stage) {
        eps = schedule[stage];
        const bool last = stage + 1 == schedule.size();
        const double stage_tol = last ? tol : std::max(tol, 1e-3 / static_cast<double>(n));
        for (std::size_t k = 0; it < max_iters; ++k) {
            lse_rows(f);
            lse_cols(g);
            r.iterations = ++it;
            if ((k & 7) == 7 || it == max_iters) {
                r.marginal_violation = row_violation();
                if (r.marginal_violation < stage_tol) {
                    r.converged = last;
                    break;
                }
            }
        }
    }
    r.coupling.plan.resize(n * n);
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double pij = plan_at(i, j);
            r.coupling.plan[i * n + j] = pij;
            cost += pij * C[i * n + j];
        }
    r.coupling.transport_cost = cost;
    r.distance = std::sqrt(cost);
    return r;
}

}  // namespace cardlab
