#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cardlab {

struct LightTail {
    double c1 = 0.0;  // q0(y0 | f) <= c1 exp(-c2 |y0|^2 / 2)
    double c2 = 0.0;
};

// Analytic conditional density q0(y0 | f) with y0, f in R^d.
class ConditionalFamily {
public:
    virtual ~ConditionalFamily() = default;
    virtual int dim() const = 0;
    virtual std::string name() const = 0;
    virtual double density(std::span<const double> y0, std::span<const double> f) const = 0;
    // d^n/dy0^n d^m/df^m q0, multi-indices of length dim().
    virtual double derivative(std::span<const int> n, std::span<const int> m,
                              std::span<const double> y0, std::span<const double> f) const = 0;
    // Mass of {|y0|_inf <= R}.
    virtual double box_mass(std::span<const double> f, double R) const = 0;
    virtual LightTail light_tail(std::span<const double> f) const = 0;
    // max over |alpha| <= order of sup |d^alpha q0|.
    virtual double holder_constant(int order) const = 0;
    // Per-coordinate interval holding all but a negligible tail of q0(. | f) (d = 1 use).
    virtual std::pair<double, double> support_window(double f) const = 0;
};

// Product of N(f_i, s0^2).
class GaussianFamily final : public ConditionalFamily {
public:
    explicit GaussianFamily(double s0 = 1.0, int d = 1);
    int dim() const override { return d_; }
    std::string name() const override { return "gaussian"; }
    double density(std::span<const double> y0, std::span<const double> f) const override;
    double derivative(std::span<const int> n, std::span<const int> m, std::span<const double> y0,
                      std::span<const double> f) const override;
    double box_mass(std::span<const double> f, double R) const override;
    LightTail light_tail(std::span<const double> f) const override;
    double holder_constant(int order) const override;
    std::pair<double, double> support_window(double f) const override;

    double s0() const { return s0_; }
    // Closed form: q(y_t | f) = prod N(y_t,i; f_i, gamma^2 s0^2 + sigma^2).
    double marginal_density(std::span<const double> y, std::span<const double> f, double gamma,
                            double sigma) const;
    double marginal_score(double y, double f, double gamma, double sigma) const;

private:
    double s0_;
    int d_;
};

// One-dimensional sum_k w_k N(f + a_k, s_k^2).
class GaussianMixtureFamily final : public ConditionalFamily {
public:
    GaussianMixtureFamily(std::vector<double> weights, std::vector<double> offsets,
                          std::vector<double> scales);
    int dim() const override { return 1; }
    std::string name() const override { return "gaussian_mixture"; }
    double density(std::span<const double> y0, std::span<const double> f) const override;
    double derivative(std::span<const int> n, std::span<const int> m, std::span<const double> y0,
                      std::span<const double> f) const override;
    double box_mass(std::span<const double> f, double R) const override;
    LightTail light_tail(std::span<const double> f) const override;
    double holder_constant(int order) const override;
    std::pair<double, double> support_window(double f) const override;

private:
    std::vector<double> w_, a_, s_;
};

// Probabilists' Hermite polynomial He_k(u).
double hermite_he(int k, double u);

// Partial sum of e^{-u} with p terms, Neumaier-compensated.
double exp_taylor(int order_p, double u);
// The order p = ceil(3 ln(1/eps) / e) usually quoted with the remainder bound eps^{3/e}.
int exp_taylor_order_nominal(double eps);
// Smallest p with u_max^p / p! <= eps^{3/e}, which makes the bound hold on [0, u_max].
int exp_taylor_order_for(double eps, double u_max);

// Trapezoid bump: 1 on |a| < 1, 2 - |a| on [1, 2], 0 beyond.
double trapezoid_psi(double a);

// All multi-indices of length D with total degree <= s, in graded order.
std::vector<std::vector<int>> multi_indices(int D, int s);

// Derivative source for the scaled density tau on [0,1]^{2d}: arguments are
// (alpha over (y, f), point over (y, f)).
using TauDerivative = std::function<double(std::span<const int>, std::span<const double>)>;

// Piecewise Taylor polynomial q1 = sum_{v,w} Psi_{v,w} tau1_{v,w} on [0,1]^{2d}.
// y-cells are ((v-1)/N, v/N] for v = 1..N (expanded at v/N); f-nodes are w/N
// for w = 0..N with the trapezoid weights psi(3N(f - w/N)).
class LocalPolynomial {
public:
    LocalPolynomial(const TauDerivative& tau, int d, int N, int s);

    int d() const { return d_; }
    int N() const { return N_; }
    int s() const { return s_; }
    const std::vector<std::vector<int>>& alphas() const { return alphas_; }

    // Taylor coefficients (d^alpha tau / alpha!) at the node (v, w).
    std::span<const double> coeffs(std::span<const int> v, std::span<const int> w) const;

    double evaluate(std::span<const double> y, std::span<const double> f) const;
    // Sum of Psi_{v,w}(y, f) over all nodes.
    double partition_sum(std::span<const double> y, std::span<const double> f) const;

    // Active f-nodes per coordinate and their weights.
    static void active_f_nodes(double f, int N, std::vector<int>& w, std::vector<double>& psi);
    static int y_cell(double y, int N);

private:
    int d_, N_, s_;
    std::vector<std::vector<int>> alphas_;
    std::vector<double> table_;  // node-major, |alphas| entries per node
    std::size_t node_index(std::span<const int> v, std::span<const int> w) const;
};

struct TruncationDomains {
    double eps = 1e-6;
    double L = 0.0;       // ln(1/eps)
    double c = 0.0;       // sub-Gaussian constant
    double R = 0.0;       // data radius c sqrt(L), at least slightly above 1
    double R_f = 0.0;
    double R_star = 0.0;  // max(2R, 2R_f)
    double eps_low = 0.0;
    double gamma = 1.0, sigma = 0.0;
    int taylor_order = 0;  // p used by the approximator
    double B = 0.0;       // Holder constant of the family
    double beta_holder = 2.0;

    double d01_half_width() const { return c * std::sqrt(L); }
    double d02_center(double y_t, double f) const { return (y_t - (1.0 - gamma) * f) / gamma; }
    double d02_half_width() const { return sigma * c * std::sqrt(L) / gamma; }
};

struct DomainOptions {
    double eps = 1e-6;
    double beta_holder = 2.0;
    double R_f_min = 1.5;
    int s = 2;  // Taylor degree of the local polynomial
};

// Chooses c from the family tail (mass outside D01 and kernel tail outside
// D02 both <= eps), then R, R_f, R*, p and eps_low for this (t, N).
TruncationDomains make_domains(const ConditionalFamily& fam, std::span<const double> f,
                               double beta_bar, double t, int N, const DomainOptions& opt);

struct ScoreApproxParts {
    double h1 = 0.0;
    std::vector<double> h4;        // approximates sigma * grad q
    double h1_clip = 0.0;
    double cap = 0.0;              // magnitude cap from the log-density gradient bound
    std::vector<double> score;
};

// c3 = mass(|y0| <= R) / (2 pi)^{d/2}
double lemma1_c3(const ConditionalFamily& fam, std::span<const double> f, double R);
double lemma1_lower(const ConditionalFamily& fam, const TruncationDomains& dom,
                    std::span<const double> y, std::span<const double> f);
double lemma1_upper(const ConditionalFamily& fam, const TruncationDomains& dom,
                    std::span<const double> y, std::span<const double> f);
double lemma2_grad_bound(const ConditionalFamily& fam, const TruncationDomains& dom,
                         std::span<const double> y, std::span<const double> f);
double lemma3_cap(const ConditionalFamily& fam, const TruncationDomains& dom,
                  std::span<const double> y, std::span<const double> f);

ScoreApproxParts approx_score(const LocalPolynomial& poly, const ConditionalFamily& fam,
                              const TruncationDomains& dom, std::span<const double> y_t,
                              std::span<const double> f);

// Builds the local polynomial of the scaled density for a family.
LocalPolynomial build_local_polynomial(const ConditionalFamily& fam, double R_star, int N, int s);
// Sup-norm error budget B R*^s (2d)^s / (N^beta s!) for the local polynomial.
double local_polynomial_budget(double B, double R_star, int d, int N, int s, double beta);

struct OracleValue {
    double q = 0.0;
    double dq = 0.0;
    bool converged = true;
};

// Adaptive Gauss-Legendre for q(y_t | f) and its y_t-derivative, d = 1.
class QuadratureOracle {
public:
    explicit QuadratureOracle(const ConditionalFamily& fam, double rel_tol = 1e-11,
                              int max_depth = 40);
    OracleValue marginal(double y_t, double f, double gamma, double sigma) const;
    // Same integral with y0 restricted to [lo, hi] (for truncation budgets).
    OracleValue marginal_on(double y_t, double f, double gamma, double sigma, double lo,
                            double hi) const;

private:
    const ConditionalFamily& fam_;
    double rel_tol_;
    int max_depth_;
};

struct BoundsCheckResult {
    double worst_lower_slack = 0.0;  // min (q - lower)/q
    double worst_upper_slack = 0.0;  // min (upper - q)/upper
    double worst_score_slack = 0.0;  // min (cap - |score|)/cap
    double worst_grad_slack = 0.0;   // density-gradient bound, informational
    std::size_t points = 0;
    bool pass = false;               // density bounds and the score cap
    bool grad_pass = false;          // density-gradient bound, reported separately
};

BoundsCheckResult density_bounds_check(const ConditionalFamily& fam, const QuadratureOracle& oracle,
                                       const TruncationDomains& dom, double f,
                                       const std::vector<double>& grid);

struct Theorem2Row {
    int N = 0;
    double t = 0.0;
    double error_L2 = 0.0;
    double eps_low = 0.0;
    int taylor_order = 0;
};

struct Theorem2Options {
    double beta_bar = 1.0;
    double f = 0.0;
    DomainOptions domain;
    int panels = 400;  // composite Gauss-Legendre panels over D1
};

struct Theorem2Table {
    std::vector<Theorem2Row> rows;
    double slope = 0.0;  // least-squares slope of log error vs log N
};

Theorem2Table theorem2_error(const ConditionalFamily& fam, const std::vector<int>& N_list, double t,
                             const Theorem2Options& opt);

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace cardlab
