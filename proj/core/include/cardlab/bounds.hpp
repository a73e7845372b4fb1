#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "cardlab/datasets.hpp"
#include "cardlab/diffusion.hpp"
#include "cardlab/rng.hpp"

namespace cardlab {

using ScalarFn = std::function<double(double)>;

// Values attached to the step nodes t/T (t = 1..T), linear in between and
// held at the first value on [0, 1/T]. Same convention as beta_cont.
struct StepFunction {
    std::vector<double> values;  // values[t - 1] for step t
    double operator()(double tau) const;
};

struct LipschitzEstimates {
    ScalarFn beta;       // continuous rate beta(tau) on [0, 1]
    ScalarFn l2;         // empty means l2 == 0
    double l2_max = 50.0;

    double l1(double tau) const { return 0.5 * beta(tau); }
    double l2_at(double tau) const;
};

// Trapezoid on n_grid points over [0, t].
double m_factor(const LipschitzEstimates& est, double t, std::size_t n_grid = 200);
// M at the n_grid points of a uniform grid on [0, 1], built cumulatively.
std::vector<double> m_curve(const LipschitzEstimates& est, std::size_t n_grid = 200);

// Score of a trained or oracle model, in the discrete step index.
using Score2 = std::function<Vec2(const Vec2& y, const Vec2& f, int t)>;
Score2 score_fn_of(const CardModel& m);

// Per-class f values for a model; also used to pair samples with f.
std::vector<Vec2> class_means(const CardModel& m);

double estimate_l2(const Score2& score, const NoiseSchedule& s,
                   const std::vector<LabeledSample>& samples, const std::vector<Vec2>& fk, int t,
                   std::size_t n_pairs, Rng& rng, double l2_max = 50.0);

struct HEstimate {
    double surrogate = 0.0;       // against the conditional score -eps/sigma_t
    double surrogate_se = 0.0;    // Monte-Carlo standard error
    std::optional<double> marginal;  // against the exact marginal score (Gaussian data only)
};

// gaussian_var: isotropic variance of zero-mean Gaussian data, enabling the
// exact marginal-score comparison.
HEstimate estimate_H(const Score2& score, const NoiseSchedule& s,
                     const std::vector<LabeledSample>& samples, const std::vector<Vec2>& fk, int t,
                     std::size_t n_mc, Rng& rng, std::optional<double> gaussian_var = {});

struct BoundInputs {
    LipschitzEstimates est;
    ScalarFn H;          // H(tau)
    ScalarFn lambda;     // empty means lambda = beta
    double W2_T = 0.0;
    std::size_t n_grid = 200;

    double lambda_at(double tau) const { return lambda ? lambda(tau) : est.beta(tau); }
};

double loss_L1_hat(const BoundInputs& in);
double theorem1_rhs(const BoundInputs& in);
// Integral of beta^2 M^2 / lambda over [0, 1]; equals the integral of beta M^2 when lambda = beta.
double corollary1_integral(const BoundInputs& in);
double corollary1_rhs(const BoundInputs& in, double L1);

struct BoundReport {
    std::size_t epoch = 0;
    double L1_hat = 0.0;
    std::vector<double> H_hat;  // per step t = 1..T
    std::vector<double> l2_hat;
    double W2_emp = 0.0;
    double W2_T = 0.0;
    double M_T = 0.0;
    double rhs_thm1 = 0.0;
    double rhs_cor1 = 0.0;
    double intercept = 0.0;  // (1/2) log(2 * integral of beta M^2)
    std::optional<double> L1_marginal;  // Gaussian dataset calibration
};

struct BoundConfig {
    std::size_t n_w2 = 500;
    std::size_t n_mc = 2000;
    std::size_t n_pairs = 2048;
    double l2_max = 50.0;
    std::size_t n_grid = 200;
    std::uint64_t seed = 0;
    std::optional<double> gaussian_var;
};

// Full per-checkpoint evaluation. The same seed gives every checkpoint the
// same random numbers, so differences between checkpoints are not noise.
BoundReport evaluate_checkpoint(const CardModel& m, const std::vector<LabeledSample>& samples,
                                std::size_t epoch, const BoundConfig& cfg);

struct LogBoundPoint {
    bool valid = false;
    double log_L1 = 0.0;
    double log_W2 = 0.0;
    double log_rhs = 0.0;
    double intercept = 0.0;
};

std::vector<LogBoundPoint> log_bound_points(const std::vector<BoundReport>& reports);

struct ProductPoint {
    int step = 0;
    double tau = 0.0;
    double M = 0.0;
    double W2 = 0.0;
    double value = 0.0;  // M * W2
};

// q_t from the closed-form forward marginal of the data, p_t from the reverse
// chain started at N(f, I) and stopped at t. Steps are evaluated in `steps`.
std::vector<ProductPoint> product_curve(const NoiseSchedule& s, const EpsFn& eps,
                                        const std::vector<LabeledSample>& data,
                                        const std::vector<Vec2>& fk,
                                        const LipschitzEstimates& est,
                                        const std::vector<int>& steps, Rng& rng,
                                        std::size_t n_grid = 200);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cardlab
