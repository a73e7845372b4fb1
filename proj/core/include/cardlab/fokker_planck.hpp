#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardlab/diffusion.hpp"
#include "cardlab/rng.hpp"

namespace cardlab {

// UpwindDiffusion: first-order upwind advection plus centred diffusion.
// ExponentialFitting: Scharfetter-Gummel flux, which blends the two by the
// local Peclet number. It keeps positivity under the same explicit step
// limit, is second order on smooth data and preserves the Gaussian
// stationary state exactly.
enum class FpScheme { UpwindDiffusion, ExponentialFitting };

struct CflError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MassDriftError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Grid1D {
    double y_min = -8.0;
    double y_max = 8.0;
    std::size_t ny = 400;
    double dt = 0.0;
    FpScheme scheme = FpScheme::ExponentialFitting;

    double dy() const { return (y_max - y_min) / static_cast<double>(ny); }
    double center(std::size_t i) const { return y_min + (static_cast<double>(i) + 0.5) * dy(); }

    // Largest dt allowed by dt <= min(dy^2/beta_max, dy/(beta_max max|y - f|/2)).
    static double cfl_limit(double y_min, double y_max, std::size_t ny, double beta_max, double f);
    // Throws CflError when dt exceeds cfl_limit.
    static Grid1D make(double y_min, double y_max, std::size_t ny, double dt, double beta_max,
                       double f, FpScheme scheme = FpScheme::ExponentialFitting);
};

struct DensityField {
    double y_min = 0.0;
    double dy = 1.0;
    std::vector<double> values;

    double center(std::size_t i) const { return y_min + (static_cast<double>(i) + 0.5) * dy; }
    double mass() const;
    double mean() const;
    double variance() const;
};

using ScalarPdf = std::function<double(double)>;
using ScalarScore = std::function<double(double y, double f, double t)>;

DensityField project_density(const Grid1D& g, const ScalarPdf& pdf, bool normalize = true);
double l1_distance(const DensityField& a, const DensityField& b);
// Sums groups of `factor` adjacent cells (for comparing against coarser histograms).
DensityField coarsen(const DensityField& a, std::size_t factor);

struct FpSnapshot {
    double t = 0.0;
    DensityField field;
};

struct FpRun {
    std::vector<FpSnapshot> snapshots;  // always contains t = 0 and t_end
    double outflow = 0.0;               // mass that left through the boundaries
    double clipped = 0.0;               // negative mass removed by the positivity clip
    double max_mass_drift = 0.0;        // max |mass + outflow - 1| over all steps
    double min_value = 0.0;             // most negative value seen before clipping
    std::size_t steps = 0;

    const DensityField& final_field() const { return snapshots.back().field; }
    const DensityField& at(double t) const;
};

// dq/dt = d/dy[(beta/2)(y - f) q] + (beta/2) d2q/dy2, Dirichlet-zero boundaries.
FpRun fp_forward_solve(const Grid1D& g, const DensityField& q0, double f, const BetaFn& beta,
                       double t_end, const std::vector<double>& snapshot_times = {});

// Reverse-time equation in t' = t_end - t: transport with velocity
// (beta/2)(y - f) + beta s(y, t) and diffusion beta/2, with beta and s
// evaluated at the original time t = t_end - t'.
FpRun fp_reverse_solve(const Grid1D& g, const DensityField& pT, double f, const BetaFn& beta,
                       const ScalarScore& score, double t_end,
                       const std::vector<double>& snapshot_times = {});

// Euler-Maruyama paths started from q0 samples and binned onto the grid at
// each requested time (histogram density per cell).
std::vector<DensityField> sde_mc_marginal(std::size_t n_paths, std::size_t substeps,
                                          const std::function<double(Rng&)>& sample_q0, double f,
                                          const BetaFn& beta, const std::vector<double>& times,
                                          const Grid1D& bins, Rng& rng);

// Quantile function of a cell-constant density, linear within cells.
double field_quantile(const DensityField& q, double u);
// W2 between sorted equal-weight particles and a field, by quantile matching
// at the particles' mid-quantiles.
double w2_particles_vs_field(const std::vector<double>& sorted_particles, const DensityField& q);

struct OdeCheck {
    double t_probe = 0.0;
    double w2 = 0.0;
    double fp_mean = 0.0, fp_var = 0.0;
    double ode_mean = 0.0, ode_var = 0.0;
};

OdeCheck ode_marginal_check(const Grid1D& g, const DensityField& q0, double f, const BetaFn& beta,
                            const ScalarScore& analytic_score, double t_probe,
                            std::size_t n_particles = 4000, std::size_t rk4_steps = 400);

// Closed-form pieces for the Gaussian family q0 = N(f, v0) under constant beta.
double gaussian_marginal_var(double v0, double beta_bar, double t);
ScalarScore gaussian_family_score(double v0, double beta_bar);

struct FpCheckConfig {
    double f = 0.5;
    double v0 = 0.25;
    double beta_bar = 1.0;
    double half_width = 8.0;
    std::size_t ny = 400;
    double dt = 0.0;          // 0 picks a fraction of the CFL limit
    double dt_safety = 0.5;
    FpScheme scheme = FpScheme::ExponentialFitting;
    double t_end = 1.0;
    std::vector<double> probes{0.25, 0.5, 1.0};
    std::size_t n_paths = 100000;
    std::size_t sde_substeps = 200;
    std::size_t mc_bin_factor = 4;
    std::size_t ode_particles = 4000;
    std::uint64_t seed = 11;

    double tol_moments = 1e-3;
    double tol_stationary = 1e-3;
    double tol_mass = 1e-3;
    double tol_mc_l1 = 0.05;
    double tol_ode_w2 = 0.02;
    double tol_roundtrip_l1 = 0.05;
    double min_refinement_ratio = 2.0;
};

struct CheckItem {
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    bool upper = true;  // pass when value <= limit (else value >= limit)
    bool pass = false;
};

struct FpCheckReport {
    std::vector<CheckItem> items;
    bool all_pass = false;
    std::string error;  // construction failures such as CFL violations
};

FpCheckReport run_fp_consistency(const FpCheckConfig& cfg);

}  // namespace cardlab
