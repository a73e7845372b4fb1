#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cardlab/fokker_planck.hpp"

using namespace cardlab;

namespace {

double npdf(double y, double m, double v) {
    return std::exp(-0.5 * (y - m) * (y - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

BetaFn constant(double b) {
    return [b](double) { return b; };
}

Grid1D default_grid(double f, std::size_t ny = 400, double beta = 1.0, double safety = 0.5,
                    FpScheme scheme = FpScheme::ExponentialFitting) {
    const double lo = f - 8.0, hi = f + 8.0;
    return Grid1D::make(lo, hi, ny, safety * Grid1D::cfl_limit(lo, hi, ny, beta, f), beta, f, scheme);
}

double l1_to_gaussian(const DensityField& q, double m, double v) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.values.size(); ++i) s += std::abs(q.values[i] - npdf(q.center(i), m, v)) * q.dy;
    return s;
}

}  // namespace

TEST_CASE("grid: CFL limit and construction") {
    // dy = 0.04, far = 8: diffusion limit 1.6e-3, advection limit 1e-2.
    CHECK(Grid1D::cfl_limit(-7.5, 8.5, 400, 1.0, 0.5) == doctest::Approx(0.04 * 0.04));
    // Coarse mesh makes advection binding: dy = 0.32 -> 0.1024 vs 0.08.
    CHECK(Grid1D::cfl_limit(-7.5, 8.5, 50, 1.0, 0.5) == doctest::Approx(0.32 / 4.0));
    const double lim = Grid1D::cfl_limit(-7.5, 8.5, 400, 1.0, 0.5);
    CHECK_NOTHROW(Grid1D::make(-7.5, 8.5, 400, lim, 1.0, 0.5));
    CHECK_THROWS_AS(Grid1D::make(-7.5, 8.5, 400, 1.01 * lim, 1.0, 0.5), CflError);
    CHECK_THROWS_AS(Grid1D::make(-7.5, 8.5, 400, 0.0, 1.0, 0.5), CflError);
    CHECK_THROWS_AS(Grid1D::make(1.0, 0.0, 400, 1e-4, 1.0, 0.5), std::invalid_argument);
}

TEST_CASE("density field helpers") {
    const Grid1D g = default_grid(0.5);
    const DensityField q = project_density(g, [](double y) { return npdf(y, 0.5, 0.25); });
    CHECK(q.mass() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(q.mean() == doctest::Approx(0.5).epsilon(1e-9));
    // Midpoint-rule variance of a cell-constant density carries dy^2/12.
    CHECK(std::abs(q.variance() - 0.25) <= 1e-3);
    CHECK(field_quantile(q, 0.5) == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(l1_distance(q, q) == 0.0);
    const DensityField c = coarsen(q, 4);
    CHECK(c.values.size() == 100);
    CHECK(c.mass() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("forward solve: gaussian moments, mass, positivity") {
    const double f = 0.5, v0 = 0.25;
    const Grid1D g = default_grid(f);
    const DensityField q0 = project_density(g, [&](double y) { return npdf(y, f, v0); });
    const FpRun run = fp_forward_solve(g, q0, f, constant(1.0), 1.0, {0.25, 0.5});
    REQUIRE(run.snapshots.size() == 4);
    CHECK(run.snapshots.front().t == 0.0);
    for (const auto& s : run.snapshots) {
        const double var = std::exp(-s.t) * v0 + 1.0 - std::exp(-s.t);
        CHECK(std::abs(s.field.mean() - f) <= 1e-3);
        CHECK(std::abs(s.field.variance() - var) <= 1e-3);
        CHECK(std::abs(s.field.mass() - 1.0) <= 1e-3);
    }
    CHECK(run.max_mass_drift <= 1e-3);
    CHECK(run.min_value >= -1e-12);
    CHECK(run.outflow <= 1e-6);
}

TEST_CASE("forward solve: stationary state stays put") {
    const double f = -0.3;
    const Grid1D g = default_grid(f);
    const DensityField qs = project_density(g, [&](double y) { return npdf(y, f, 1.0); });
    const FpRun run = fp_forward_solve(g, qs, f, constant(1.0), 1.0);
    CHECK(l1_distance(run.final_field(), qs) <= 1e-3);
}

TEST_CASE("forward solve: halving dy and dt at least halves the L1 error") {
    const double f = 0.5, v0 = 0.25;
    auto err = [&](std::size_t ny, double dt) {
        const Grid1D g = Grid1D::make(f - 8, f + 8, ny, dt, 1.0, f);
        const FpRun r = fp_forward_solve(g, project_density(g, [&](double y) { return npdf(y, f, v0); }), f,
                                         constant(1.0), 1.0);
        return l1_to_gaussian(r.final_field(), f, std::exp(-1.0) * v0 + 1 - std::exp(-1.0));
    };
    const double dt = 0.5 * Grid1D::cfl_limit(f - 8, f + 8, 800, 1.0, f);
    const double e1 = err(100, 4 * dt), e2 = err(200, 2 * dt), e3 = err(400, dt);
    MESSAGE("L1 errors " << e1 << " " << e2 << " " << e3);
    CHECK(e1 / e2 >= 2.0);
    CHECK(e2 / e3 >= 2.0);
}

TEST_CASE("forward solve: stiff beta sub-steps, lost mass aborts") {
    const double f = 0.0;
    const Grid1D g = default_grid(f, 400, 1.0, 0.99);
    const DensityField q0 = project_density(g, [&](double y) { return npdf(y, f, 0.25); });
    // beta far above the construction value: the solver shortens its steps.
    const FpRun stiff = fp_forward_solve(g, q0, f, constant(50.0), 0.2);
    CHECK(stiff.min_value >= -1e-12);
    CHECK(stiff.final_field().variance() == doctest::Approx(gaussian_marginal_var(0.25, 50.0, 0.2)).epsilon(1e-2));

    // A domain of +-1 loses mass through the Dirichlet walls.
    const Grid1D narrow = Grid1D::make(-1.0, 1.0, 100, 1e-4, 1.0, 0.0);
    const DensityField qn = project_density(narrow, [&](double y) { return npdf(y, 0.0, 0.25); });
    CHECK_THROWS_AS(fp_forward_solve(narrow, qn, 0.0, constant(1.0), 1.0), MassDriftError);
}

TEST_CASE("reverse solve: exact score closes the round trip, zero score does not") {
    const double f = 0.5, v0 = 0.25;
    const Grid1D g = default_grid(f);
    const DensityField q0 = project_density(g, [&](double y) { return npdf(y, f, v0); });
    const FpRun fwd = fp_forward_solve(g, q0, f, constant(1.0), 1.0);
    const FpRun rev = fp_reverse_solve(g, fwd.final_field(), f, constant(1.0), gaussian_family_score(v0, 1.0), 1.0);
    const double l1 = l1_distance(rev.final_field(), q0);
    CHECK(l1 <= 0.05);
    CHECK(std::abs(rev.final_field().variance() - v0) <= 1e-2);
    CHECK(rev.max_mass_drift <= 1e-3);
    const FpRun zero = fp_reverse_solve(g, fwd.final_field(), f, constant(1.0),
                                        [](double, double, double) { return 0.0; }, 1.0);
    CHECK(l1_distance(zero.final_field(), q0) > l1);
}

TEST_CASE("reverse solve: stationary score keeps N(f, 1)") {
    const double f = 0.5;
    const Grid1D g = default_grid(f);
    const DensityField qs = project_density(g, [&](double y) { return npdf(y, f, 1.0); });
    const FpRun rev = fp_reverse_solve(g, qs, f, constant(1.0), [](double y, double ff, double) { return -(y - ff); }, 1.0);
    CHECK(l1_distance(rev.final_field(), qs) <= 1e-3);
}

TEST_CASE("sde monte carlo: beta = 0 reproduces the binned start") {
    const double f = 0.2;
    const Grid1D bins{f - 8, f + 8, 100, 1e-3, FpScheme::ExponentialFitting};
    std::vector<double> starts;
    Rng rng(5);
    const auto hist = sde_mc_marginal(
        20000, 10,
        [&](Rng& r) {
            starts.push_back(f + 0.5 * r.normal());
            return starts.back();
        },
        f, constant(0.0), {1.0}, bins, rng);
    std::vector<double> expect(bins.ny, 0.0);
    for (double y : starts) expect[static_cast<std::size_t>((y - bins.y_min) / bins.dy())] += 1.0;
    REQUIRE(hist.size() == 1);
    for (std::size_t i = 0; i < bins.ny; ++i)
        CHECK(hist[0].values[i] == doctest::Approx(expect[i] / (20000 * bins.dy())).epsilon(1e-12));
}

TEST_CASE("sde monte carlo: moments at t = 1 and weak error under substep halving") {
    const double f = 0.5, v0 = 0.25, var1 = std::exp(-1.0) * v0 + 1 - std::exp(-1.0);
    const std::size_t n = 100000;
    const Grid1D bins{f - 8, f + 8, 1600, 1e-3, FpScheme::ExponentialFitting};
    auto run = [&](std::size_t sub) {
        Rng rng(17);
        return sde_mc_marginal(n, sub, [&](Rng& r) { return f + 0.5 * r.normal(); }, f, constant(1.0), {1.0}, bins,
                               rng)[0];
    };
    const DensityField h = run(200);
    const double se_m = std::sqrt(var1 / n), se_v = var1 * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(h.mean() - f) <= 3 * se_m);
    CHECK(std::abs(h.variance() - var1) <= 3 * se_v + bins.dy() * bins.dy() / 12);

    // Euler-Maruyama variance recursion v <- (1 - h/2)^2 v + h carries an O(h) bias.
    double prev = INFINITY;
    for (std::size_t sub : {2, 4, 8}) {
        const double e = std::abs(run(sub).variance() - var1);
        CHECK(e < prev);
        prev = e;
    }
}

TEST_CASE("probability-flow ODE matches the FP marginal") {
    const double f = 0.5, v0 = 0.25;
    const Grid1D g = default_grid(f);
    const DensityField q0 = project_density(g, [&](double y) { return npdf(y, f, v0); });
    for (double tp : {0.25, 0.5, 1.0}) {
        const OdeCheck c = ode_marginal_check(g, q0, f, constant(1.0), gaussian_family_score(v0, 1.0), tp);
        CHECK(c.w2 <= 0.02);
        CHECK(c.ode_var == doctest::Approx(gaussian_marginal_var(v0, 1.0, tp)).epsilon(0.01));
    }
    // No transport at t = 0: only the quantile-matching floor is left.
    const OdeCheck c0 = ode_marginal_check(g, q0, f, constant(1.0), gaussian_family_score(v0, 1.0), 0.0);
    CHECK(c0.w2 <= 1e-6);

    // Doubling beta moves both sides together.
    const Grid1D g2 = default_grid(f, 400, 2.0);
    const DensityField q02 = project_density(g2, [&](double y) { return npdf(y, f, v0); });
    const OdeCheck c1 = ode_marginal_check(g, q0, f, constant(1.0), gaussian_family_score(v0, 1.0), 0.5);
    const OdeCheck c2 = ode_marginal_check(g2, q02, f, constant(2.0), gaussian_family_score(v0, 2.0), 0.5);
    CHECK(c2.fp_var == doctest::Approx(gaussian_marginal_var(v0, 2.0, 0.5)).epsilon(2e-3));
    CHECK(c2.w2 <= 0.02);
    CHECK(std::abs(c2.w2 - c1.w2) <= 0.02);
}

TEST_CASE("consistency report: default passes, coarse grid fails") {
    FpCheckConfig cfg;
    const FpCheckReport rep = run_fp_consistency(cfg);
    CHECK(rep.error.empty());
    for (const auto& it : rep.items) {
        INFO(it.name << " = " << it.value << " limit " << it.limit);
        CHECK(it.pass);
    }
    CHECK(rep.all_pass);

    FpCheckConfig coarse;
    coarse.ny = 50;
    coarse.n_paths = 20000;
    const FpCheckReport bad = run_fp_consistency(coarse);
    CHECK_FALSE(bad.all_pass);

    FpCheckConfig fast;
    fast.dt = 1.0;  // far beyond the step limit
    const FpCheckReport cfl = run_fp_consistency(fast);
    CHECK_FALSE(cfl.all_pass);
    CHECK(cfl.error.find("CFL") != std::string::npos);
}
