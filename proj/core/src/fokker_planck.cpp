#include "cardlab/fokker_planck.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace cardlab {

namespace {

// B(x) = x / (e^x - 1), with B(0) = 1.
double bernoulli_fn(double x) {
    if (std::abs(x) < 1e-6) return 1.0 - 0.5 * x + x * x / 12.0;
    return x / std::expm1(x);
}

// Face velocity and diffusion at time t (in the solver's own clock).
using VelocityFn = std::function<double(double y, double t)>;
using DiffusionFn = std::function<double(double t)>;

void face_fluxes(const Grid1D& g, const std::vector<double>& q, const VelocityFn& vel, double D,
                 double t, std::vector<double>& F, double& max_rate) {
    const std::size_t n = g.ny;
    const double dy = g.dy();
    F.assign(n + 1, 0.0);
    std::vector<double> out_right(n, 0.0), out_left(n, 0.0);
    for (std::size_t k = 0; k <= n; ++k) {
        const double yf = g.y_min + static_cast<double>(k) * dy;
        const double v = vel(yf, t);
        const double ql = k == 0 ? 0.0 : q[k - 1];
        const double qr = k == n ? 0.0 : q[k];
        double cl = 0.0, cr = 0.0;  // F = cl * ql - cr * qr, both >= 0
        if (g.scheme == FpScheme::ExponentialFitting && D > 0.0) {
            const double pe = v * dy / D;
            cl = D / dy * bernoulli_fn(-pe);
            cr = D / dy * bernoulli_fn(pe);
        } else {
            cl = std::max(v, 0.0) + D / dy;
            cr = -std::min(v, 0.0) + D / dy;
        }
        F[k] = cl * ql - cr * qr;
        if (k > 0) out_right[k - 1] = cl / dy;
        if (k < n) out_left[k] = cr / dy;
    }
    max_rate = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_rate = std::max(max_rate, out_right[i] + out_left[i]);
}

FpRun evolve(const Grid1D& g, const DensityField& init, const VelocityFn& vel,
             const DiffusionFn& diff, double t_end, std::vector<double> snaps) {
    if (init.values.size() != g.ny) throw std::invalid_argument("fp solve: field/grid size mismatch");
    if (!(g.dt > 0.0)) throw std::invalid_argument("fp solve: grid dt must be > 0");
    if (t_end < 0.0) throw std::invalid_argument("fp solve: t_end must be >= 0");
    snaps.push_back(0.0);
    snaps.push_back(t_end);
    std::sort(snaps.begin(), snaps.end());
    snaps.erase(std::unique(snaps.begin(), snaps.end()), snaps.end());
    snaps.erase(std::remove_if(snaps.begin(), snaps.end(),
                               [&](double s) { return s < 0.0 || s > t_end; }),
                snaps.end());

    FpRun run;
    std::vector<double> q = init.values;
    const double dy = g.dy();
    const double mass0 = init.mass();
    std::vector<double> F;
    double t = 0.0;
    std::size_t next = 0;
    auto record = [&] {
        run.snapshots.push_back({t, DensityField{g.y_min, dy, q}});
        ++next;
    };
    if (snaps[next] == 0.0) record();
    while (next < snaps.size()) {
        const double target = snaps[next];
        while (t < target - 1e-14) {
            const double D = diff(t);
            double max_rate = 0.0;
            face_fluxes(g, q, vel, D, t, F, max_rate);
            double h = std::min(g.dt, target - t);
            // Explicit stability: keep every diagonal coefficient nonnegative.
            if (max_rate > 0.0) h = std::min(h, 0.95 / max_rate);
            for (std::size_t i = 0; i < g.ny; ++i) q[i] -= h / dy * (F[i + 1] - F[i]);
            run.outflow += h * (F[g.ny] - F[0]);
            for (double& v : q) {
                if (v < 0.0) {
                    run.min_value = std::min(run.min_value, v);
                    run.clipped += -v * dy;
                    v = 0.0;
                }
            }
            t += h;
            ++run.steps;
            double m = 0.0;
            for (double v : q) m += v * dy;
            const double drift = std::abs(m + run.outflow - run.clipped - mass0);
            run.max_mass_drift = std::max(run.max_mass_drift, std::max(drift, std::abs(m - mass0)));
            if (run.max_mass_drift > 1e-3)
                throw MassDriftError("fp solve: mass drift " + std::to_string(run.max_mass_drift) +
                                     " exceeds 1e-3 at t=" + std::to_string(t));
        }
        t = target;
        record();
    }
    return run;
}

}  // namespace

double Grid1D::cfl_limit(double y_min, double y_max, std::size_t ny, double beta_max, double f) {
    const double dy = (y_max - y_min) / static_cast<double>(ny);
    const double far = std::max(std::abs(y_min - f), std::abs(y_max - f));
    const double diff_lim = dy * dy / beta_max;
    const double adv_lim = far > 0.0 ? dy / (beta_max * far / 2.0) : diff_lim;
    return std::min(diff_lim, adv_lim);
}

Grid1D Grid1D::make(double y_min, double y_max, std::size_t ny, double dt, double beta_max,
                    double f, FpScheme scheme) {
    if (!(y_max > y_min) || ny < 3) throw std::invalid_argument("Grid1D: bad domain or cell count");
    if (!(beta_max > 0.0)) throw std::invalid_argument("Grid1D: beta_max must be > 0");
    const double lim = cfl_limit(y_min, y_max, ny, beta_max, f);
    if (!(dt > 0.0) || dt > lim)
        throw CflError("Grid1D: dt=" + std::to_string(dt) + " violates the CFL limit " +
                       std::to_string(lim) + " (ny=" + std::to_string(ny) + ")");
    return Grid1D{y_min, y_max, ny, dt, scheme};
}

double DensityField::mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * dy;
}

double DensityField::mean() const {
    double s = 0.0, m = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        s += values[i];
        m += values[i] * center(i);
    }
    return m / s;
}

double DensityField::variance() const {
    const double mu = mean();
    double s = 0.0, v = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = center(i) - mu;
        s += values[i];
        v += values[i] * d * d;
    }
    return v / s;
}

DensityField project_density(const Grid1D& g, const ScalarPdf& pdf, bool normalize) {
    DensityField q{g.y_min, g.dy(), std::vector<double>(g.ny)};
    for (std::size_t i = 0; i < g.ny; ++i) q.values[i] = pdf(g.center(i));
    if (normalize) {
        const double m = q.mass();
        for (double& v : q.values) v /= m;
    }
    return q;
}

double l1_distance(const DensityField& a, const DensityField& b) {
    if (a.values.size() != b.values.size()) throw std::invalid_argument("l1_distance: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
    return s * a.dy;
}

DensityField coarsen(const DensityField& a, std::size_t factor) {
    if (factor == 0 || a.values.size() % factor != 0)
        throw std::invalid_argument("coarsen: factor must divide the cell count");
    DensityField c{a.y_min, a.dy * static_cast<double>(factor),
                   std::vector<double>(a.values.size() / factor, 0.0)};
    for (std::size_t i = 0; i < a.values.size(); ++i) c.values[i / factor] += a.values[i];
    for (double& v : c.values) v /= static_cast<double>(factor);
    return c;
}

const DensityField& FpRun::at(double t) const {
    for (const auto& s : snapshots)
        if (std::abs(s.t - t) < 1e-12) return s.field;
    throw std::out_of_range("FpRun: no snapshot at t=" + std::to_string(t));
}

FpRun fp_forward_solve(const Grid1D& g, const DensityField& q0, double f, const BetaFn& beta,
                       double t_end, const std::vector<double>& snapshot_times) {
    VelocityFn vel = [&](double y, double t) { return -0.5 * beta(t) * (y - f); };
    DiffusionFn diff = [&](double t) { return 0.5 * beta(t); };
    return evolve(g, q0, vel, diff, t_end, snapshot_times);
}

FpRun fp_reverse_solve(const Grid1D& g, const DensityField& pT, double f, const BetaFn& beta,
                       const ScalarScore& score, double t_end,
                       const std::vector<double>& snapshot_times) {
    VelocityFn vel = [&](double y, double tp) {
        const double t = t_end - tp;
        const double b = beta(t);
        return 0.5 * b * (y - f) + b * score(y, f, t);
    };
    DiffusionFn diff = [&](double tp) { return 0.5 * beta(t_end - tp); };
    return evolve(g, pT, vel, diff, t_end, snapshot_times);
}

std::vector<DensityField> sde_mc_marginal(std::size_t n_paths, std::size_t substeps,
                                          const std::function<double(Rng&)>& sample_q0, double f,
                                          const BetaFn& beta, const std::vector<double>& times,
                                          const Grid1D& bins, Rng& rng) {
    if (substeps == 0) throw std::invalid_argument("sde_mc_marginal: substeps must be >= 1");
    double t_max = 0.0;
    for (double t : times) t_max = std::max(t_max, t);
    const double dt = t_max > 0.0 ? t_max / static_cast<double>(substeps) : 1.0;
    std::vector<std::size_t> at_step(times.size());
    for (std::size_t k = 0; k < times.size(); ++k)
        at_step[k] = static_cast<std::size_t>(std::llround(times[k] / dt));

    const double dy = bins.dy();
    std::vector<DensityField> out(times.size(), DensityField{bins.y_min, dy, std::vector<double>(bins.ny, 0.0)});
    auto bin = [&](std::size_t k, double y) {
        const double pos = (y - bins.y_min) / dy;
        if (pos < 0.0 || pos >= static_cast<double>(bins.ny)) return;
        out[k].values[static_cast<std::size_t>(pos)] += 1.0;
    };
    const double ff[1] = {f};
    for (std::size_t p = 0; p < n_paths; ++p) {
        double y[1] = {sample_q0(rng)};
        std::size_t step = 0;
        for (std::size_t k = 0; k < times.size(); ++k) {
            while (step < at_step[k]) {
                sde_forward_step(y, ff, beta, static_cast<double>(step) * dt, dt, rng);
                ++step;
            }
            bin(k, y[0]);
        }
    }
    const double norm = 1.0 / (static_cast<double>(n_paths) * dy);
    for (auto& h : out)
        for (double& v : h.values) v *= norm;
    return out;
}

double field_quantile(const DensityField& q, double u) {
    const double total = q.mass();
    const double target = u * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < q.values.size(); ++i) {
        const double m = q.values[i] * q.dy;
        if (acc + m >= target && m > 0.0) {
            const double w = (target - acc) / m;
            return q.y_min + (static_cast<double>(i) + w) * q.dy;
        }
        acc += m;
    }
    return q.y_min + static_cast<double>(q.values.size()) * q.dy;
}

double w2_particles_vs_field(const std::vector<double>& sorted_particles, const DensityField& q) {
    const std::size_t n = sorted_particles.size();
    if (n == 0) throw std::invalid_argument("w2_particles_vs_field: no particles");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double d = sorted_particles[i] - field_quantile(q, u);
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(n));
}

OdeCheck ode_marginal_check(const Grid1D& g, const DensityField& q0, double f, const BetaFn& beta,
                            const ScalarScore& analytic_score, double t_probe,
                            std::size_t n_particles, std::size_t rk4_steps) {
    std::vector<double> x(n_particles);
    for (std::size_t i = 0; i < n_particles; ++i)
        x[i] = field_quantile(q0, (static_cast<double>(i) + 0.5) / static_cast<double>(n_particles));
    const ScoreFn score = [&](std::span<const double> y, std::span<const double> ff, double t,
                              std::span<double> out) { out[0] = analytic_score(y[0], ff[0], t); };
    const double ff[1] = {f};
    if (t_probe > 0.0) {
        const double h = t_probe / static_cast<double>(rk4_steps);
        for (double& xi : x) {
            double y[1] = {xi};
            for (std::size_t k = 0; k < rk4_steps; ++k)
                ode_flow_step(y, ff, score, beta, static_cast<double>(k) * h, h);
            xi = y[0];
        }
    }
    std::sort(x.begin(), x.end());
    const FpRun run = fp_forward_solve(g, q0, f, beta, t_probe);
    const DensityField& qf = run.final_field();
    OdeCheck r;
    r.t_probe = t_probe;
    r.w2 = w2_particles_vs_field(x, qf);
    r.fp_mean = qf.mean();
    r.fp_var = qf.variance();
    double m = 0.0, v = 0.0;
    for (double xi : x) m += xi;
    m /= static_cast<double>(x.size());
    for (double xi : x) v += (xi - m) * (xi - m);
    r.ode_mean = m;
    r.ode_var = v / static_cast<double>(x.size());
    return r;
}

double gaussian_marginal_var(double v0, double beta_bar, double t) {
    const double e = std::exp(-beta_bar * t);
    return e * v0 + 1.0 - e;
}

ScalarScore gaussian_family_score(double v0, double beta_bar) {
    return [v0, beta_bar](double y, double f, double t) {
        return -(y - f) / gaussian_marginal_var(v0, beta_bar, t);
    };
}

namespace {

double normal_pdf(double y, double m, double v) {
    return std::exp(-0.5 * (y - m) * (y - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

CheckItem item(std::string name, double value, double limit, bool upper = true) {
    CheckItem c{std::move(name), value, limit, upper, false};
    c.pass = std::isfinite(value) && (upper ? value <= limit : value >= limit);
    return c;
}

}  // namespace

FpCheckReport run_fp_consistency(const FpCheckConfig& cfg) {
    FpCheckReport rep;
    const BetaFn beta = [b = cfg.beta_bar](double) { return b; };
    const double lo = cfg.f - cfg.half_width, hi = cfg.f + cfg.half_width;
    try {
        const double lim = Grid1D::cfl_limit(lo, hi, cfg.ny, cfg.beta_bar, cfg.f);
        const double dt = cfg.dt > 0.0 ? cfg.dt : cfg.dt_safety * lim;
        const Grid1D g = Grid1D::make(lo, hi, cfg.ny, dt, cfg.beta_bar, cfg.f, cfg.scheme);
        const ScalarPdf q0pdf = [&](double y) { return normal_pdf(y, cfg.f, cfg.v0); };
        const DensityField q0 = project_density(g, q0pdf);

        // Forward solve against the closed form.
        const FpRun fwd = fp_forward_solve(g, q0, cfg.f, beta, cfg.t_end, cfg.probes);
        double mom_err = 0.0;
        for (const auto& s : fwd.snapshots) {
            const double var = gaussian_marginal_var(cfg.v0, cfg.beta_bar, s.t);
            mom_err = std::max(mom_err, std::abs(s.field.mean() - cfg.f));
            mom_err = std::max(mom_err, std::abs(s.field.variance() - var));
        }
        rep.items.push_back(item("forward_moment_error", mom_err, cfg.tol_moments));
        rep.items.push_back(item("forward_mass_drift", fwd.max_mass_drift, cfg.tol_mass));
        rep.items.push_back(item("forward_min_value", fwd.min_value, -1e-12, false));

        // Stationary N(f, 1).
        const DensityField qs = project_density(g, [&](double y) { return normal_pdf(y, cfg.f, 1.0); });
        const FpRun st = fp_forward_solve(g, qs, cfg.f, beta, cfg.t_end);
        rep.items.push_back(item("stationary_l1_drift", l1_distance(st.final_field(), qs), cfg.tol_stationary));

        // SDE Monte-Carlo histogram vs the FP field.
        {
            Rng rng(cfg.seed);
            // Histogram cells must tile FP cells exactly.
            const std::size_t factor = std::gcd(cfg.ny, std::max<std::size_t>(cfg.mc_bin_factor, 1));
            const Grid1D bins{lo, hi, cfg.ny / factor, g.dt, g.scheme};
            const double sd0 = std::sqrt(cfg.v0);
            const auto hist = sde_mc_marginal(
                cfg.n_paths, cfg.sde_substeps, [&](Rng& r) { return cfg.f + sd0 * r.normal(); },
                cfg.f, beta, cfg.probes, bins, rng);
            double worst = 0.0;
            for (std::size_t k = 0; k < cfg.probes.size(); ++k)
                worst = std::max(worst, l1_distance(coarsen(fwd.at(cfg.probes[k]), factor), hist[k]));
            rep.items.push_back(item("fp_vs_sde_l1", worst, cfg.tol_mc_l1));
        }

        // Probability-flow ODE particles vs the FP field.
        {
            const ScalarScore sc = gaussian_family_score(cfg.v0, cfg.beta_bar);
            double worst = 0.0;
            for (double tp : cfg.probes)
                worst = std::max(worst, ode_marginal_check(g, q0, cfg.f, beta, sc, tp, cfg.ode_particles).w2);
            rep.items.push_back(item("fp_vs_ode_w2", worst, cfg.tol_ode_w2));
        }

        // Reverse round trip and the zero-score ablation.
        {
            const ScalarScore sc = gaussian_family_score(cfg.v0, cfg.beta_bar);
            const FpRun rev = fp_reverse_solve(g, fwd.final_field(), cfg.f, beta, sc, cfg.t_end);
            const double l1_exact = l1_distance(rev.final_field(), q0);
            const ScalarScore zero = [](double, double, double) { return 0.0; };
            const FpRun rz = fp_reverse_solve(g, fwd.final_field(), cfg.f, beta, zero, cfg.t_end);
            const double l1_zero = l1_distance(rz.final_field(), q0);
            rep.items.push_back(item("reverse_roundtrip_l1", l1_exact, cfg.tol_roundtrip_l1));
            rep.items.push_back(item("reverse_mass_drift", rev.max_mass_drift, cfg.tol_mass));
            rep.items.push_back(item("zero_score_ablation_gap", l1_zero - l1_exact, 0.0, false));
        }

        // Refinement: halve dy and dt, compare L1 error against the closed form.
        {
            auto err_at = [&](const Grid1D& gg) {
                const DensityField a = project_density(gg, q0pdf);
                const FpRun r = fp_forward_solve(gg, a, cfg.f, beta, cfg.t_end);
                const double var = gaussian_marginal_var(cfg.v0, cfg.beta_bar, cfg.t_end);
                const DensityField exact =
                    project_density(gg, [&](double y) { return normal_pdf(y, cfg.f, var); }, false);
                return l1_distance(r.final_field(), exact);
            };
            const double e1 = err_at(g);
            // Halve dt as well, unless the finer mesh's CFL limit is tighter still.
            const double lim2 = Grid1D::cfl_limit(lo, hi, cfg.ny * 2, cfg.beta_bar, cfg.f);
            const double dt2 = std::min(0.5 * g.dt, cfg.dt_safety * lim2);
            const double e2 = err_at(Grid1D::make(lo, hi, cfg.ny * 2, dt2, cfg.beta_bar, cfg.f, cfg.scheme));
            rep.items.push_back(item("refinement_ratio", e2 > 0.0 ? e1 / e2 : 1e300, cfg.min_refinement_ratio, false));
        }
    } catch (const CflError& e) {
        rep.error = e.what();
    } catch (const MassDriftError& e) {
        rep.error = e.what();
    }
    rep.all_pass = rep.error.empty() && !rep.items.empty() &&
                   std::all_of(rep.items.begin(), rep.items.end(), [](const CheckItem& c) { return c.pass; });
    return rep;
}

}  // namespace cardlab
