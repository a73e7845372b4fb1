#include "cardlab/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "cardlab/transport.hpp"

namespace cardlab {

double StepFunction::operator()(double tau) const {
    if (values.empty()) return 0.0;
    const double T = static_cast<double>(values.size());
    const double pos = tau * T;  // node k sits at pos = k
    if (pos <= 1.0) return values.front();
    if (pos >= T) return values.back();
    const auto k = static_cast<std::size_t>(std::floor(pos));
    const double w = pos - static_cast<double>(k);
    return (1.0 - w) * values[k - 1] + w * values[k];
}

double LipschitzEstimates::l2_at(double tau) const {
    if (!l2) return 0.0;
    return std::clamp(l2(tau), -l2_max, l2_max);
}

namespace {

double rate(const LipschitzEstimates& e, double tau) { return e.l1(tau) + e.l2_at(tau) * e.beta(tau); }

// Trapezoid weights of a uniform grid with n points on [0, 1].
template <class F>
double trapezoid01(std::size_t n, F&& g) {
    if (n < 2) throw std::invalid_argument("quadrature grid needs at least 2 points");
    const double h = 1.0 / static_cast<double>(n - 1);
    double s = 0.5 * (g(0, 0.0) + g(n - 1, 1.0));
    for (std::size_t i = 1; i + 1 < n; ++i) s += g(i, static_cast<double>(i) * h);
    return s * h;
}

}  // namespace

double m_factor(const LipschitzEstimates& est, double t, std::size_t n_grid) {
    if (t <= 0.0) return 1.0;
    if (n_grid < 2) throw std::invalid_argument("m_factor: n_grid must be >= 2");
    const double h = t / static_cast<double>(n_grid - 1);
    double s = 0.5 * (rate(est, 0.0) + rate(est, t));
    for (std::size_t i = 1; i + 1 < n_grid; ++i) s += rate(est, static_cast<double>(i) * h);
    return std::exp(s * h);
}

std::vector<double> m_curve(const LipschitzEstimates& est, std::size_t n_grid) {
    if (n_grid < 2) throw std::invalid_argument("m_curve: n_grid must be >= 2");
    const double h = 1.0 / static_cast<double>(n_grid - 1);
    std::vector<double> M(n_grid, 1.0);
    double acc = 0.0;
    double prev = rate(est, 0.0);
    for (std::size_t i = 1; i < n_grid; ++i) {
        const double cur = rate(est, static_cast<double>(i) * h);
        acc += 0.5 * h * (prev + cur);
        prev = cur;
        M[i] = std::exp(acc);
    }
    return M;
}

Score2 score_fn_of(const CardModel& m) {
    return [&m](const Vec2& y, const Vec2& f, int t) {
        return score_from_eps(m.schedule, m.predict_eps(y, f, t), t);
    };
}

std::vector<Vec2> class_means(const CardModel& m) {
    std::vector<Vec2> fk(static_cast<std::size_t>(m.n_classes));
    for (int k = 0; k < m.n_classes; ++k) fk[static_cast<std::size_t>(k)] = m.cond_mean(k);
    return fk;
}

double estimate_l2(const Score2& score, const NoiseSchedule& s,
                   const std::vector<LabeledSample>& samples, const std::vector<Vec2>& fk, int t,
                   std::size_t n_pairs, Rng& rng, double l2_max) {
    if (n_pairs == 0) throw std::invalid_argument("estimate_l2: n_pairs must be >= 1");
    if (samples.empty()) throw std::invalid_argument("estimate_l2: no samples");
    std::vector<std::vector<std::size_t>> by_class(fk.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        by_class.at(static_cast<std::size_t>(samples[i].x)).push_back(i);

    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < n_pairs; ++p) {
        const auto& a = samples[rng.below(samples.size())];
        const auto& cls = by_class[static_cast<std::size_t>(a.x)];
        const auto& b = samples[cls[rng.below(cls.size())]];
        const Vec2& f = fk[static_cast<std::size_t>(a.x)];
        Vec2 y1, y2;
        double dd = 0.0;
        for (int attempt = 0; attempt < 16; ++attempt) {
            y1 = forward_marginal_sample(s, a.y0, f, t, rng).y_t;
            y2 = forward_marginal_sample(s, b.y0, f, t, rng).y_t;
            dd = (y1[0] - y2[0]) * (y1[0] - y2[0]) + (y1[1] - y2[1]) * (y1[1] - y2[1]);
            if (dd > 1e-24) break;
        }
        if (!(dd > 1e-24)) continue;
        const Vec2 s1 = score(y1, f, t), s2 = score(y2, f, t);
        const double num = (s1[0] - s2[0]) * (y1[0] - y2[0]) + (s1[1] - s2[1]) * (y1[1] - y2[1]);
        best = std::max(best, num / dd);
    }
    if (!std::isfinite(best)) return 0.0;
    return std::clamp(best, -l2_max, l2_max);
}

HEstimate estimate_H(const Score2& score, const NoiseSchedule& s,
                     const std::vector<LabeledSample>& samples, const std::vector<Vec2>& fk, int t,
                     std::size_t n_mc, Rng& rng, std::optional<double> gaussian_var) {
    if (n_mc == 0) throw std::invalid_argument("estimate_H: n_mc must be >= 1");
    if (samples.empty()) throw std::invalid_argument("estimate_H: no samples");
    const double ab = s.alpha_bar.at(static_cast<std::size_t>(t));
    const double sd = std::sqrt(1.0 - ab);
    const double sab = std::sqrt(ab);
    double sum = 0.0, sum2 = 0.0, msum = 0.0;
    for (std::size_t k = 0; k < n_mc; ++k) {
        const auto& smp = samples[rng.below(samples.size())];
        const Vec2& f = fk.at(static_cast<std::size_t>(smp.x));
        const ForwardDraw d = forward_marginal_sample(s, smp.y0, f, t, rng);
        const Vec2 sc = score(d.y_t, f, t);
        const double e0 = sc[0] + d.eps[0] / sd, e1 = sc[1] + d.eps[1] / sd;
        const double h = e0 * e0 + e1 * e1;
        sum += h;
        sum2 += h * h;
        if (gaussian_var) {
            const double v = ab * *gaussian_var + 1.0 - ab;
            double m2 = 0.0;
            for (std::size_t c = 0; c < 2; ++c) {
                const double sm = -(d.y_t[c] - (1.0 - sab) * f[c]) / v;
                m2 += (sc[c] - sm) * (sc[c] - sm);
            }
            msum += m2;
        }
    }
    const double n = static_cast<double>(n_mc);
    HEstimate r;
    r.surrogate = sum / n;
    const double var = std::max(0.0, sum2 / n - r.surrogate * r.surrogate);
    r.surrogate_se = std::sqrt(var / n);
    if (gaussian_var) r.marginal = msum / n;
    return r;
}

double loss_L1_hat(const BoundInputs& in) {
    return 0.5 * trapezoid01(in.n_grid, [&](std::size_t, double tau) {
        const double lam = in.lambda_at(tau);
        if (!(lam > 0.0)) throw std::invalid_argument("loss_L1_hat: lambda(t) must be > 0");
        return lam * std::max(0.0, in.H(tau));
    });
}

double theorem1_rhs(const BoundInputs& in) {
    const auto M = m_curve(in.est, in.n_grid);
    const double integral = trapezoid01(in.n_grid, [&](std::size_t i, double tau) {
        return in.est.beta(tau) * M[i] * std::sqrt(std::max(0.0, in.H(tau)));
    });
    return integral + M.back() * in.W2_T;
}

double corollary1_integral(const BoundInputs& in) {
    const auto M = m_curve(in.est, in.n_grid);
    return trapezoid01(in.n_grid, [&](std::size_t i, double tau) {
        const double b = in.est.beta(tau);
        const double lam = in.lambda_at(tau);
        if (!(lam > 0.0)) throw std::invalid_argument("corollary1: lambda(t) must be > 0");
        return b * b * M[i] * M[i] / lam;
    });
}

double corollary1_rhs(const BoundInputs& in, double L1) {
    if (L1 < 0.0) throw std::invalid_argument("corollary1_rhs: L1 must be >= 0");
    const auto M = m_curve(in.est, in.n_grid);
    return std::sqrt(2.0 * corollary1_integral(in) * L1) + M.back() * in.W2_T;
}

BoundReport evaluate_checkpoint(const CardModel& m, const std::vector<LabeledSample>& samples,
                                std::size_t epoch, const BoundConfig& cfg) {
    if (samples.empty()) throw std::invalid_argument("evaluate_checkpoint: no samples");
    const NoiseSchedule& s = m.schedule;
    const auto fk = class_means(m);
    const Score2 score = score_fn_of(m);

    BoundReport r;
    r.epoch = epoch;

    // Fixed evaluation subset for the W2 terms.
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    {
        Rng rng = Rng::stream(cfg.seed, 1);
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    }
    const std::size_t nw = std::min(cfg.n_w2, samples.size());
    std::vector<LabeledSample> sub(nw);
    for (std::size_t i = 0; i < nw; ++i) sub[i] = samples[idx[i]];

    double L1m = 0.0;
    std::vector<double> Hm;
    for (int t = 1; t <= s.T; ++t) {
        Rng rl = Rng::stream(cfg.seed, 100 + static_cast<std::uint64_t>(t));
        r.l2_hat.push_back(estimate_l2(score, s, samples, fk, t, cfg.n_pairs, rl, cfg.l2_max));
        Rng rh = Rng::stream(cfg.seed, 200 + static_cast<std::uint64_t>(t));
        const HEstimate h = estimate_H(score, s, samples, fk, t, cfg.n_mc, rh, cfg.gaussian_var);
        r.H_hat.push_back(h.surrogate);
        if (h.marginal) Hm.push_back(*h.marginal);
    }

    std::vector<int> xs(nw);
    std::vector<Vec2> data0(nw), fsub(nw);
    for (std::size_t i = 0; i < nw; ++i) {
        xs[i] = sub[i].x;
        data0[i] = sub[i].y0;
        fsub[i] = fk[static_cast<std::size_t>(sub[i].x)];
    }
    {
        Rng rg = Rng::stream(cfg.seed, 300);
        const auto tr = reverse_sample(s, eps_fn_of(m), fsub, rg, 0);
        r.W2_emp = w2_exact(EmpiricalMeasure::from(data0), EmpiricalMeasure::from(tr.clouds.back())).distance;
    }
    {
        Rng rq = Rng::stream(cfg.seed, 400);
        Rng rp = Rng::stream(cfg.seed, 500);
        std::vector<Vec2> qT(nw), pT(nw);
        for (std::size_t i = 0; i < nw; ++i) {
            qT[i] = forward_marginal_sample(s, data0[i], fsub[i], s.T, rq).y_t;
            pT[i] = {fsub[i][0] + rp.normal(), fsub[i][1] + rp.normal()};
        }
        r.W2_T = w2_exact(EmpiricalMeasure::from(qT), EmpiricalMeasure::from(pT)).distance;
    }

    BoundInputs in;
    in.est.beta = [&s](double tau) { return s.beta_cont(tau); };
    const StepFunction l2f{r.l2_hat};
    in.est.l2 = l2f;
    in.est.l2_max = cfg.l2_max;
    const StepFunction Hf{r.H_hat};
    in.H = Hf;
    in.W2_T = r.W2_T;
    in.n_grid = cfg.n_grid;

    r.L1_hat = loss_L1_hat(in);
    r.rhs_thm1 = theorem1_rhs(in);
    r.rhs_cor1 = corollary1_rhs(in, r.L1_hat);
    r.M_T = m_curve(in.est, in.n_grid).back();
    r.intercept = 0.5 * std::log(2.0 * corollary1_integral(in));
    if (!Hm.empty()) {
        BoundInputs im = in;
        im.H = StepFunction{Hm};
        L1m = loss_L1_hat(im);
        r.L1_marginal = L1m;
    }
    return r;
}

std::vector<LogBoundPoint> log_bound_points(const std::vector<BoundReport>& reports) {
    std::vector<LogBoundPoint> out;
    out.reserve(reports.size());
    for (const auto& r : reports) {
        LogBoundPoint p;
        p.intercept = r.intercept;
        if (r.L1_hat > 0.0 && r.W2_emp > 0.0) {
            p.valid = true;
            p.log_L1 = std::log(r.L1_hat);
            p.log_W2 = std::log(r.W2_emp);
            p.log_rhs = r.intercept + 0.5 * p.log_L1;
        }
        out.push_back(p);
    }
    return out;
}

std::vector<ProductPoint> product_curve(const NoiseSchedule& s, const EpsFn& eps,
                                        const std::vector<LabeledSample>& data,
                                        const std::vector<Vec2>& fk,
                                        const LipschitzEstimates& est,
                                        const std::vector<int>& steps, Rng& rng,
                                        std::size_t n_grid) {
    if (data.empty()) throw std::invalid_argument("product_curve: no data");
    const std::size_t n = data.size();
    std::vector<Vec2> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = fk.at(static_cast<std::size_t>(data[i].x));
    int lowest = s.T;
    for (int t : steps) {
        if (t < 0 || t > s.T) throw std::out_of_range("product_curve: step out of range");
        lowest = std::min(lowest, t);
    }
    const auto tr = reverse_sample(s, eps, f, rng, lowest);
    std::vector<ProductPoint> out;
    for (int t : steps) {
        std::vector<Vec2> q(n);
        for (std::size_t i = 0; i < n; ++i) q[i] = forward_marginal_sample(s, data[i].y0, f[i], t, rng).y_t;
        ProductPoint p;
        p.step = t;
        p.tau = static_cast<double>(t) / static_cast<double>(s.T);
        p.M = m_factor(est, p.tau, n_grid);
        p.W2 = w2_exact(EmpiricalMeasure::from(q), EmpiricalMeasure::from(tr.at_step(t))).distance;
        p.value = p.M * p.W2;
        out.push_back(p);
    }
    return out;
}

namespace {
std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}
}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need equal sizes >= 2");
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace cardlab
