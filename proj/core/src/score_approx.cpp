#include "cardlab/score_approx.hpp"

#include "cardlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace cardlab {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

double std_normal_pdf(double u) { return kInvSqrt2Pi * std::exp(-0.5 * u * u); }
double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double factorial(int k) { return std::tgamma(k + 1.0); }

double binom(int n, int k) { return factorial(n) / (factorial(k) * factorial(n - k)); }

// sup_u |He_k(u) phi(u)| by dense grid search; the maximiser sits well inside |u| < 12.
double sup_hermite_phi(int k) {
    double best = 0.0;
    for (int i = -12000; i <= 12000; ++i) {
        const double u = i * 1e-3;
        best = std::max(best, std::abs(hermite_he(k, u) * std_normal_pdf(u)));
    }
    return best;
}

double inf_norm(std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
}

double sq_norm(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

struct Neumaier {
    double sum = 0.0, comp = 0.0;
    void add(double x) {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            comp += (sum - t) + x;
        else
            comp += (x - t) + sum;
        sum = t;
    }
    double value() const { return sum + comp; }
};

// F_j(z) = int_0^z x^j T_p(x^2/2) dx with T_p the p-term Taylor sum of e^{-u}.
double taylor_kernel_moment(int j, int p, double z) {
    Neumaier acc;
    const double u = -0.5 * z * z;
    double t = 1.0;
    for (int k = 0; k < p; ++k) {
        if (k > 0) t *= u / k;
        acc.add(t / (2.0 * k + j + 1));
    }
    return std::pow(z, j + 1) * acc.value();
}

// Advances an odometer over ranges [lo_i, hi_i]; false once exhausted.
bool next_index(std::vector<int>& idx, const std::vector<int>& lo, const std::vector<int>& hi) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < hi[i]) {
            ++idx[i];
            return true;
        }
        idx[i] = lo[i];
    }
    return false;
}

const std::vector<double>& gl_nodes10() {
    static const std::vector<double> x = {
        -0.9739065285171717, -0.8650633666889845, -0.6794095682990244, -0.4333953941292472,
        -0.1488743389816312, 0.1488743389816312,  0.4333953941292472,  0.6794095682990244,
        0.8650633666889845,  0.9739065285171717};
    return x;
}

const std::vector<double>& gl_weights10() {
    static const std::vector<double> w = {
        0.0666713443086881, 0.1494513491505806, 0.2190863625159820, 0.2692667193099963,
        0.2955242247147529, 0.2955242247147529, 0.2692667193099963, 0.2190863625159820,
        0.1494513491505806, 0.0666713443086881};
    return w;
}

}  // namespace

double hermite_he(int k, double u) {
    if (k < 0) throw std::invalid_argument("hermite_he: negative order");
    if (k == 0) return 1.0;
    double h0 = 1.0, h1 = u;
    for (int i = 1; i < k; ++i) {
        const double h2 = u * h1 - i * h0;
        h0 = h1;
        h1 = h2;
    }
    return h1;
}

// ---- families ------------------------------------------------------------

GaussianFamily::GaussianFamily(double s0, int d) : s0_(s0), d_(d) {
    if (!(s0 > 0.0)) throw std::invalid_argument("GaussianFamily: s0 must be positive");
    if (d < 1) throw std::invalid_argument("GaussianFamily: d must be >= 1");
}

double GaussianFamily::density(std::span<const double> y0, std::span<const double> f) const {
    double p = 1.0;
    for (int i = 0; i < d_; ++i) p *= std_normal_pdf((y0[i] - f[i]) / s0_) / s0_;
    return p;
}

double GaussianFamily::derivative(std::span<const int> n, std::span<const int> m,
                                  std::span<const double> y0, std::span<const double> f) const {
    double p = 1.0;
    for (int i = 0; i < d_; ++i) {
        const double u = (y0[i] - f[i]) / s0_;
        const int k = n[i] + m[i];
        const double sign = (n[i] % 2) ? -1.0 : 1.0;
        p *= sign * std::pow(s0_, -(k + 1)) * hermite_he(k, u) * std_normal_pdf(u);
    }
    return p;
}

double GaussianFamily::box_mass(std::span<const double> f, double R) const {
    double p = 1.0;
    for (int i = 0; i < d_; ++i)
        p *= std_normal_cdf((R - f[i]) / s0_) - std_normal_cdf((-R - f[i]) / s0_);
    return p;
}

LightTail GaussianFamily::light_tail(std::span<const double> f) const {
    // (y - f)^2 >= y^2/2 - f^2
    return {std::pow(s0_ * std::sqrt(2.0 * std::numbers::pi), -d_) *
                std::exp(sq_norm(f) / (2.0 * s0_ * s0_)),
            1.0 / (2.0 * s0_ * s0_)};
}

double GaussianFamily::holder_constant(int order) const {
    std::vector<double> g(order + 1);
    for (int k = 0; k <= order; ++k) g[k] = sup_hermite_phi(k) * std::pow(s0_, -(k + 1));
    double best = 0.0;
    for (const auto& ks : multi_indices(d_, order)) {
        double p = 1.0;
        for (int k : ks) p *= g[k];
        best = std::max(best, p);
    }
    return best;
}

std::pair<double, double> GaussianFamily::support_window(double f) const {
    return {f - 14.0 * s0_, f + 14.0 * s0_};
}

double GaussianFamily::marginal_density(std::span<const double> y, std::span<const double> f,
                                        double gamma, double sigma) const {
    const double sd = std::sqrt(gamma * gamma * s0_ * s0_ + sigma * sigma);
    double p = 1.0;
    for (int i = 0; i < d_; ++i) p *= std_normal_pdf((y[i] - f[i]) / sd) / sd;
    return p;
}

double GaussianFamily::marginal_score(double y, double f, double gamma, double sigma) const {
    return -(y - f) / (gamma * gamma * s0_ * s0_ + sigma * sigma);
}

GaussianMixtureFamily::GaussianMixtureFamily(std::vector<double> weights,
                                             std::vector<double> offsets,
                                             std::vector<double> scales)
    : w_(std::move(weights)), a_(std::move(offsets)), s_(std::move(scales)) {
    if (w_.empty() || w_.size() != a_.size() || w_.size() != s_.size())
        throw std::invalid_argument("GaussianMixtureFamily: component arrays must match");
    double total = 0.0;
    for (std::size_t k = 0; k < w_.size(); ++k) {
        if (!(w_[k] > 0.0) || !(s_[k] > 0.0))
            throw std::invalid_argument("GaussianMixtureFamily: weights and scales must be > 0");
        total += w_[k];
    }
    for (double& w : w_) w /= total;
}

double GaussianMixtureFamily::density(std::span<const double> y0,
                                      std::span<const double> f) const {
    double p = 0.0;
    for (std::size_t k = 0; k < w_.size(); ++k)
        p += w_[k] * std_normal_pdf((y0[0] - f[0] - a_[k]) / s_[k]) / s_[k];
    return p;
}

double GaussianMixtureFamily::derivative(std::span<const int> n, std::span<const int> m,
                                         std::span<const double> y0,
                                         std::span<const double> f) const {
    const int k_tot = n[0] + m[0];
    const double sign = (n[0] % 2) ? -1.0 : 1.0;
    double p = 0.0;
    for (std::size_t k = 0; k < w_.size(); ++k) {
        const double u = (y0[0] - f[0] - a_[k]) / s_[k];
        p += w_[k] * std::pow(s_[k], -(k_tot + 1)) * hermite_he(k_tot, u) * std_normal_pdf(u);
    }
    return sign * p;
}

double GaussianMixtureFamily::box_mass(std::span<const double> f, double R) const {
    double p = 0.0;
    for (std::size_t k = 0; k < w_.size(); ++k)
        p += w_[k] * (std_normal_cdf((R - f[0] - a_[k]) / s_[k]) -
                      std_normal_cdf((-R - f[0] - a_[k]) / s_[k]));
    return p;
}

LightTail GaussianMixtureFamily::light_tail(std::span<const double> f) const {
    LightTail lt{0.0, std::numeric_limits<double>::infinity()};
    for (std::size_t k = 0; k < w_.size(); ++k) {
        const double mu = f[0] + a_[k];
        lt.c1 += w_[k] * kInvSqrt2Pi / s_[k] * std::exp(mu * mu / (2.0 * s_[k] * s_[k]));
        lt.c2 = std::min(lt.c2, 1.0 / (2.0 * s_[k] * s_[k]));
    }
    return lt;
}

double GaussianMixtureFamily::holder_constant(int order) const {
    // Depends on y0 - f only; scan the combined derivative.
    const auto [lo, hi] = support_window(0.0);
    const double f0 = 0.0;
    double best = 0.0;
    for (int k = 0; k <= order; ++k) {
        const int n = k, m = 0;
        for (int i = 0; i <= 20000; ++i) {
            const double y = lo + (hi - lo) * i / 20000.0;
            best = std::max(best, std::abs(derivative(std::span(&n, 1), std::span(&m, 1),
                                                      std::span(&y, 1), std::span(&f0, 1))));
        }
    }
    return best;
}

std::pair<double, double> GaussianMixtureFamily::support_window(double f) const {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < w_.size(); ++k) {
        lo = std::min(lo, f + a_[k] - 14.0 * s_[k]);
        hi = std::max(hi, f + a_[k] + 14.0 * s_[k]);
    }
    return {lo, hi};
}

// ---- exponential truncation ---------------------------------------------

double exp_taylor(int order_p, double u) {
    if (order_p < 1) throw std::invalid_argument("exp_taylor: order must be >= 1");
    Neumaier acc;
    double t = 1.0;
    for (int k = 0; k < order_p; ++k) {
        if (k > 0) t *= -u / k;
        acc.add(t);
    }
    return acc.value();
}

int exp_taylor_order_nominal(double eps) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("exp_taylor_order_nominal: eps in (0,1)");
    return static_cast<int>(std::ceil(3.0 * std::log(1.0 / eps) / std::numbers::e));
}

int exp_taylor_order_for(double eps, double u_max) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("exp_taylor_order_for: eps in (0,1)");
    if (u_max <= 0.0) return 1;
    const double target = 3.0 / std::numbers::e * std::log(eps);
    for (int p = 1; p < 10000; ++p)
        if (p * std::log(u_max) - std::lgamma(p + 1.0) <= target) return p;
    throw std::runtime_error("exp_taylor_order_for: no order found");
}

double trapezoid_psi(double a) {
    const double x = std::abs(a);
    if (x < 1.0) return 1.0;
    if (x <= 2.0) return 2.0 - x;
    return 0.0;
}

std::vector<std::vector<int>> multi_indices(int D, int s) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(D, 0);
    for (int total = 0; total <= s; ++total) {
        // compositions of `total` into D parts, lexicographic from the first slot
        auto rec = [&](auto&& self, int pos, int left) -> void {
            if (pos == D - 1) {
                cur[pos] = left;
                out.push_back(cur);
                return;
            }
            for (int k = left; k >= 0; --k) {
                cur[pos] = k;
                self(self, pos + 1, left - k);
            }
        };
        if (D == 0) {
            if (total == 0) out.emplace_back();
            continue;
        }
        rec(rec, 0, total);
    }
    return out;
}

// ---- local polynomial -----------------------------------------------------

LocalPolynomial::LocalPolynomial(const TauDerivative& tau, int d, int N, int s)
    : d_(d), N_(N), s_(s), alphas_(multi_indices(2 * d, s)) {
    if (d < 1 || N < 1 || s < 0) throw std::invalid_argument("LocalPolynomial: bad d, N or s");
    std::size_t nodes = 1;
    for (int i = 0; i < d; ++i) nodes *= static_cast<std::size_t>(N) * (N + 1);
    table_.resize(nodes * alphas_.size());

    std::vector<double> alpha_fact(alphas_.size(), 1.0);
    for (std::size_t a = 0; a < alphas_.size(); ++a)
        for (int k : alphas_[a]) alpha_fact[a] *= factorial(k);

    std::vector<int> v(d, 1), w(d, 0);
    const std::vector<int> vlo(d, 1), vhi(d, N), wlo(d, 0), whi(d, N);
    std::vector<double> point(2 * d);
    do {
        do {
            for (int i = 0; i < d; ++i) {
                point[i] = static_cast<double>(v[i]) / N;
                point[d + i] = static_cast<double>(w[i]) / N;
            }
            const std::size_t base = node_index(v, w) * alphas_.size();
            for (std::size_t a = 0; a < alphas_.size(); ++a)
                table_[base + a] = tau(alphas_[a], point) / alpha_fact[a];
        } while (next_index(w, wlo, whi));
    } while (next_index(v, vlo, vhi));
}

std::size_t LocalPolynomial::node_index(std::span<const int> v, std::span<const int> w) const {
    std::size_t idx = 0;
    for (int i = 0; i < d_; ++i) idx = idx * N_ + static_cast<std::size_t>(v[i] - 1);
    for (int i = 0; i < d_; ++i) idx = idx * (N_ + 1) + static_cast<std::size_t>(w[i]);
    return idx;
}

std::span<const double> LocalPolynomial::coeffs(std::span<const int> v,
                                                std::span<const int> w) const {
    return {table_.data() + node_index(v, w) * alphas_.size(), alphas_.size()};
}

int LocalPolynomial::y_cell(double y, int N) {
    const int v = static_cast<int>(std::ceil(y * N));
    return std::clamp(v, 1, N);
}

void LocalPolynomial::active_f_nodes(double f, int N, std::vector<int>& w,
                                     std::vector<double>& psi) {
    w.clear();
    psi.clear();
    const int mid = static_cast<int>(std::lround(f * N));
    for (int k = mid - 1; k <= mid + 1; ++k) {
        if (k < 0 || k > N) continue;
        const double p = trapezoid_psi(3.0 * N * (f - static_cast<double>(k) / N));
        if (p > 0.0) {
            w.push_back(k);
            psi.push_back(p);
        }
    }
}

double LocalPolynomial::partition_sum(std::span<const double>,
                                      std::span<const double> f) const {
    double total = 1.0;
    std::vector<int> w;
    std::vector<double> psi;
    for (int j = 0; j < d_; ++j) {
        active_f_nodes(f[j], N_, w, psi);
        double s = 0.0;
        for (double p : psi) s += p;
        total *= s;
    }
    return total;
}

double LocalPolynomial::evaluate(std::span<const double> y, std::span<const double> f) const {
    std::vector<int> v(d_);
    for (int i = 0; i < d_; ++i) v[i] = y_cell(y[i], N_);

    std::vector<std::vector<int>> ws(d_);
    std::vector<std::vector<double>> psis(d_);
    for (int j = 0; j < d_; ++j) active_f_nodes(f[j], N_, ws[j], psis[j]);
    for (int j = 0; j < d_; ++j)
        if (ws[j].empty()) return 0.0;

    std::vector<int> pick(d_, 0), lo(d_, 0), hi(d_);
    for (int j = 0; j < d_; ++j) hi[j] = static_cast<int>(ws[j].size()) - 1;
    std::vector<int> w(d_);
    double total = 0.0;
    do {
        double weight = 1.0;
        for (int j = 0; j < d_; ++j) {
            w[j] = ws[j][pick[j]];
            weight *= psis[j][pick[j]];
        }
        const auto c = coeffs(v, w);
        double poly = 0.0;
        for (std::size_t a = 0; a < alphas_.size(); ++a) {
            double term = c[a];
            for (int i = 0; i < d_; ++i) {
                term *= std::pow(y[i] - static_cast<double>(v[i]) / N_, alphas_[a][i]);
                term *= std::pow(f[i] - static_cast<double>(w[i]) / N_, alphas_[a][d_ + i]);
            }
            poly += term;
        }
        total += weight * poly;
    } while (next_index(pick, lo, hi));
    return total;
}

LocalPolynomial build_local_polynomial(const ConditionalFamily& fam, double R_star, int N, int s) {
    const int d = fam.dim();
    TauDerivative tau = [&fam, R_star, d](std::span<const int> alpha,
                                          std::span<const double> pt) {
        std::vector<double> y0(d), f(d);
        int order = 0;
        for (int i = 0; i < d; ++i) {
            y0[i] = R_star * (pt[i] - 0.5);
            f[i] = R_star * (pt[d + i] - 0.5);
        }
        for (int k : alpha) order += k;
        return std::pow(R_star, order) *
               fam.derivative(alpha.subspan(0, d), alpha.subspan(d, d), y0, f);
    };
    return LocalPolynomial(tau, d, N, s);
}

double local_polynomial_budget(double B, double R_star, int d, int N, int s, double beta) {
    return B * std::pow(R_star, s) * std::pow(2.0 * d, s) / (std::pow(N, beta) * factorial(s));
}

// ---- domains ----------------------------------------------------------------

TruncationDomains make_domains(const ConditionalFamily& fam, std::span<const double> f,
                               double beta_bar, double t, int N, const DomainOptions& opt) {
    if (!(opt.eps > 0.0 && opt.eps < 1.0)) throw std::invalid_argument("make_domains: eps in (0,1)");
    if (!(t > 0.0)) throw std::invalid_argument("make_domains: t must be positive");
    const int d = fam.dim();
    TruncationDomains dom;
    dom.eps = opt.eps;
    dom.L = std::log(1.0 / opt.eps);
    dom.gamma = gamma_const(beta_bar, t);
    dom.sigma = sigma_const(beta_bar, t);
    dom.beta_holder = opt.beta_holder;

    // smallest radius r with the tail outside it below eps
    auto solve = [&](auto&& tail) {
        double lo = 0.0, hi = 1.0;
        while (tail(hi) > opt.eps) hi *= 2.0;
        for (int i = 0; i < 100; ++i) {
            const double mid = 0.5 * (lo + hi);
            (tail(mid) > opt.eps ? lo : hi) = mid;
        }
        return hi;
    };
    const double r_data = solve([&](double r) { return 1.0 - fam.box_mass(f, r); });
    const double r_kernel = solve([&](double r) {
        return -std::expm1(d * std::log1p(-2.0 * std_normal_cdf(-r)));
    });
    const double sqrtL = std::sqrt(dom.L);
    dom.c = std::max({std::numbers::sqrt2, r_data / sqrtL, r_kernel / sqrtL});
    dom.R = std::max(dom.c * sqrtL, 1.01);
    dom.R_f = std::max(opt.R_f_min, 1.01 * inf_norm(f));
    dom.R_star = std::max(2.0 * dom.R, 2.0 * dom.R_f);
    dom.taylor_order = exp_taylor_order_for(opt.eps, 0.5 * dom.c * dom.c * dom.L);
    dom.B = fam.holder_constant(opt.s + 1);

    const double Nb = std::pow(N, opt.beta_holder);
    dom.eps_low = opt.eps + dom.B / (Nb * std::pow(dom.gamma, 0.5 * d)) +
                  dom.B * std::pow(opt.eps, 3.0 / std::numbers::e) * (Nb + 1.0) /
                      (std::pow(N, d) * Nb * std::pow(dom.sigma, d));
    return dom;
}

// ---- density lemmas ---------------------------------------------------------

double lemma1_c3(const ConditionalFamily& fam, std::span<const double> f, double R) {
    return fam.box_mass(f, R) / std::pow(2.0 * std::numbers::pi, 0.5 * fam.dim());
}

double lemma1_lower(const ConditionalFamily& fam, const TruncationDomains& dom,
                    std::span<const double> y, std::span<const double> f) {
    const double g = dom.gamma, s = dom.sigma;
    const double c3 = lemma1_c3(fam, f, dom.R);
    const double expo =
        (sq_norm(y) + 2.0 * (1 - g) * (1 - g) * sq_norm(f) + 2.0 * g * g * dom.R * dom.R) / (s * s);
    return c3 / std::pow(s, fam.dim()) * std::exp(-expo);
}

namespace {
double shifted_sq(std::span<const double> y, std::span<const double> f, double gamma) {
    double r = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double w = y[i] - (1.0 - gamma) * f[i];
        r += w * w;
    }
    return r;
}
}  // namespace

double lemma1_upper(const ConditionalFamily& fam, const TruncationDomains& dom,
                    std::span<const double> y, std::span<const double> f) {
    const auto lt = fam.light_tail(f);
    const double den = dom.gamma * dom.gamma + lt.c2 * dom.sigma * dom.sigma;
    return lt.c1 / std::pow(den, 0.5 * fam.dim()) *
           std::exp(-lt.c2 * shifted_sq(y, f, dom.gamma) / (2.0 * den));
}

double lemma2_grad_bound(const ConditionalFamily& fam, const TruncationDomains& dom,
                         std::span<const double> y, std::span<const double> f) {
    const auto lt = fam.light_tail(f);
    const double g = dom.gamma, s = dom.sigma;
    const double den = g * g + lt.c2 * s * s;
    const double lead = lt.c1 / std::pow(den, 0.5 * fam.dim()) *
                        std::exp(-lt.c2 * shifted_sq(y, f, g) / den);
    const double poly = lt.c2 * inf_norm(y) / den +
                        4.0 * g * g * (1 - g) * inf_norm(f) / (s * s * den) +
                        4.0 * g / (s * std::sqrt(den));
    return lead * poly;
}

double lemma3_cap(const ConditionalFamily& fam, const TruncationDomains& dom,
                  std::span<const double> y, std::span<const double> f) {
    const int d = fam.dim();
    const double g = dom.gamma, s = dom.sigma, c = dom.c;
    const double c3 = lemma1_c3(fam, f, dom.R);
    const double c4 = 2.0 * c * std::sqrt(2.0 * d);
    const double log_arg = std::max(0.0, std::log(std::pow(s, d) / c3));
    const double c5 = 2.0 * c / (s * s) * std::sqrt(log_arg) +
                      2.0 * std::numbers::sqrt2 * c * g * dom.R / (s * s * s);
    const double yi = inf_norm(y), fi = inf_norm(f);
    return c4 / (s * s * s) * std::sqrt(yi * yi + 2.0 * (1 - g) * (1 - g) * fi * fi) + c5;
}

// ---- score approximation ----------------------------------------------------

ScoreApproxParts approx_score(const LocalPolynomial& poly, const ConditionalFamily& fam,
                              const TruncationDomains& dom, std::span<const double> y_t,
                              std::span<const double> f) {
    const int d = poly.d(), N = poly.N(), s = poly.s(), p = dom.taylor_order;
    if (fam.dim() != d || static_cast<int>(y_t.size()) != d || static_cast<int>(f.size()) != d)
        throw std::invalid_argument("approx_score: dimension mismatch");
    const double g = dom.gamma, sg = dom.sigma, Rs = dom.R_star;
    const double zcut = dom.c * std::sqrt(dom.L);
    const double pref = kInvSqrt2Pi / g;

    // Per-coordinate cell integrals J (density) and K (gradient) for n = 0..s.
    std::vector<int> vlo(d), vhi(d);
    std::vector<std::vector<double>> J(d), K(d);
    for (int i = 0; i < d; ++i) {
        const double w0 = y_t[i] - (1.0 - g) * f[i];
        const double centre = w0 / g, hw = sg * zcut / g;
        const double lo = std::max(-zcut, centre - hw), hi = std::min(zcut, centre + hw);
        if (lo >= hi) {
            vlo[i] = 1;
            vhi[i] = 0;
            continue;
        }
        vlo[i] = LocalPolynomial::y_cell(lo / Rs + 0.5, N);
        vhi[i] = LocalPolynomial::y_cell(hi / Rs + 0.5, N);
        const int ncell = vhi[i] - vlo[i] + 1;
        J[i].assign(static_cast<std::size_t>(ncell) * (s + 1), 0.0);
        K[i].assign(static_cast<std::size_t>(ncell) * (s + 1), 0.0);
        std::vector<double> Fhi(s + 2), Flo(s + 2);
        for (int v = vlo[i]; v <= vhi[i]; ++v) {
            const double A = std::max(Rs * ((v - 1.0) / N - 0.5), lo);
            const double B = std::min(Rs * (static_cast<double>(v) / N - 0.5), hi);
            if (A >= B) continue;
            const double z_lo = (w0 - g * B) / sg, z_hi = (w0 - g * A) / sg;
            for (int j = 0; j <= s + 1; ++j) {
                Fhi[j] = taylor_kernel_moment(j, p, z_hi);
                Flo[j] = taylor_kernel_moment(j, p, z_lo);
            }
            // local coordinate y~ - v/N = a + b z
            const double a = w0 / (g * Rs) + 0.5 - static_cast<double>(v) / N;
            const double b = -sg / (g * Rs);
            const std::size_t base = static_cast<std::size_t>(v - vlo[i]) * (s + 1);
            for (int n = 0; n <= s; ++n) {
                double jn = 0.0, kn = 0.0;
                for (int j = 0; j <= n; ++j) {
                    const double c = binom(n, j) * std::pow(a, n - j) * std::pow(b, j);
                    jn += c * (Fhi[j] - Flo[j]);
                    kn += c * (Fhi[j + 1] - Flo[j + 1]);
                }
                J[i][base + n] = pref * jn;
                K[i][base + n] = -pref * kn;
            }
        }
    }

    ScoreApproxParts out;
    out.h4.assign(d, 0.0);
    out.score.assign(d, 0.0);

    bool empty = false;
    for (int i = 0; i < d; ++i) empty = empty || vlo[i] > vhi[i];

    std::vector<std::vector<int>> ws(d);
    std::vector<std::vector<double>> psis(d);
    std::vector<double> ft(d);
    for (int j = 0; j < d; ++j) {
        ft[j] = f[j] / Rs + 0.5;
        LocalPolynomial::active_f_nodes(ft[j], N, ws[j], psis[j]);
        empty = empty || ws[j].empty();
    }

    if (!empty) {
        const auto& alphas = poly.alphas();
        std::vector<int> v = vlo, pick(d, 0), plo(d, 0), phi(d), w(d);
        for (int j = 0; j < d; ++j) phi[j] = static_cast<int>(ws[j].size()) - 1;
        std::vector<double> kprod(d);
        do {
            do {
                double weight = 1.0;
                for (int j = 0; j < d; ++j) {
                    w[j] = ws[j][pick[j]];
                    weight *= psis[j][pick[j]];
                }
                const auto coef = poly.coeffs(v, w);
                for (std::size_t a = 0; a < alphas.size(); ++a) {
                    double fpart = coef[a] * weight;
                    for (int j = 0; j < d; ++j)
                        fpart *= std::pow(ft[j] - static_cast<double>(w[j]) / N, alphas[a][d + j]);
                    if (fpart == 0.0) continue;
                    double jprod = 1.0;
                    for (int i = 0; i < d; ++i) {
                        const std::size_t idx =
                            static_cast<std::size_t>(v[i] - vlo[i]) * (s + 1) + alphas[a][i];
                        jprod *= J[i][idx];
                    }
                    out.h1 += fpart * jprod;
                    for (int k = 0; k < d; ++k) {
                        double kp = 1.0;
                        for (int i = 0; i < d; ++i) {
                            const std::size_t idx =
                                static_cast<std::size_t>(v[i] - vlo[i]) * (s + 1) + alphas[a][i];
                            kp *= (i == k ? K[i][idx] : J[i][idx]);
                        }
                        out.h4[k] += fpart * kp;
                    }
                }
            } while (next_index(pick, plo, phi));
        } while (next_index(v, vlo, vhi));
    }

    out.h1_clip = std::max(out.h1, dom.eps_low);
    out.cap = lemma3_cap(fam, dom, y_t, f);
    for (int k = 0; k < d; ++k)
        out.score[k] = std::clamp(out.h4[k] / (sg * out.h1_clip), -out.cap, out.cap);
    return out;
}

// ---- quadrature oracle ------------------------------------------------------

QuadratureOracle::QuadratureOracle(const ConditionalFamily& fam, double rel_tol, int max_depth)
    : fam_(fam), rel_tol_(rel_tol), max_depth_(max_depth) {
    if (fam.dim() != 1) throw std::invalid_argument("QuadratureOracle: only d = 1 is supported");
}

OracleValue QuadratureOracle::marginal(double y_t, double f, double gamma, double sigma) const {
    const auto [lo, hi] = fam_.support_window(f);
    return marginal_on(y_t, f, gamma, sigma, lo, hi);
}

OracleValue QuadratureOracle::marginal_on(double y_t, double f, double gamma, double sigma,
                                          double lo, double hi) const {
    if (!(sigma > 0.0) || !(gamma > 0.0))
        throw std::invalid_argument("QuadratureOracle: gamma and sigma must be positive");
    const double w0 = y_t - (1.0 - gamma) * f;
    const double centre = w0 / gamma, hw = 14.0 * sigma / gamma;
    const double a = std::max(lo, centre - hw), b = std::min(hi, centre + hw);
    OracleValue out;
    if (!(a < b)) return out;

    const auto& X = gl_nodes10();
    const auto& W = gl_weights10();
    auto panel = [&](double l, double r) {
        const double m = 0.5 * (l + r), h = 0.5 * (r - l);
        double q = 0.0, dq = 0.0;
        for (std::size_t k = 0; k < X.size(); ++k) {
            const double y0 = m + h * X[k];
            const double res = w0 - gamma * y0;
            const double kern = std_normal_pdf(res / sigma) / sigma;
            const double dens = fam_.density(std::span(&y0, 1), std::span(&f, 1));
            q += W[k] * dens * kern;
            dq += W[k] * dens * kern * (-res / (sigma * sigma));
        }
        return std::pair{h * q, h * dq};
    };

    // coarse pass fixes the absolute tolerance
    std::vector<double> cuts = {a, b};
    for (double c : {centre, f}) if (c > a && c < b) cuts.push_back(c);
    std::sort(cuts.begin(), cuts.end());
    double coarse_q = 0.0, coarse_dq = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const int m = 16;
        for (int k = 0; k < m; ++k) {
            const double l = cuts[i] + (cuts[i + 1] - cuts[i]) * k / m;
            const double r = cuts[i] + (cuts[i + 1] - cuts[i]) * (k + 1) / m;
            const auto [q, dq] = panel(l, r);
            coarse_q += q;
            coarse_dq += dq;
        }
    }
    const double tiny = std::numeric_limits<double>::min();
    const double tol_q = rel_tol_ * std::max(std::abs(coarse_q), tiny);
    const double tol_dq = rel_tol_ * std::max({std::abs(coarse_dq), std::abs(coarse_q) / sigma, tiny});

    bool ok = true;
    auto adapt = [&](auto&& self, double l, double r, std::pair<double, double> whole,
                     int depth) -> std::pair<double, double> {
        const double m = 0.5 * (l + r);
        const auto left = panel(l, m), right = panel(m, r);
        const double q = left.first + right.first, dq = left.second + right.second;
        if ((std::abs(q - whole.first) <= tol_q && std::abs(dq - whole.second) <= tol_dq) ||
            r - l < 1e-12) {
            return {q, dq};
        }
        if (depth >= max_depth_) {
            ok = false;
            return {q, dq};
        }
        const auto a1 = self(self, l, m, left, depth + 1);
        const auto a2 = self(self, m, r, right, depth + 1);
        return {a1.first + a2.first, a1.second + a2.second};
    };
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const int m = 16;
        for (int k = 0; k < m; ++k) {
            const double l = cuts[i] + (cuts[i + 1] - cuts[i]) * k / m;
            const double r = cuts[i] + (cuts[i + 1] - cuts[i]) * (k + 1) / m;
            const auto res = adapt(adapt, l, r, panel(l, r), 0);
            out.q += res.first;
            out.dq += res.second;
        }
    }
    out.converged = ok;
    return out;
}

// ---- checks -------------------------------------------------------------------

BoundsCheckResult density_bounds_check(const ConditionalFamily& fam, const QuadratureOracle& oracle,
                                       const TruncationDomains& dom, double f,
                                       const std::vector<double>& grid) {
    BoundsCheckResult r;
    const double inf = std::numeric_limits<double>::infinity();
    r.worst_lower_slack = r.worst_upper_slack = r.worst_score_slack = r.worst_grad_slack = inf;
    const std::span<const double> fs(&f, 1);
    for (double y : grid) {
        const auto o = oracle.marginal(y, f, dom.gamma, dom.sigma);
        if (!(o.q > 1e-280)) continue;
        const std::span<const double> ys(&y, 1);
        const double lower = lemma1_lower(fam, dom, ys, fs);
        const double upper = lemma1_upper(fam, dom, ys, fs);
        const double gradb = lemma2_grad_bound(fam, dom, ys, fs);
        const double cap = lemma3_cap(fam, dom, ys, fs);
        r.worst_lower_slack = std::min(r.worst_lower_slack, (o.q - lower) / o.q);
        r.worst_upper_slack = std::min(r.worst_upper_slack, (upper - o.q) / upper);
        r.worst_score_slack = std::min(r.worst_score_slack, (cap - std::abs(o.dq / o.q)) / cap);
        r.worst_grad_slack = std::min(r.worst_grad_slack, (gradb - std::abs(o.dq)) / gradb);
        ++r.points;
    }
    // quadrature noise tolerance
    const double tol = -1e-9;
    r.pass = r.points > 0 && r.worst_lower_slack >= tol && r.worst_upper_slack >= tol &&
             r.worst_score_slack >= tol;
    r.grad_pass = r.points > 0 && r.worst_grad_slack >= tol;
    return r;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("loglog_slope: need at least two matched points");
    double mx = 0, my = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]) / n;
        my += std::log(y[i]) / n;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

Theorem2Table theorem2_error(const ConditionalFamily& fam, const std::vector<int>& N_list, double t,
                             const Theorem2Options& opt) {
    if (fam.dim() != 1) throw std::invalid_argument("theorem2_error: only d = 1 is supported");
    if (N_list.empty()) throw std::invalid_argument("theorem2_error: empty N list");
    const double f = opt.f;
    const std::span<const double> fs(&f, 1);
    const auto dom0 = make_domains(fam, fs, opt.beta_bar, t, N_list.front(), opt.domain);

    // Oracle values on the composite Gauss-Legendre nodes over [-R, R], shared across N.
    const auto& X = gl_nodes10();
    const auto& W = gl_weights10();
    const double lo = f - dom0.R, hi = f + dom0.R;
    const double h = (hi - lo) / opt.panels;
    std::vector<double> nodes, weights, q, score;
    QuadratureOracle oracle(fam);
    for (int k = 0; k < opt.panels; ++k) {
        const double m = lo + (k + 0.5) * h;
        for (std::size_t i = 0; i < X.size(); ++i) {
            const double y = m + 0.5 * h * X[i];
            const auto o = oracle.marginal(y, f, dom0.gamma, dom0.sigma);
            nodes.push_back(y);
            weights.push_back(0.5 * h * W[i]);
            q.push_back(o.q);
            score.push_back(o.q > 0.0 ? o.dq / o.q : 0.0);
        }
    }

    Theorem2Table table;
    std::vector<double> xs, es;
    for (int N : N_list) {
        const auto dom = make_domains(fam, fs, opt.beta_bar, t, N, opt.domain);
        const auto poly = build_local_polynomial(fam, dom.R_star, N, opt.domain.s);
        double err = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const auto sa = approx_score(poly, fam, dom, std::span(&nodes[i], 1), fs);
            const double diff = sa.score[0] - score[i];
            err += weights[i] * diff * diff * q[i];
        }
        table.rows.push_back({N, t, err, dom.eps_low, dom.taylor_order});
        xs.push_back(N);
        es.push_back(err);
    }
    table.slope = xs.size() >= 2 ? loglog_slope(xs, es) : 0.0;
    return table;
}

}  // namespace cardlab
