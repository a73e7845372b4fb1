#include "cardlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace cardlab {

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_step(const NoiseSchedule& s, int t, int lo) {
    if (t < lo || t > s.T)
        throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [" +
                                std::to_string(lo) + ", " + std::to_string(s.T) + "]");
}

}  // namespace

NoiseSchedule schedule_new(int T, double beta_min, double beta_max) {
    if (T < 1) throw std::invalid_argument("schedule_new: T must be >= 1");
    if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
        throw std::invalid_argument("schedule_new: need 0 < beta_min < beta_max < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        // One-point grid sits at the midpoint of [-6, 6].
        const double l = T == 1 ? 0.0 : -6.0 + 12.0 * static_cast<double>(t - 1) / (T - 1);
        const auto i = static_cast<std::size_t>(t);
        s.beta[i] = beta_min + (beta_max - beta_min) * logistic(l);
        s.alpha[i] = 1.0 - s.beta[i];
        s.alpha_bar[i] = s.alpha_bar[i - 1] * s.alpha[i];
    }
    return s;
}

double NoiseSchedule::beta_cont(double tau) const {
    const double Td = static_cast<double>(T);
    if (tau <= 1.0 / Td) return Td * beta[1];
    if (tau >= 1.0) return Td * beta[static_cast<std::size_t>(T)];
    const double pos = tau * Td;  // in (1, T)
    const auto k = static_cast<std::size_t>(std::floor(pos));
    const double w = pos - static_cast<double>(k);
    return Td * ((1.0 - w) * beta[k] + w * beta[std::min<std::size_t>(k + 1, beta.size() - 1)]);
}

double NoiseSchedule::beta_integral(double tau) const {
    if (tau <= 0.0) return 0.0;
    const double Td = static_cast<double>(T);
    const double h = 1.0 / Td;
    double acc = std::min(tau, h) * Td * beta[1];
    for (int k = 1; k < T; ++k) {
        const double a = k * h;
        if (tau <= a) break;
        const double b = std::min(tau, a + h);
        acc += 0.5 * (b - a) * (beta_cont(a) + beta_cont(b));
    }
    if (tau > 1.0) acc += (tau - 1.0) * Td * beta[static_cast<std::size_t>(T)];
    return acc;
}

double gamma_const(double beta_bar, double t) { return std::exp(-0.5 * beta_bar * t); }
double sigma_const(double beta_bar, double t) { return std::sqrt(-std::expm1(-beta_bar * t)); }

Vec2 forward_mean(const NoiseSchedule& s, const Vec2& y0, const Vec2& f, int t) {
    check_step(s, t, 0);
    const double g = std::sqrt(s.alpha_bar[static_cast<std::size_t>(t)]);
    return {g * y0[0] + (1.0 - g) * f[0], g * y0[1] + (1.0 - g) * f[1]};
}

ForwardDraw forward_marginal_sample(const NoiseSchedule& s, const Vec2& y0, const Vec2& f, int t,
                                    Rng& rng) {
    check_step(s, t, 0);
    ForwardDraw d;
    d.eps = {rng.normal(), rng.normal()};
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const double sd = std::sqrt(1.0 - ab);
    const Vec2 m = forward_mean(s, y0, f, t);
    d.y_t = {m[0] + sd * d.eps[0], m[1] + sd * d.eps[1]};
    return d;
}

PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t) {
    check_step(s, t, 1);
    const auto i = static_cast<std::size_t>(t);
    const double ab = s.alpha_bar[i], abp = s.alpha_bar[i - 1];
    const double b = s.beta[i], a = s.alpha[i];
    const double den = 1.0 - ab;
    PosteriorCoeffs c;
    c.c_y0 = b * std::sqrt(abp) / den;
    c.c_yt = (1.0 - abp) * std::sqrt(a) / den;
    c.c_f = 1.0 + (std::sqrt(ab) - 1.0) * (std::sqrt(a) + std::sqrt(abp)) / den;
    c.beta_tilde = (1.0 - abp) * b / den;
    return c;
}

PosteriorMean posterior_mean(const NoiseSchedule& s, const Vec2& y_t, const Vec2& y0,
                             const Vec2& f, int t) {
    const auto c = posterior_coeffs(s, t);
    PosteriorMean pm;
    for (std::size_t k = 0; k < 2; ++k) pm.mean[k] = c.c_y0 * y0[k] + c.c_yt * y_t[k] + c.c_f * f[k];
    pm.beta_tilde = c.beta_tilde;
    return pm;
}

Vec2 score_from_eps(const NoiseSchedule& s, const Vec2& eps_hat, int t) {
    check_step(s, t, 1);
    const double sd = std::sqrt(1.0 - s.alpha_bar[static_cast<std::size_t>(t)]);
    return {-eps_hat[0] / sd, -eps_hat[1] / sd};
}

Vec2 CardModel::cond_mean(int x) const {
    const auto out = forward(f_net, one_hot(x, n_classes));
    return {out[0], out[1]};
}

Vec2 CardModel::predict_eps(const Vec2& y_t, const Vec2& f, int t) const {
    const double in[5] = {y_t[0], y_t[1], f[0], f[1],
                          static_cast<double>(t) / static_cast<double>(schedule.T)};
    const auto out = forward(eps_net, in);
    return {out[0], out[1]};
}

std::string CardModel::to_json() const {
    nlohmann::json j;
    j["schema"] = "cardlab.card/1";
    j["schedule"] = {{"T", schedule.T}, {"beta_min", schedule.beta_min}, {"beta_max", schedule.beta_max}};
    j["n_classes"] = n_classes;
    j["f_net"] = nlohmann::json::parse(f_net.to_json());
    j["eps_net"] = nlohmann::json::parse(eps_net.to_json());
    return j.dump();
}

CardModel CardModel::from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("card checkpoint: ") + e.what());
    }
    if (!j.contains("schema") || j["schema"] != "cardlab.card/1")
        throw std::runtime_error("card checkpoint: missing or unsupported schema tag");
    CardModel m;
    try {
        const auto& sc = j.at("schedule");
        m.schedule = schedule_new(sc.at("T").get<int>(), sc.at("beta_min").get<double>(),
                                  sc.at("beta_max").get<double>());
        m.n_classes = j.at("n_classes").get<int>();
        m.f_net = DenseNet::from_json(j.at("f_net").dump());
        m.eps_net = DenseNet::from_json(j.at("eps_net").dump());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("card checkpoint: ") + e.what());
    }
    if (m.eps_net.input_dim() != 5 || m.eps_net.output_dim() != 2 ||
        m.f_net.input_dim() != static_cast<std::size_t>(m.n_classes) || m.f_net.output_dim() != 2)
        throw std::runtime_error("card checkpoint: network dimensions inconsistent");
    return m;
}

DenseNet make_eps_net(std::uint64_t seed) {
    return DenseNet({5, 64, 64, 64, 2},
                    {Activation::Softplus, Activation::Softplus, Activation::Softplus,
                     Activation::Identity},
                    seed);
}

CardModel make_card_model(DenseNet f_net, const NoiseSchedule& schedule, int n_classes,
                          std::uint64_t seed) {
    CardModel m;
    m.f_net = std::move(f_net);
    m.eps_net = make_eps_net(seed);
    m.schedule = schedule;
    m.n_classes = n_classes;
    if (m.f_net.input_dim() != static_cast<std::size_t>(n_classes) || m.f_net.output_dim() != 2)
        throw std::invalid_argument("make_card_model: f_net shape does not match n_classes");
    return m;
}

EpsFn eps_fn_of(const CardModel& m) {
    return [&m](const Vec2& y, const Vec2& f, int t) { return m.predict_eps(y, f, t); };
}

const std::vector<Vec2>& Trajectory::at_step(int t) const {
    for (std::size_t k = 0; k < step.size(); ++k)
        if (step[k] == t) return clouds[k];
    throw std::out_of_range("trajectory has no step " + std::to_string(t));
}

Trajectory reverse_sample(const NoiseSchedule& s, const EpsFn& eps, const std::vector<Vec2>& f,
                          Rng& rng, int stop_step) {
    if (stop_step < 0 || stop_step > s.T) throw std::out_of_range("reverse_sample: bad stop step");
    const std::size_t n = f.size();
    Trajectory tr;
    std::vector<Vec2> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = {f[i][0] + rng.normal(), f[i][1] + rng.normal()};
    tr.step.push_back(s.T);
    tr.clouds.push_back(y);
    for (int t = s.T; t > stop_step; --t) {
        const auto ti = static_cast<std::size_t>(t);
        const double ab = s.alpha_bar[ti];
        const double sab = std::sqrt(ab), sd = std::sqrt(1.0 - ab);
        const PosteriorCoeffs c = t >= 2 ? posterior_coeffs(s, t) : PosteriorCoeffs{};
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 e = eps(y[i], f[i], t);
            Vec2 y0hat;
            for (std::size_t k = 0; k < 2; ++k)
                y0hat[k] = (y[i][k] - (1.0 - sab) * f[i][k] - sd * e[k]) / sab;
            if (t == 1) {
                y[i] = y0hat;
            } else {
                const double z0 = rng.normal(), z1 = rng.normal();
                const double sb = std::sqrt(c.beta_tilde);
                const Vec2 prev = y[i];
                y[i][0] = c.c_y0 * y0hat[0] + c.c_yt * prev[0] + c.c_f * f[i][0] + sb * z0;
                y[i][1] = c.c_y0 * y0hat[1] + c.c_yt * prev[1] + c.c_f * f[i][1] + sb * z1;
            }
            if (!std::isfinite(y[i][0]) || !std::isfinite(y[i][1]))
                throw std::runtime_error("reverse_sample: non-finite value at step " + std::to_string(t));
        }
        tr.step.push_back(t - 1);
        tr.clouds.push_back(y);
    }
    return tr;
}

Trajectory reverse_sample(const CardModel& m, const std::vector<int>& xs, Rng& rng, int stop_step) {
    std::vector<Vec2> per_class(static_cast<std::size_t>(m.n_classes));
    for (int k = 0; k < m.n_classes; ++k) per_class[static_cast<std::size_t>(k)] = m.cond_mean(k);
    std::vector<Vec2> f(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) f[i] = per_class.at(static_cast<std::size_t>(xs[i]));
    return reverse_sample(m.schedule, eps_fn_of(m), f, rng, stop_step);
}

Trajectory reverse_sample(const CardModel& m, int x, std::size_t n, Rng& rng) {
    return reverse_sample(m, std::vector<int>(n, x), rng, 0);
}

void sde_forward_step(std::span<double> y, std::span<const double> f, const BetaFn& beta, double t,
                      double dt, Rng& rng) {
    if (!(dt > 0.0)) throw std::invalid_argument("sde_forward_step: dt must be > 0");
    const double b = beta(t);
    const double sd = std::sqrt(b * dt);
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double z = rng.normal();
        y[k] += -0.5 * b * (y[k] - f[k]) * dt + sd * z;
    }
}

void sde_reverse_step(std::span<double> y, std::span<const double> f, const ScoreFn& score,
                      const BetaFn& beta, double t, double dt, Rng& rng) {
    if (!(dt > 0.0)) throw std::invalid_argument("sde_reverse_step: dt must be > 0");
    const double b = beta(t);
    const double sd = std::sqrt(b * dt);
    double sbuf[8];
    std::vector<double> sheap;
    std::span<double> s;
    if (y.size() <= 8) {
        s = std::span<double>(sbuf, y.size());
    } else {
        sheap.resize(y.size());
        s = sheap;
    }
    score(y, f, t, s);
    // dy = -[(y - f)/2 + s] beta dt with dt < 0 (Anderson's reverse-time drift).
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double z = rng.normal();
        y[k] += (0.5 * (y[k] - f[k]) + s[k]) * b * dt + sd * z;
    }
}

void ode_flow_step(std::span<double> y, std::span<const double> f, const ScoreFn& score,
                   const BetaFn& beta, double t, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("ode_flow_step: dt must be > 0");
    const std::size_t d = y.size();
    std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d), s(d);
    auto rhs = [&](std::span<const double> yy, double tt, std::vector<double>& out) {
        const double b = beta(tt);
        score(yy, f, tt, s);
        for (std::size_t k = 0; k < d; ++k) out[k] = -0.5 * b * (yy[k] - f[k]) - 0.5 * b * s[k];
    };
    rhs(y, t, k1);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = y[k] + 0.5 * dt * k1[k];
    rhs(tmp, t + 0.5 * dt, k2);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = y[k] + 0.5 * dt * k2[k];
    rhs(tmp, t + 0.5 * dt, k3);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = y[k] + dt * k3[k];
    rhs(tmp, t + dt, k4);
    for (std::size_t k = 0; k < d; ++k) y[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
}

bool is_checkpoint_epoch(const TrainOptions& opt, std::size_t epoch) {
    if (epoch == 0 || epoch == opt.epochs) return true;
    if (opt.checkpoint_stride > 0 && epoch % opt.checkpoint_stride == 0) return true;
    return std::find(opt.checkpoint_epochs.begin(), opt.checkpoint_epochs.end(), epoch) !=
           opt.checkpoint_epochs.end();
}

TrainResult train_card(CardModel& model, const std::vector<LabeledSample>& samples,
                       const TrainOptions& opt) {
    if (opt.batch == 0) throw std::invalid_argument("train_card: batch must be >= 1");
    TrainResult res;
    auto snapshot = [&](std::size_t ep) {
        res.checkpoint_epochs.push_back(ep);
        res.checkpoints.push_back(model.eps_net);
        if (opt.on_checkpoint) opt.on_checkpoint(ep, model);
    };
    if (opt.epochs == 0) return res;
    if (samples.empty()) throw std::invalid_argument("train_card: no samples");

    std::vector<Vec2> fk(static_cast<std::size_t>(model.n_classes));
    for (int k = 0; k < model.n_classes; ++k) fk[static_cast<std::size_t>(k)] = model.cond_mean(k);

    const NoiseSchedule& s = model.schedule;
    AdamState adam(model.eps_net, opt.lr);
    Gradients acc;
    ForwardCache cache;
    const std::size_t n = samples.size();
    snapshot(0);
    for (std::size_t ep = 0; ep < opt.epochs; ++ep) {
        const auto order = epoch_permutation(n, opt.seed, ep);
        Rng rng = Rng::stream(opt.seed ^ 0xca4dULL, ep);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += opt.batch) {
            const std::size_t stop = std::min(n, start + opt.batch);
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            acc.reset(model.eps_net);
            for (std::size_t k = start; k < stop; ++k) {
                const auto& smp = samples[order[k]];
                const Vec2& f = fk.at(static_cast<std::size_t>(smp.x));
                const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
                const ForwardDraw d = forward_marginal_sample(s, smp.y0, f, t, rng);
                const double in[5] = {d.y_t[0], d.y_t[1], f[0], f[1],
                                      static_cast<double>(t) / static_cast<double>(s.T)};
                const auto out = forward(model.eps_net, in, &cache);
                const double r0 = out[0] - d.eps[0], r1 = out[1] - d.eps[1];
                epoch_loss += r0 * r0 + r1 * r1;
                const double g[2] = {2.0 * r0 * inv_b, 2.0 * r1 * inv_b};
                backward_accumulate(model.eps_net, cache, g, acc);
            }
            adam_step(model.eps_net, adam, acc.params);
        }
        epoch_loss /= static_cast<double>(n);
        if (!std::isfinite(epoch_loss))
            throw DivergenceError("train_card: non-finite loss at epoch " + std::to_string(ep + 1));
        res.loss.push_back(epoch_loss);
        if (is_checkpoint_epoch(opt, ep + 1)) snapshot(ep + 1);
    }
    return res;
}

}  // namespace cardlab
