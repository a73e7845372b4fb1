#include <doctest.h>

#include <cmath>

#include "cardlab/bounds.hpp"
#include "cardlab/datasets.hpp"
#include "cardlab/transport.hpp"
#include "stats.hpp"

using namespace cardlab;

namespace {

ScalarFn const_fn(double v) {
    return [v](double) { return v; };
}

// Composite Simpson on [0, 1] with many panels, independent of the trapezoid
// grids used by the library.
template <class F>
double simpson01(F&& g, int panels = 20000) {
    const double h = 1.0 / panels;
    double s = g(0.0) + g(1.0);
    for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * g(i * h);
    return s * h / 3.0;
}

BoundInputs schedule_inputs(const NoiseSchedule& s) {
    BoundInputs in;
    in.est.beta = [&s](double tau) { return s.beta_cont(tau); };
    in.n_grid = 201;
    return in;
}

}  // namespace

TEST_CASE("M factor: empty integral, closed form, monotone") {
    LipschitzEstimates est;
    est.beta = const_fn(1.4);
    CHECK(m_factor(est, 0.0) == 1.0);
    for (double t : {0.1, 0.5, 1.0})
        CHECK(std::abs(m_factor(est, t, 200) - std::exp(0.7 * t)) <= 1e-6);

    // Piecewise-linear schedule rate against its exact integral.
    auto s = schedule_new(20);
    est.beta = [&s](double tau) { return s.beta_cont(tau); };
    CHECK(std::abs(m_factor(est, 1.0, 201) - std::exp(0.5 * s.beta_integral(1.0))) <= 1e-6);

    est.l2 = [](double tau) { return 0.3 + 0.2 * std::sin(5 * tau); };
    auto M = m_curve(est, 101);
    CHECK(M.front() == 1.0);
    for (std::size_t i = 1; i < M.size(); ++i) CHECK(M[i] >= M[i - 1]);
    CHECK(M.back() == doctest::Approx(m_factor(est, 1.0, 101)).epsilon(1e-12));

    est.l2 = const_fn(1e6);
    est.l2_max = 50.0;
    CHECK(est.l2_at(0.3) == 50.0);
}

TEST_CASE("l2 estimate: linear and constant scores") {
    auto s = schedule_new(20);
    auto data = make_moons(200, 0.05, 1);
    std::vector<Vec2> fk{{0.1, 0.2}, {0.3, -0.1}};
    Rng rng(3);
    for (double a : {-2.0, 0.0, 0.7}) {
        Score2 lin = [a](const Vec2& y, const Vec2&, int) { return Vec2{a * y[0], a * y[1]}; };
        CHECK(estimate_l2(lin, s, data, fk, 10, 64, rng) == doctest::Approx(a).epsilon(1e-12));
    }
    Score2 cst = [](const Vec2&, const Vec2&, int) { return Vec2{4.0, -1.0}; };
    CHECK(estimate_l2(cst, s, data, fk, 10, 64, rng) == 0.0);
    Score2 steep = [](const Vec2& y, const Vec2&, int) { return Vec2{1e4 * y[0], 1e4 * y[1]}; };
    CHECK(estimate_l2(steep, s, data, fk, 10, 8, rng, 50.0) == 50.0);
    CHECK_THROWS(estimate_l2(cst, s, data, fk, 10, 0, rng));
}

TEST_CASE("H estimate: exact conditional score gives zero") {
    auto s = schedule_new(20);
    const Vec2 c{0.3, -0.6}, f{0.1, 0.1};
    std::vector<LabeledSample> data(10, LabeledSample{c, 0});
    // With a single data point the conditional score is a function of y alone.
    Score2 exact = [&](const Vec2& y, const Vec2& ff, int t) {
        auto m = forward_mean(s, c, ff, t);
        const double v = 1.0 - s.alpha_bar[static_cast<std::size_t>(t)];
        return Vec2{-(y[0] - m[0]) / v, -(y[1] - m[1]) / v};
    };
    Rng rng(5);
    for (int t : {1, 7, 20}) {
        auto h = estimate_H(exact, s, data, {f}, t, 500, rng);
        CHECK(h.surrogate <= 1e-20 * 500);
        CHECK(h.surrogate >= 0.0);
    }
}

TEST_CASE("H estimate: marginal score on gaussian data matches the variance gap") {
    auto s = schedule_new(20);
    const double v0 = 0.1;
    auto data = make_gaussian(100000, 8);
    const Vec2 f{0.0, 0.0};
    const int t = 10;
    const double ab = s.alpha_bar[t], sab = std::sqrt(ab), sd = std::sqrt(1 - ab);
    const double vt = ab * v0 + 1 - ab;
    Score2 marg = [&](const Vec2& y, const Vec2&, int) { return Vec2{-y[0] / vt, -y[1] / vt}; };
    Rng rng(9);
    auto h = estimate_H(marg, s, data, {f}, t, 40000, rng, v0);
    REQUIRE(h.marginal.has_value());
    CHECK(*h.marginal < 1e-20);

    // Quadrature oracle of E[(s_marg(y_t) + eps/sd)^2] over (y0, eps), per
    // coordinate, on a tensor midpoint grid.
    const int n = 600;
    const double L = 8.0;
    double per_dim = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = -L + (i + 0.5) * 2 * L / n;  // y0 / sqrt(v0)
        for (int j = 0; j < n; ++j) {
            const double e = -L + (j + 0.5) * 2 * L / n;
            const double y = sab * std::sqrt(v0) * u + sd * e;
            const double r = -y / vt + e / sd;
            per_dim += r * r * std::exp(-0.5 * (u * u + e * e));
        }
    }
    per_dim *= (2 * L / n) * (2 * L / n) / (2 * M_PI);
    const double oracle = 2.0 * per_dim;
    CHECK(std::abs(oracle - 2.0 * (1.0 / (sd * sd) - 1.0 / vt)) <= 1e-6 * oracle);
    CHECK(std::abs(h.surrogate - oracle) <= 3.0 * h.surrogate_se);
}

TEST_CASE("L1 hat: zero, schedule integral, bad lambda") {
    auto s = schedule_new(20);
    auto in = schedule_inputs(s);
    in.H = const_fn(0.0);
    CHECK(loss_L1_hat(in) == 0.0);
    in.H = const_fn(1.0);
    CHECK(std::abs(loss_L1_hat(in) - 0.5 * s.beta_integral(1.0)) <= 1e-8);
    in.lambda = const_fn(-1.0);
    CHECK_THROWS(loss_L1_hat(in));
}

TEST_CASE("bound right-hand sides: zero cases, scaling, ordering") {
    auto s = schedule_new(20);
    auto in = schedule_inputs(s);
    in.est.l2 = [](double tau) { return 2.0 - 3.0 * tau; };
    in.H = const_fn(0.0);
    in.W2_T = 0.0;
    CHECK(theorem1_rhs(in) == 0.0);
    CHECK(corollary1_rhs(in, 0.0) == 0.0);

    in.W2_T = 0.37;
    const double M1 = m_curve(in.est, in.n_grid).back();
    CHECK(theorem1_rhs(in) == doctest::Approx(M1 * 0.37).epsilon(1e-14));

    // Cauchy-Schwarz: cor1 >= thm1 for arbitrary nonnegative H.
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const double a = rng.uniform(0, 5), b = rng.uniform(0, 20), c = rng.uniform(0, 3);
        in.H = [=](double tau) { return a + b * tau * tau + c * std::sin(7 * tau) * std::sin(7 * tau); };
        in.W2_T = rng.uniform(0, 1);
        CHECK(corollary1_rhs(in, loss_L1_hat(in)) >= theorem1_rhs(in) - 1e-12);
    }

    // lambda = 2 beta halves the integral relative to lambda = beta.
    LipschitzEstimates est = in.est;
    auto M2 = [&](double tau) { return std::exp(2.0 * std::log(m_factor(est, tau, 2001))); };
    const double ref = simpson01([&](double tau) { return s.beta_cont(tau) * M2(tau); }, 2000);
    CHECK(std::abs(corollary1_integral(in) - ref) / ref <= 1e-3);
    in.lambda = [&s](double tau) { return 2.0 * s.beta_cont(tau); };
    CHECK(std::abs(corollary1_integral(in) - 0.5 * ref) / ref <= 1e-3);
    CHECK_THROWS(corollary1_rhs(in, -1.0));
}

TEST_CASE("log bound points: shared intercept, slope one half, on-line case") {
    std::vector<BoundReport> reps(3);
    const double icpt = 0.8;
    for (std::size_t k = 0; k < reps.size(); ++k) {
        reps[k].intercept = icpt;
        reps[k].L1_hat = 0.5 * std::pow(0.3, static_cast<double>(k));
        reps[k].W2_emp = std::exp(icpt + 0.5 * std::log(reps[k].L1_hat));
    }
    reps.push_back(BoundReport{});
    reps.back().intercept = icpt;
    auto pts = log_bound_points(reps);
    CHECK_FALSE(pts.back().valid);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(pts[k].valid);
        CHECK(pts[k].intercept == icpt);
        CHECK(std::abs(pts[k].log_W2 - pts[k].log_rhs) <= 1e-12);
    }
    const double slope = (pts[2].log_rhs - pts[0].log_rhs) / (pts[2].log_L1 - pts[0].log_L1);
    CHECK(slope == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("spearman rank correlation") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4, 5}, {1, 8, 27, 64, 125}) == doctest::Approx(1.0));
    // Ties take average ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3).
    CHECK(spearman({5, 5, 7}, {1, 2, 3}) == doctest::Approx(std::sqrt(0.75)).epsilon(1e-12));
    CHECK_THROWS(spearman({1}, {1}));
}

TEST_CASE("product curve with the exact score stays at the sampling floor") {
    // Noise-complete schedule so that p_T = N(f, I) really is q_T.
    auto s = schedule_new(50, 1e-4, 0.2);
    const double v0 = 0.1;
    auto data = make_gaussian(500, 21);
    const std::vector<Vec2> fk{{0.0, 0.0}};
    EpsFn exact = [&](const Vec2& y, const Vec2&, int t) {
        const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
        const double vt = ab * v0 + 1 - ab, sd = std::sqrt(1 - ab);
        return Vec2{sd * y[0] / vt, sd * y[1] / vt};
    };
    LipschitzEstimates est;
    est.beta = [&s](double tau) { return s.beta_cont(tau); };
    std::vector<int> steps;
    for (int t = 1; t <= 50; ++t) steps.push_back(t);
    Rng rng(2);
    auto curve = product_curve(s, exact, data, fk, est, steps, rng);
    REQUIRE(curve.size() == 50);

    // Floor: W2 between q_t pushed from the data and from a fresh draw of the
    // same population, which is what the sampler targets.
    auto fresh = make_gaussian(500, 22);
    for (const auto& p : curve) {
        Rng r1(1000 + static_cast<std::uint64_t>(p.step)), r2(2000 + static_cast<std::uint64_t>(p.step));
        std::vector<Vec2> a(500), b(500);
        for (std::size_t i = 0; i < 500; ++i) {
            a[i] = forward_marginal_sample(s, data[i].y0, fk[0], p.step, r1).y_t;
            b[i] = forward_marginal_sample(s, fresh[i].y0, fk[0], p.step, r2).y_t;
        }
        const double floor = w2_exact(EmpiricalMeasure::from(a), EmpiricalMeasure::from(b)).distance;
        INFO("step " << p.step << " W2 " << p.W2 << " floor " << floor);
        CHECK(p.W2 <= 1.5 * floor);
        CHECK(p.value == doctest::Approx(p.M * p.W2));
    }
}

TEST_CASE("trained checkpoint: dominance, grid refinement, l2 stability") {
    auto s = schedule_new(20);
    auto data = make_moons(512, 0.05, 3);
    PretrainOptions popt;
    popt.epochs = 100;
    popt.lr = 1e-3;
    auto pre = pretrain_cond_mean(data, 2, popt);
    CardModel m = make_card_model(pre.net, s, 2, 4);
    TrainOptions opt;
    opt.epochs = 200;
    opt.lr = 1e-3;
    opt.checkpoint_stride = 0;
    train_card(m, data, opt);

    BoundConfig cfg;
    cfg.n_w2 = 200;
    cfg.n_mc = 1000;
    cfg.n_pairs = 1024;
    auto rep = evaluate_checkpoint(m, data, 200, cfg);
    CHECK(rep.rhs_cor1 >= rep.rhs_thm1);
    CHECK(rep.H_hat.size() == 20);
    CHECK(rep.W2_emp >= 0.0);
    for (double h : rep.H_hat) CHECK(h >= 0.0);

    BoundInputs in = schedule_inputs(s);
    in.est.l2 = StepFunction{rep.l2_hat};
    in.H = StepFunction{rep.H_hat};
    in.W2_T = rep.W2_T;
    in.n_grid = 200;
    const double coarse = theorem1_rhs(in);
    in.n_grid = 400;
    const double fine = theorem1_rhs(in);
    CHECK(std::abs(fine - coarse) <= 0.01 * fine);

    const auto fk = class_means(m);
    Rng r1(100), r2(200);
    const double a = estimate_l2(score_fn_of(m), s, data, fk, 10, 2048, r1);
    const double b = estimate_l2(score_fn_of(m), s, data, fk, 10, 2048, r2);
    MESSAGE("l2 at t=10 under two seeds: " << a << ", " << b);
    CHECK(std::abs(a - b) <= 0.1 * std::max(std::abs(a), std::abs(b)));
}
