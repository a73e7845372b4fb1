#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cardlab/datasets.hpp"
#include "cardlab/nn.hpp"
#include "cardlab/rng.hpp"

namespace cardlab {

// Discrete schedule with the t = 0 convention stored at index 0
// (beta[0] = 0, alpha_bar[0] = 1), so beta[t] is beta_t for t = 1..T.
struct NoiseSchedule {
    int T = 0;
    double beta_min = 0.0;
    double beta_max = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    // Continuous rate on [0, 1]: beta(t/T) = T * beta_t at the nodes t/T,
    // linear in between and held at T * beta_1 on [0, 1/T].
    double beta_cont(double tau) const;
    // Exact integral of beta_cont over [0, tau].
    double beta_integral(double tau) const;
};

NoiseSchedule schedule_new(int T, double beta_min = 1e-5, double beta_max = 1e-2);

// Constant-rate Gaussian representation used by the appendix machinery.
double gamma_const(double beta_bar, double t);
double sigma_const(double beta_bar, double t);

struct ForwardDraw {
    Vec2 y_t{};
    Vec2 eps{};
};

Vec2 forward_mean(const NoiseSchedule& s, const Vec2& y0, const Vec2& f, int t);
ForwardDraw forward_marginal_sample(const NoiseSchedule& s, const Vec2& y0, const Vec2& f, int t,
                                    Rng& rng);

struct PosteriorMean {
    Vec2 mean{};
    double beta_tilde = 0.0;
};

struct PosteriorCoeffs {
    double c_y0 = 0.0, c_yt = 0.0, c_f = 0.0;
    double beta_tilde = 0.0;
};

PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t);
PosteriorMean posterior_mean(const NoiseSchedule& s, const Vec2& y_t, const Vec2& y0,
                             const Vec2& f, int t);

// s = -eps_hat / sqrt(1 - alpha_bar_t)
Vec2 score_from_eps(const NoiseSchedule& s, const Vec2& eps_hat, int t);

struct CardModel {
    DenseNet f_net;
    DenseNet eps_net;
    NoiseSchedule schedule;
    int n_classes = 1;

    Vec2 cond_mean(int x) const;
    Vec2 predict_eps(const Vec2& y_t, const Vec2& f, int t) const;

    std::string to_json() const;
    static CardModel from_json(std::string_view text);
};

// eps_theta: (y_t, f, t/T) -> 64 -> 64 -> 64 softplus -> 2 identity.
DenseNet make_eps_net(std::uint64_t seed);
CardModel make_card_model(DenseNet f_net, const NoiseSchedule& schedule, int n_classes,
                          std::uint64_t seed);

// Noise predictor used by the reverse chain. Lets tests plug in oracles.
using EpsFn = std::function<Vec2(const Vec2& y_t, const Vec2& f, int t)>;
EpsFn eps_fn_of(const CardModel& m);

// steps[k] holds the cloud at diffusion step T - k, so steps.front() is y_T
// and steps.back() is the last step reached (y_0 when stop_step = 0).
struct Trajectory {
    std::vector<int> step;
    std::vector<std::vector<Vec2>> clouds;

    const std::vector<Vec2>& at_step(int t) const;
};

// One chain per entry of `f`. Runs from y_T ~ N(f, I) down to stop_step.
Trajectory reverse_sample(const NoiseSchedule& s, const EpsFn& eps, const std::vector<Vec2>& f,
                          Rng& rng, int stop_step = 0);
Trajectory reverse_sample(const CardModel& m, int x, std::size_t n, Rng& rng);
// One chain per class label in xs.
Trajectory reverse_sample(const CardModel& m, const std::vector<int>& xs, Rng& rng,
                          int stop_step = 0);

// Continuous-time pieces (dimension-generic). Scores write into `out`.
using BetaFn = std::function<double(double)>;
using ScoreFn = std::function<void(std::span<const double> y, std::span<const double> f,
                                   double t, std::span<double> out)>;

void sde_forward_step(std::span<double> y, std::span<const double> f, const BetaFn& beta, double t,
                      double dt, Rng& rng);
// Moves from time t to t - dt along the reverse-time SDE.
void sde_reverse_step(std::span<double> y, std::span<const double> f, const ScoreFn& score,
                      const BetaFn& beta, double t, double dt, Rng& rng);
// One RK4 step of the probability-flow ODE from t to t + dt.
void ode_flow_step(std::span<double> y, std::span<const double> f, const ScoreFn& score,
                   const BetaFn& beta, double t, double dt);

struct TrainOptions {
    std::size_t epochs = 2000;
    std::size_t batch = 128;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    std::size_t checkpoint_stride = 100;  // 0 disables intermediate checkpoints
    // Explicit checkpoint epochs, merged with the stride schedule.
    std::vector<std::size_t> checkpoint_epochs;
    // Receives (epoch, model); epoch 0 is the untrained model.
    std::function<void(std::size_t, const CardModel&)> on_checkpoint;
};

struct TrainResult {
    std::vector<double> loss;  // mean ||eps_hat - eps||^2 per epoch
    std::vector<std::size_t> checkpoint_epochs;
    std::vector<DenseNet> checkpoints;  // eps_net snapshots
};

bool is_checkpoint_epoch(const TrainOptions& opt, std::size_t epoch);
TrainResult train_card(CardModel& model, const std::vector<LabeledSample>& samples,
                       const TrainOptions& opt);

}  // namespace cardlab
