#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cardlab/rng.hpp"
#include "cardlab/transport.hpp"

namespace cardlab::cli {

namespace fs = std::filesystem;

std::uint64_t stage_seed(const ExperimentConfig& cfg, DatasetKind kind, Stage stage) {
    const auto k = static_cast<std::uint64_t>(kind);
    return Rng::stream(cfg.seed, 16 * k + static_cast<std::uint64_t>(stage)).next_u64();
}

NoiseSchedule make_schedule(const ExperimentConfig& cfg) {
    return schedule_new(static_cast<int>(cfg.T), cfg.beta_min, cfg.beta_max);
}

std::vector<LabeledSample> make_training_data(const ExperimentConfig& cfg, DatasetKind kind) {
    DatasetSpec spec;
    spec.kind = kind;
    spec.n = static_cast<std::size_t>(cfg.n_train);
    spec.noise_sd = cfg.noise_sd;
    spec.inner_factor = cfg.inner_factor;
    spec.seed = stage_seed(cfg, kind, Stage::Data);
    return make_dataset(spec);
}

PretrainResult run_pretrain(const ExperimentConfig& cfg, DatasetKind kind,
                            const std::vector<LabeledSample>& data) {
    PretrainOptions opt;
    opt.epochs = static_cast<std::size_t>(cfg.pretrain_epochs);
    opt.batch = static_cast<std::size_t>(cfg.pretrain_batch);
    opt.lr = cfg.pretrain_lr;
    opt.seed = stage_seed(cfg, kind, Stage::Pretrain);
    return pretrain_cond_mean(data, n_classes(kind), opt);
}

TrainedRun run_train(const ExperimentConfig& cfg, DatasetKind kind,
                     const std::vector<LabeledSample>& data, const DenseNet& f_net) {
    TrainedRun run{make_card_model(f_net, make_schedule(cfg), n_classes(kind),
                                   stage_seed(cfg, kind, Stage::Init)),
                   {}, {}};
    TrainOptions opt;
    opt.epochs = static_cast<std::size_t>(cfg.epochs);
    opt.batch = static_cast<std::size_t>(cfg.batch);
    opt.lr = cfg.lr;
    opt.seed = stage_seed(cfg, kind, Stage::Train);
    opt.checkpoint_stride = static_cast<std::size_t>(cfg.checkpoint_stride);
    for (auto e : cfg.checkpoint_epochs) opt.checkpoint_epochs.push_back(static_cast<std::size_t>(e));
    opt.on_checkpoint = [&run](std::size_t, const CardModel& m) { run.checkpoints.push_back(m); };
    run.train = train_card(run.final_model, data, opt);
    return run;
}

BoundConfig bound_config(const ExperimentConfig& cfg, DatasetKind kind) {
    BoundConfig bc;
    bc.n_w2 = static_cast<std::size_t>(cfg.n_w2);
    bc.n_mc = static_cast<std::size_t>(cfg.n_mc);
    bc.n_pairs = static_cast<std::size_t>(cfg.n_pairs);
    bc.l2_max = cfg.l2_max;
    bc.n_grid = static_cast<std::size_t>(cfg.n_grid);
    bc.seed = stage_seed(cfg, kind, Stage::Bounds);
    if (kind == DatasetKind::Gaussian) bc.gaussian_var = 0.1;
    return bc;
}

std::vector<BoundReport> evaluate_checkpoints(const ExperimentConfig& cfg, DatasetKind kind,
                                              const std::vector<LabeledSample>& data,
                                              const std::vector<CardModel>& models,
                                              const std::vector<std::size_t>& epochs) {
    if (models.size() != epochs.size())
        throw std::invalid_argument("evaluate_checkpoints: models and epochs differ in length");
    const BoundConfig bc = bound_config(cfg, kind);
    std::vector<BoundReport> out;
    for (std::size_t i = 0; i < models.size(); ++i)
        out.push_back(evaluate_checkpoint(models[i], data, epochs[i], bc));
    return out;
}

std::vector<ProductPoint> run_product_curve(const ExperimentConfig& cfg, DatasetKind kind,
                                            const std::vector<LabeledSample>& data,
                                            const CardModel& model, const BoundReport& report) {
    const auto& s = model.schedule;
    LipschitzEstimates est;
    est.beta = [&s](double tau) { return s.beta_cont(tau); };
    est.l2 = StepFunction{report.l2_hat};
    est.l2_max = cfg.l2_max;
    std::vector<int> steps;
    for (int t = 1; t <= s.T; ++t) steps.push_back(t);
    const std::size_t n = std::min(data.size(), static_cast<std::size_t>(cfg.n_w2));
    const std::vector<LabeledSample> sub(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n));
    Rng rng(stage_seed(cfg, kind, Stage::Product));
    return product_curve(s, eps_fn_of(model), sub, class_means(model), est, steps, rng,
                         static_cast<std::size_t>(cfg.n_grid));
}

BoundsSummary summarize(const std::vector<BoundReport>& reports,
                        const std::vector<ProductPoint>& curve) {
    BoundsSummary s;
    s.checkpoints = reports.size();
    std::size_t dom = 0;
    s.thm1_below_cor1 = !reports.empty();
    std::vector<double> lx, ly;
    for (const auto& r : reports) {
        if (r.rhs_cor1 >= r.W2_emp) ++dom;
        if (!(r.rhs_thm1 <= r.rhs_cor1)) s.thm1_below_cor1 = false;
    }
    for (const auto& p : log_bound_points(reports)) {
        if (!p.valid) continue;
        lx.push_back(p.log_L1);
        ly.push_back(p.log_W2);
    }
    s.cor1_dominance = reports.empty() ? 0.0 : static_cast<double>(dom) / reports.size();
    s.spearman = lx.size() >= 2 ? spearman(lx, ly) : 0.0;
    if (curve.size() >= 2) {
        s.product_ratio = curve.back().value / curve.front().value;
        std::size_t mono = 0;
        for (std::size_t i = 0; i + 1 < curve.size(); ++i)
            if (curve[i + 1].value <= curve[i].value) ++mono;
        s.product_monotone = static_cast<double>(mono) / (curve.size() - 1);
    }
    return s;
}

std::vector<LabeledSample> generate_samples(const ExperimentConfig& cfg, DatasetKind kind,
                                            const CardModel& model,
                                            const std::vector<LabeledSample>& data) {
    std::vector<int> xs;
    xs.reserve(data.size());
    for (const auto& d : data) xs.push_back(d.x);
    Rng rng(stage_seed(cfg, kind, Stage::Generate));
    const auto tr = reverse_sample(model, xs, rng);
    std::vector<LabeledSample> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = {tr.clouds.back()[i], xs[i]};
    return out;
}

double w2_between(const std::vector<LabeledSample>& a, const std::vector<LabeledSample>& b) {
    std::vector<Vec2> pa, pb;
    for (const auto& s : a) pa.push_back(s.y0);
    for (const auto& s : b) pb.push_back(s.y0);
    return w2_exact(EmpiricalMeasure::from(pa), EmpiricalMeasure::from(pb)).distance;
}

ScoreApproxReport run_score_approx(const ExperimentConfig& cfg) {
    ScoreApproxReport rep;
    const GaussianFamily fam(cfg.sa_s0, 1);
    Theorem2Options opt;
    opt.beta_bar = cfg.sa_beta_bar;
    opt.f = cfg.sa_f;
    opt.panels = static_cast<int>(cfg.sa_panels);
    opt.domain.eps = cfg.sa_eps;
    opt.domain.beta_holder = cfg.sa_beta_holder;
    opt.domain.s = static_cast<int>(cfg.sa_s);

    std::vector<int> Ns;
    for (auto n : cfg.sa_N) Ns.push_back(static_cast<int>(n));
    rep.sweep = theorem2_error(fam, Ns, cfg.sa_sweep_t, opt);
    rep.slope_limit = -std::min(cfg.sa_beta_holder, 1.0) + 0.5;
    rep.strictly_decreasing = true;
    for (std::size_t i = 1; i < rep.sweep.rows.size(); ++i)
        if (!(rep.sweep.rows[i].error_L2 < rep.sweep.rows[i - 1].error_L2)) rep.strictly_decreasing = false;
    rep.slope_ok = rep.sweep.rows.size() < 2 || rep.sweep.slope <= rep.slope_limit;

    const int n_max = *std::max_element(Ns.begin(), Ns.end());
    for (double t : cfg.sa_trend_t) rep.trend.push_back(theorem2_error(fam, {n_max}, t, opt).rows.front());
    rep.t_trend_ok = true;
    for (std::size_t i = 1; i < rep.trend.size(); ++i)
        if (!(rep.trend[i].error_L2 <= rep.trend[i - 1].error_L2)) rep.t_trend_ok = false;

    const QuadratureOracle oracle(fam);
    const double f = cfg.sa_f;
    rep.lemma_ok = true;
    for (double t : cfg.sa_lemma_t) {
        const auto dom = make_domains(fam, std::span(&f, 1), cfg.sa_beta_bar, t, n_max, opt.domain);
        std::vector<double> grid;
        for (int i = -400; i <= 400; ++i) grid.push_back(f + dom.R * i / 400.0 * 1.5);
        rep.lemma.push_back(density_bounds_check(fam, oracle, dom, f, grid));
        rep.lemma_ok = rep.lemma_ok && rep.lemma.back().pass;
    }
    return rep;
}

// ---- files ------------------------------------------------------------------

fs::path dataset_dir(const ExperimentConfig& cfg, DatasetKind kind) {
    return fs::path(cfg.out_dir) / std::string(to_string(kind));
}

fs::path checkpoint_path(const ExperimentConfig& cfg, DatasetKind kind, std::size_t epoch) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%06zu.json", epoch);
    return dataset_dir(cfg, kind) / "checkpoints" / name;
}

std::vector<std::pair<std::size_t, fs::path>> list_checkpoints(const ExperimentConfig& cfg,
                                                               DatasetKind kind) {
    std::vector<std::pair<std::size_t, fs::path>> out;
    const fs::path dir = dataset_dir(cfg, kind) / "checkpoints";
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        std::size_t epoch = 0;
        if (std::sscanf(name.c_str(), "epoch_%zu.json", &epoch) == 1) out.emplace_back(epoch, e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + p.string());
}

std::string csv_comment(const ExperimentConfig& cfg, std::string_view extra) {
    std::string s = "config_hash=" + config_hash(cfg);
    if (!extra.empty()) s += " " + std::string(extra);
    return s;
}

namespace {
std::string fmt(double v) { return format_double(v); }
std::string ds_tag(DatasetKind kind) { return "dataset=" + std::string(to_string(kind)); }
}  // namespace

std::string bounds_csv(const ExperimentConfig& cfg, DatasetKind kind,
                       const std::vector<BoundReport>& reports) {
    std::ostringstream os;
    os << "# " << csv_comment(cfg, ds_tag(kind)) << "\n";
    os << "epoch,L1_hat,W2_emp,W2_T,M_T,rhs_thm1,rhs_cor1,log_L1,log_W2,log_rhs,intercept,L1_marginal\n";
    const auto logs = log_bound_points(reports);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        const auto& l = logs[i];
        os << r.epoch << ',' << fmt(r.L1_hat) << ',' << fmt(r.W2_emp) << ',' << fmt(r.W2_T) << ','
           << fmt(r.M_T) << ',' << fmt(r.rhs_thm1) << ',' << fmt(r.rhs_cor1) << ','
           << (l.valid ? fmt(l.log_L1) : "") << ',' << (l.valid ? fmt(l.log_W2) : "") << ','
           << (l.valid ? fmt(l.log_rhs) : "") << ',' << fmt(r.intercept) << ','
           << (r.L1_marginal ? fmt(*r.L1_marginal) : "") << "\n";
    }
    return os.str();
}

std::string product_csv(const ExperimentConfig& cfg, DatasetKind kind,
                        const std::vector<ProductPoint>& curve) {
    std::ostringstream os;
    os << "# " << csv_comment(cfg, ds_tag(kind)) << "\n";
    os << "step,tau,M,W2,value\n";
    for (const auto& p : curve)
        os << p.step << ',' << fmt(p.tau) << ',' << fmt(p.M) << ',' << fmt(p.W2) << ',' << fmt(p.value)
           << "\n";
    return os.str();
}

std::string loss_csv(const ExperimentConfig& cfg, DatasetKind kind, const std::vector<double>& loss) {
    std::ostringstream os;
    os << "# " << csv_comment(cfg, ds_tag(kind)) << "\n";
    os << "epoch,loss\n";
    for (std::size_t i = 0; i < loss.size(); ++i) os << i + 1 << ',' << fmt(loss[i]) << "\n";
    return os.str();
}

}  // namespace cardlab::cli
