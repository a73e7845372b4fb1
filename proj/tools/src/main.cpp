#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <iostream>
#include <sstream>

#include "cardlab/fokker_planck.hpp"
#include "config.hpp"
#include "experiment.hpp"

extern char** environ;

namespace {

using namespace cardlab;
using namespace cardlab::cli;
namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitAssert = 1;
constexpr int kExitConfig = 2;

// I/O and missing-artifact problems map to exit code 2.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void log(const char* fmt_str, auto... args) {
    std::fprintf(stderr, fmt_str, args...);
    std::fputc('\n', stderr);
}

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool untrained = false;
    bool train_inline = false;
};

ExperimentConfig load(const Options& o) {
    ConfigDoc doc;
    if (!o.config_path.empty()) doc = parse_config(read_file(o.config_path), o.config_path);
    apply_env_overrides(doc, environ);
    ExperimentConfig cfg = config_from_doc(doc);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.out_dir = *o.out;
    if (o.untrained) cfg.untrained = true;
    validate(cfg);
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    const fs::path probe = fs::path(cfg.out_dir) / ".write_probe";
    {
        std::ofstream p(probe);
        if (!p) throw IoError("output directory not writable: " + cfg.out_dir);
    }
    fs::remove(probe, ec);
    return cfg;
}

std::vector<DatasetKind> kinds(const ExperimentConfig& cfg) {
    std::vector<DatasetKind> out;
    for (const auto& d : cfg.datasets) out.push_back(dataset_kind_from_string(d));
    return out;
}

void write_data(const ExperimentConfig& cfg, DatasetKind kind, const std::vector<LabeledSample>& data,
                const std::string& file) {
    std::ostringstream os;
    write_samples_csv(os, data, csv_comment(cfg, "dataset=" + std::string(to_string(kind))));
    write_file(dataset_dir(cfg, kind) / file, os.str());
}

DenseNet pretrain_step(const ExperimentConfig& cfg, DatasetKind kind,
                       const std::vector<LabeledSample>& data) {
    const auto t0 = std::chrono::steady_clock::now();
    auto res = run_pretrain(cfg, kind, data);
    write_file(dataset_dir(cfg, kind) / "f_net.json", res.net.to_json());
    write_file(dataset_dir(cfg, kind) / "pretrain_loss.csv", loss_csv(cfg, kind, res.mse));
    log("[%s] pretrain: %zu epochs, final mse %.5g (%.1fs)", std::string(to_string(kind)).c_str(),
        res.mse.size(), res.final_mse,
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return std::move(res.net);
}

DenseNet load_or_pretrain(const ExperimentConfig& cfg, DatasetKind kind,
                          const std::vector<LabeledSample>& data) {
    const fs::path p = dataset_dir(cfg, kind) / "f_net.json";
    if (fs::exists(p)) return DenseNet::from_json(read_file(p));
    log("[%s] no f_net.json, pretraining inline", std::string(to_string(kind)).c_str());
    return pretrain_step(cfg, kind, data);
}

void train_step(const ExperimentConfig& cfg, DatasetKind kind, const std::vector<LabeledSample>& data) {
    const DenseNet f_net = load_or_pretrain(cfg, kind, data);
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path ckdir = dataset_dir(cfg, kind) / "checkpoints";
    fs::remove_all(ckdir);
    auto run = run_train(cfg, kind, data, f_net);
    for (std::size_t i = 0; i < run.checkpoints.size(); ++i)
        write_file(checkpoint_path(cfg, kind, run.train.checkpoint_epochs[i]), run.checkpoints[i].to_json());
    write_file(dataset_dir(cfg, kind) / "train_loss.csv", loss_csv(cfg, kind, run.train.loss));
    log("[%s] train: %zu epochs, final loss %.5g, %zu checkpoints (%.1fs)",
        std::string(to_string(kind)).c_str(), run.train.loss.size(),
        run.train.loss.empty() ? 0.0 : run.train.loss.back(), run.checkpoints.size(),
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::vector<std::pair<std::size_t, CardModel>> load_checkpoints(const ExperimentConfig& cfg,
                                                                DatasetKind kind) {
    std::vector<std::pair<std::size_t, CardModel>> out;
    for (const auto& [epoch, path] : list_checkpoints(cfg, kind))
        out.emplace_back(epoch, CardModel::from_json(read_file(path)));
    if (out.empty())
        throw IoError("missing checkpoint: no checkpoints under " +
                      (dataset_dir(cfg, kind) / "checkpoints").string() + " (run `cardlab train` first)");
    return out;
}

bool generate_step(const ExperimentConfig& cfg, DatasetKind kind, bool train_inline) {
    const auto data = make_training_data(cfg, kind);
    write_data(cfg, kind, data, "data.csv");
    CardModel model;
    if (cfg.untrained) {
        model = make_card_model(make_cond_mean_net(n_classes(kind), stage_seed(cfg, kind, Stage::Pretrain)),
                                make_schedule(cfg), n_classes(kind), stage_seed(cfg, kind, Stage::Init));
    } else {
        if (train_inline && list_checkpoints(cfg, kind).empty()) train_step(cfg, kind, data);
        model = load_checkpoints(cfg, kind).back().second;
    }
    const auto gen = generate_samples(cfg, kind, model, data);
    write_data(cfg, kind, gen, "generated.csv");
    const double w2 = w2_between(data, gen);
    const std::string name(to_string(kind));
    if (cfg.untrained) {
        log("[%s] generate (untrained): W2 = %.5g", name.c_str(), w2);
        return true;
    }
    const bool check = kind == DatasetKind::Gaussian;
    const bool ok = !check || w2 <= 0.1;
    log("[%s] generate: W2 = %.5g%s", name.c_str(), w2, check ? (ok ? " <= 0.1 ok" : " > 0.1 FAIL") : "");
    return ok;
}

bool bounds_step(const ExperimentConfig& cfg, DatasetKind kind) {
    const auto data = make_training_data(cfg, kind);
    const auto cks = load_checkpoints(cfg, kind);
    std::vector<CardModel> models;
    std::vector<std::size_t> epochs;
    for (const auto& [e, m] : cks) {
        epochs.push_back(e);
        models.push_back(m);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = evaluate_checkpoints(cfg, kind, data, models, epochs);
    const auto curve = run_product_curve(cfg, kind, data, models.back(), reports.back());
    write_file(dataset_dir(cfg, kind) / "bounds.csv", bounds_csv(cfg, kind, reports));
    write_file(dataset_dir(cfg, kind) / "product.csv", product_csv(cfg, kind, curve));
    const auto s = summarize(reports, curve);

    const bool final_ok = reports.back().rhs_cor1 >= reports.back().W2_emp;
    const bool first_ok = reports.front().rhs_cor1 >= reports.front().W2_emp;
    const bool ratio_ok = s.product_ratio <= 0.10;
    json j = {{"dataset", std::string(to_string(kind))},
              {"config_hash", config_hash(cfg)},
              {"checkpoints", s.checkpoints},
              {"cor1_dominance", s.cor1_dominance},
              {"thm1_below_cor1", s.thm1_below_cor1},
              {"spearman_logL1_logW2", s.spearman},
              {"product_ratio", s.product_ratio},
              {"product_monotone_fraction", s.product_monotone},
              {"final_checkpoint_dominated", final_ok},
              {"first_checkpoint_dominated", first_ok},
              {"product_ratio_ok", ratio_ok}};
    write_file(dataset_dir(cfg, kind) / "bounds_summary.json", j.dump(2) + "\n");
    log("[%s] bounds: %zu checkpoints, dominance %.2f, thm1<=cor1 %s, spearman %.3f, product ratio %.3g "
        "(%.1fs)",
        std::string(to_string(kind)).c_str(), s.checkpoints, s.cor1_dominance,
        s.thm1_below_cor1 ? "yes" : "no", s.spearman, s.product_ratio,
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return final_ok && first_ok && ratio_ok && s.thm1_below_cor1;
}

json item_json(const CheckItem& i) {
    return {{"name", i.name}, {"value", i.value}, {"limit", i.limit},
            {"kind", i.upper ? "max" : "min"}, {"pass", i.pass},
            {"margin", i.upper ? i.limit - i.value : i.value - i.limit}};
}

bool fpcheck_step(const ExperimentConfig& cfg) {
    const auto rep = run_fp_consistency(cfg.fp);
    json items = json::array();
    for (const auto& i : rep.items) items.push_back(item_json(i));
    json j = {{"config_hash", config_hash(cfg)}, {"all_pass", rep.all_pass}, {"items", items}};
    if (!rep.error.empty()) j["error"] = rep.error;
    write_file(fs::path(cfg.out_dir) / "fpcheck.json", j.dump(2) + "\n");
    for (const auto& i : rep.items)
        log("fpcheck %-26s %.4g %s %.4g %s", i.name.c_str(), i.value, i.upper ? "<=" : ">=", i.limit,
            i.pass ? "ok" : "FAIL");
    if (!rep.error.empty()) log("fpcheck error: %s", rep.error.c_str());
    return rep.all_pass;
}

bool scoreapprox_step(const ExperimentConfig& cfg) {
    const auto rep = run_score_approx(cfg);
    json sweep = json::array();
    for (const auto& r : rep.sweep.rows)
        sweep.push_back({{"N", r.N}, {"t", r.t}, {"error", r.error_L2}, {"eps_low", r.eps_low},
                         {"taylor_order", r.taylor_order}});
    json trend = json::array();
    for (const auto& r : rep.trend) trend.push_back({{"N", r.N}, {"t", r.t}, {"error", r.error_L2}});
    json lemma = json::array();
    for (std::size_t i = 0; i < rep.lemma.size(); ++i) {
        const auto& l = rep.lemma[i];
        lemma.push_back({{"t", cfg.sa_lemma_t[i]}, {"points", l.points},
                         {"lower_slack", l.worst_lower_slack}, {"upper_slack", l.worst_upper_slack},
                         {"score_slack", l.worst_score_slack}, {"grad_slack", l.worst_grad_slack},
                         {"grad_pass", l.grad_pass}, {"pass", l.pass}});
    }
    json j = {{"config_hash", config_hash(cfg)},
              {"sweep", sweep},
              {"slope", rep.sweep.slope},
              {"slope_limit", rep.slope_limit},
              {"strictly_decreasing", rep.strictly_decreasing},
              {"slope_ok", rep.slope_ok},
              {"trend", trend},
              {"t_trend_ok", rep.t_trend_ok},
              {"lemma", lemma},
              {"lemma_ok", rep.lemma_ok},
              {"all_pass", rep.all_pass()}};
    write_file(fs::path(cfg.out_dir) / "scoreapprox.json", j.dump(2) + "\n");
    for (const auto& r : rep.sweep.rows) log("scoreapprox N=%-3d t=%.2f error %.4g", r.N, r.t, r.error_L2);
    log("scoreapprox slope %.3f (limit %.2f), decreasing %s, t-trend %s, lemma bounds %s",
        rep.sweep.slope, rep.slope_limit, rep.strictly_decreasing ? "yes" : "no",
        rep.t_trend_ok ? "yes" : "no", rep.lemma_ok ? "yes" : "no");
    return rep.all_pass();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cardlab: conditional diffusion experiments and verification suites"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    Options opt;
    app.add_option("--config", opt.config_path, "Configuration file (TOML-shaped key/value)");
    app.add_option("--seed", opt.seed, "Override experiment.seed");
    app.add_option("--out", opt.out, "Override experiment.out (output directory)");

    auto* generate = app.add_subcommand("generate", "Write data and generated clouds per dataset");
    generate->add_flag("--untrained", opt.untrained, "Sample from an untrained model (diagnostic)");
    generate->add_flag("--train", opt.train_inline, "Train inline when no checkpoint exists");
    auto* pretrain = app.add_subcommand("pretrain", "Fit the conditional-mean network f_phi");
    auto* train = app.add_subcommand("train", "Train the noise network and write checkpoints");
    auto* bounds = app.add_subcommand("bounds", "Evaluate bound reports for every checkpoint");
    auto* fpcheck = app.add_subcommand("fpcheck", "Fokker-Planck / SDE / ODE consistency suite");
    auto* scoreapprox = app.add_subcommand("scoreapprox", "Score-approximation N-sweep and lemma bounds");
    auto* all = app.add_subcommand("all", "pretrain, train, bounds, generate, fpcheck, scoreapprox");
    auto* dump = app.add_subcommand("config", "Print the resolved configuration and its hash");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        const ExperimentConfig cfg = load(opt);
        bool ok = true;
        if (dump->parsed()) {
            std::cout << to_canonical(cfg) << "\n# config_hash=" << config_hash(cfg) << "\n";
        } else if (pretrain->parsed()) {
            for (auto k : kinds(cfg)) {
                const auto data = make_training_data(cfg, k);
                write_data(cfg, k, data, "data.csv");
                pretrain_step(cfg, k, data);
            }
        } else if (train->parsed()) {
            for (auto k : kinds(cfg)) train_step(cfg, k, make_training_data(cfg, k));
        } else if (generate->parsed()) {
            for (auto k : kinds(cfg)) ok = generate_step(cfg, k, opt.train_inline) && ok;
        } else if (bounds->parsed()) {
            for (auto k : kinds(cfg)) ok = bounds_step(cfg, k) && ok;
        } else if (fpcheck->parsed()) {
            ok = fpcheck_step(cfg);
        } else if (scoreapprox->parsed()) {
            ok = scoreapprox_step(cfg);
        } else if (all->parsed()) {
            for (auto k : kinds(cfg)) {
                const auto data = make_training_data(cfg, k);
                write_data(cfg, k, data, "data.csv");
                pretrain_step(cfg, k, data);
                train_step(cfg, k, data);
                ok = bounds_step(cfg, k) && ok;
                ok = generate_step(cfg, k, false) && ok;
            }
            ok = fpcheck_step(cfg) && ok;
            ok = scoreapprox_step(cfg) && ok;
        }
        return ok ? kExitOk : kExitAssert;
    } catch (const ConfigError& e) {
        log("config error: %s", e.what());
        return kExitConfig;
    } catch (const IoError& e) {
        log("error: %s", e.what());
        return kExitConfig;
    } catch (const fs::filesystem_error& e) {
        log("io error: %s", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        log("error: %s", e.what());
        return kExitConfig;
    }
}
