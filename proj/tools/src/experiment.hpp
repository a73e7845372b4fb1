#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cardlab/bounds.hpp"
#include "cardlab/datasets.hpp"
#include "cardlab/diffusion.hpp"
#include "cardlab/nn.hpp"
#include "cardlab/score_approx.hpp"
#include "config.hpp"

namespace cardlab::cli {

// Independent seed per (dataset, pipeline stage), derived from the run seed.
enum class Stage : std::uint64_t { Data = 0, Pretrain, Init, Train, Bounds, Generate, Product };
std::uint64_t stage_seed(const ExperimentConfig& cfg, DatasetKind kind, Stage stage);

NoiseSchedule make_schedule(const ExperimentConfig& cfg);
std::vector<LabeledSample> make_training_data(const ExperimentConfig& cfg, DatasetKind kind);

PretrainResult run_pretrain(const ExperimentConfig& cfg, DatasetKind kind,
                            const std::vector<LabeledSample>& data);

struct TrainedRun {
    CardModel final_model;
    TrainResult train;
    std::vector<CardModel> checkpoints;  // parallel to train.checkpoint_epochs
};

TrainedRun run_train(const ExperimentConfig& cfg, DatasetKind kind,
                     const std::vector<LabeledSample>& data, const DenseNet& f_net);

BoundConfig bound_config(const ExperimentConfig& cfg, DatasetKind kind);

std::vector<BoundReport> evaluate_checkpoints(const ExperimentConfig& cfg, DatasetKind kind,
                                              const std::vector<LabeledSample>& data,
                                              const std::vector<CardModel>& models,
                                              const std::vector<std::size_t>& epochs);

// M(t) W2(q_t, p_t) for t = 1..T, with l2 taken from the given report.
std::vector<ProductPoint> run_product_curve(const ExperimentConfig& cfg, DatasetKind kind,
                                            const std::vector<LabeledSample>& data,
                                            const CardModel& model, const BoundReport& report);

struct BoundsSummary {
    std::size_t checkpoints = 0;
    double cor1_dominance = 0.0;    // fraction with rhs_cor1 >= W2_emp
    bool thm1_below_cor1 = false;   // at every checkpoint
    double product_ratio = 0.0;     // value(T) / value(1)
    double product_monotone = 0.0;  // fraction of nonincreasing consecutive pairs
    double spearman = 0.0;          // log L1_hat vs log W2_emp
};

BoundsSummary summarize(const std::vector<BoundReport>& reports,
                        const std::vector<ProductPoint>& curve);

// One generated sample per data point, conditioned on its label.
std::vector<LabeledSample> generate_samples(const ExperimentConfig& cfg, DatasetKind kind,
                                            const CardModel& model,
                                            const std::vector<LabeledSample>& data);
double w2_between(const std::vector<LabeledSample>& a, const std::vector<LabeledSample>& b);

// ---- score approximation sweep and density bounds ----------------------------

struct ScoreApproxReport {
    Theorem2Table sweep;                // over cfg.sa_N at cfg.sa_sweep_t
    double slope_limit = 0.0;           // -min(beta, d) + 0.5
    std::vector<Theorem2Row> trend;     // finest N at each cfg.sa_trend_t
    std::vector<BoundsCheckResult> lemma;  // one per cfg.sa_lemma_t entry
    bool strictly_decreasing = false;
    bool slope_ok = false;
    bool t_trend_ok = false;  // error non-increasing in t
    bool lemma_ok = false;
    bool all_pass() const { return strictly_decreasing && slope_ok && t_trend_ok && lemma_ok; }
};

ScoreApproxReport run_score_approx(const ExperimentConfig& cfg);

// ---- files ------------------------------------------------------------------

std::filesystem::path dataset_dir(const ExperimentConfig& cfg, DatasetKind kind);
std::filesystem::path checkpoint_path(const ExperimentConfig& cfg, DatasetKind kind, std::size_t epoch);
// Sorted (epoch, path) pairs; empty when no checkpoints exist.
std::vector<std::pair<std::size_t, std::filesystem::path>> list_checkpoints(
    const ExperimentConfig& cfg, DatasetKind kind);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& text);
std::string csv_comment(const ExperimentConfig& cfg, std::string_view extra = {});

std::string bounds_csv(const ExperimentConfig& cfg, DatasetKind kind,
                       const std::vector<BoundReport>& reports);
std::string product_csv(const ExperimentConfig& cfg, DatasetKind kind,
                        const std::vector<ProductPoint>& curve);
std::string loss_csv(const ExperimentConfig& cfg, DatasetKind kind, const std::vector<double>& loss);

}  // namespace cardlab::cli
