#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cardlab/fokker_planck.hpp"

namespace cardlab::cli {

// Raised for malformed or invalid configuration; carries a source position
// when one is known (line/col are 1-based, 0 when not applicable).
struct ConfigError : std::runtime_error {
    std::string source;
    int line = 0;
    int col = 0;
    ConfigError(std::string src, int ln, int cl, const std::string& msg);
};

using Scalar = std::variant<bool, std::int64_t, double, std::string>;

struct ConfigValue {
    std::vector<Scalar> items;  // one entry for scalars
    bool is_array = false;
    int line = 0;
    int col = 0;
    std::string source;
};

// Flat "section.key" -> value map from the TOML-shaped grammar:
//   # comment
//   [section]
//   key = 42 | 1.5e-3 | true | "text" | [1, 2, 3]
using ConfigDoc = std::map<std::string, ConfigValue>;

ConfigDoc parse_config(std::string_view text, const std::string& source = "<config>");
ConfigValue parse_value_literal(std::string_view text, const std::string& source, int line,
                                int col);

struct ExperimentConfig {
    // [experiment]
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::vector<std::string> datasets{"moons", "circles", "gaussian", "mixture"};
    bool untrained = false;  // generate from the epoch-0 model (diagnostic)

    // [data]
    std::int64_t n_train = 1000;
    double noise_sd = 0.05;
    double inner_factor = 0.5;

    // [schedule]
    std::int64_t T = 20;
    double beta_min = 1e-5;
    double beta_max = 1e-2;

    // [pretrain]
    std::int64_t pretrain_epochs = 500;
    std::int64_t pretrain_batch = 128;
    double pretrain_lr = 1e-4;

    // [train]
    std::int64_t epochs = 2000;
    std::int64_t batch = 128;
    double lr = 1e-4;
    std::int64_t checkpoint_stride = 100;
    std::vector<std::int64_t> checkpoint_epochs{10, 20, 50};

    // [bounds]
    std::int64_t n_w2 = 500;
    std::int64_t n_mc = 2000;
    std::int64_t n_pairs = 2048;
    double l2_max = 50.0;
    std::int64_t n_grid = 200;

    // [fpcheck]
    FpCheckConfig fp;
    std::string fp_scheme = "exponential";

    // [scoreapprox]
    double sa_s0 = 0.7071067811865476;
    double sa_f = 0.5;
    double sa_eps = 1e-6;
    double sa_beta_bar = 1.0;
    double sa_beta_holder = 2.0;
    std::int64_t sa_s = 2;
    std::vector<std::int64_t> sa_N{4, 8, 16, 32};
    double sa_sweep_t = 0.5;
    std::vector<double> sa_trend_t{0.3, 0.8};  // compared at the finest N
    std::vector<double> sa_lemma_t{0.3, 0.5, 1.0};
    std::int64_t sa_panels = 400;
};

// Applies a parsed document onto defaults; unknown keys and type or range
// errors raise ConfigError at the offending position.
ExperimentConfig config_from_doc(const ConfigDoc& doc);

// Overrides from CARDLAB_<SECTION>_<KEY> environment variables (values use
// the same literal syntax as the file).
void apply_env_overrides(ConfigDoc& doc, char** envp);

// Cross-field checks (positivity, dataset names, writable output, ...).
void validate(const ExperimentConfig& cfg);

// Canonical text form; the config hash is FNV-1a 64 of this text.
std::string to_canonical(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);
std::uint64_t fnv1a64(std::string_view text);

// Every known key as "section.key", in canonical order.
std::vector<std::string> known_keys();

}  // namespace cardlab::cli
