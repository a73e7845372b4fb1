#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "experiment.hpp"

using namespace cardlab::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

int run_env(const std::string& env, const std::string& args) {
    const std::string cmd = env + " " + std::string(CARDLAB_EXE) + " " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

int run(const std::string& args) { return run_env("", args); }

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cardlab_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

template <class F>
ConfigError config_error(F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e;
    }
    FAIL("no ConfigError raised");
    return ConfigError("", 0, 0, "");
}

const char* kTiny = R"(# small end-to-end run
[experiment]
datasets = ["gaussian"]
seed = 3

[data]
n = 64

[pretrain]
epochs = 5

[train]
epochs = 12
checkpoint_stride = 6
checkpoint_epochs = []

[bounds]
n_w2 = 32
n_mc = 64
n_pairs = 64
n_grid = 20
)";

}  // namespace

TEST_CASE("config parser: values, arrays, comments") {
    const auto doc = parse_config("# top\n[data]\nn = 250  # trailing\nnoise_sd = 2.5e-2\n\n"
                                  "[experiment]\nuntrained = true\ndatasets = [\"moons\", \"circles\"]\n");
    REQUIRE(doc.count("data.n"));
    CHECK(std::get<std::int64_t>(doc.at("data.n").items[0]) == 250);
    CHECK(doc.at("data.n").line == 3);
    CHECK(std::get<double>(doc.at("data.noise_sd").items[0]) == 0.025);
    CHECK(std::get<bool>(doc.at("experiment.untrained").items[0]));
    CHECK(doc.at("experiment.datasets").is_array);
    CHECK(doc.at("experiment.datasets").items.size() == 2);

    const auto cfg = config_from_doc(doc);
    CHECK(cfg.n_train == 250);
    CHECK(cfg.noise_sd == 0.025);
    CHECK(cfg.untrained);
    CHECK(cfg.datasets == std::vector<std::string>{"moons", "circles"});
    // Untouched keys keep their defaults.
    CHECK(cfg.T == 20);
    CHECK(cfg.beta_min == 1e-5);
    CHECK(cfg.beta_max == 1e-2);
    CHECK(cfg.epochs == 2000);
    CHECK(cfg.n_w2 == 500);
}

TEST_CASE("config parser: errors carry positions") {
    auto e1 = config_error([] { parse_config("[data]\nn = \"oops\n", "a.toml"); });
    CHECK(e1.source == "a.toml");
    CHECK(e1.line == 2);
    CHECK(std::string(e1.what()).find("a.toml:2:") == 0);

    auto e2 = config_error([] { config_from_doc(parse_config("[data]\nn = 1\nbogus = 2\n")); });
    CHECK(e2.line == 3);
    CHECK(e2.col == 9);  // position of the offending value

    auto e3 = config_error([] { config_from_doc(parse_config("[data]\nn = \"many\"\n")); });
    CHECK(e3.line == 2);
    CHECK(e3.col == 5);

    auto e4 = config_error([] { parse_config("n = 1\n"); });
    CHECK(e4.line == 1);
    auto e5 = config_error([] { parse_config("[data]\nn = 1\nn = 2\n"); });
    CHECK(e5.line == 3);
    CHECK_THROWS_AS(config_from_doc(parse_config("[data]\nn = 0\n")), ConfigError);
    CHECK_THROWS_AS(parse_config("[data\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\nn = [1, 2\n"), ConfigError);

    ExperimentConfig bad;
    bad.beta_min = 0.1;
    bad.beta_max = 0.01;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    ExperimentConfig bad2;
    bad2.datasets = {"spirals"};
    CHECK_THROWS_AS(validate(bad2), ConfigError);
}

TEST_CASE("config: environment overrides") {
    auto doc = parse_config("[schedule]\nT = 10\n");
    std::string a = "CARDLAB_SCHEDULE_T=7", b = "CARDLAB_TRAIN_LR=3e-4", c = "PATH=/usr/bin",
                d = "CARDLAB_FPCHECK_PROBES=[0.5, 1.0]";
    char* envp[] = {a.data(), b.data(), c.data(), d.data(), nullptr};
    apply_env_overrides(doc, envp);
    const auto cfg = config_from_doc(doc);
    CHECK(cfg.T == 7);
    CHECK(cfg.lr == 3e-4);
    CHECK(cfg.fp.probes == std::vector<double>{0.5, 1.0});

    std::string bogus = "CARDLAB_SCHEDULE_NOPE=1";
    char* env2[] = {bogus.data(), nullptr};
    CHECK_THROWS_AS(apply_env_overrides(doc, env2), ConfigError);
}

TEST_CASE("config: canonical text round-trips and hashes") {
    ExperimentConfig cfg;
    cfg.seed = 42;
    cfg.fp.ny = 800;
    cfg.sa_N = {8, 16};
    const std::string text = to_canonical(cfg);
    const auto back = config_from_doc(parse_config(text));
    CHECK(to_canonical(back) == text);
    CHECK(config_hash(back) == config_hash(cfg));
    ExperimentConfig other = cfg;
    other.seed = 43;
    CHECK(config_hash(other) != config_hash(cfg));
    // FNV-1a 64 reference values.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    for (const auto& k : known_keys()) CHECK(text.find(k.substr(k.find('.') + 1) + " = ") != std::string::npos);
}

TEST_CASE("stage seeds are distinct per dataset and stage") {
    ExperimentConfig cfg;
    std::map<std::uint64_t, int> seen;
    for (auto k : {cardlab::DatasetKind::Moons, cardlab::DatasetKind::Circles, cardlab::DatasetKind::Gaussian,
                   cardlab::DatasetKind::GaussianMixture})
        for (auto s : {Stage::Data, Stage::Pretrain, Stage::Init, Stage::Train, Stage::Bounds, Stage::Generate,
                       Stage::Product})
            ++seen[stage_seed(cfg, k, s)];
    CHECK(seen.size() == 28);
    ExperimentConfig other;
    other.seed = 1;
    CHECK(stage_seed(other, cardlab::DatasetKind::Moons, Stage::Train) !=
          stage_seed(cfg, cardlab::DatasetKind::Moons, Stage::Train));
}

TEST_CASE("cli: exit codes for usage, config and missing artefacts") {
    const fs::path dir = scratch("codes");
    CHECK(run("") == 2);
    CHECK(run("nosuchcommand") == 2);
    CHECK(run("config --config " + (dir / "absent.toml").string()) == 2);
    {
        std::ofstream(dir / "bad.toml") << "[data]\nn = -4\n";
    }
    CHECK(run("config --config " + (dir / "bad.toml").string()) == 2);
    CHECK(run("bounds --out " + (dir / "empty").string()) == 2);
    CHECK(run("generate --out " + (dir / "empty").string()) == 2);
    CHECK(run("config --out " + (dir / "ok").string()) == 0);
}

TEST_CASE("cli: fpcheck passes by default and fails on a coarse grid") {
    const fs::path dir = scratch("fp");
    CHECK(run("fpcheck --out " + (dir / "fine").string()) == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "fine" / "fpcheck.json"));
    CHECK(j["all_pass"].get<bool>());
    CHECK(j["items"].size() >= 8);

    // ny = 50 through the environment: accuracy checks fail, exit code 1.
    CHECK(run_env("CARDLAB_FPCHECK_NY=50 CARDLAB_FPCHECK_N_PATHS=20000",
                  "fpcheck --out " + (dir / "coarse").string()) == 1);
    const auto c = nlohmann::json::parse(slurp(dir / "coarse" / "fpcheck.json"));
    CHECK_FALSE(c["all_pass"].get<bool>());

    // A step beyond the CFL limit is reported as an error, not a crash.
    CHECK(run_env("CARDLAB_FPCHECK_DT=1.0", "fpcheck --out " + (dir / "cfl").string()) == 1);
    const auto e = nlohmann::json::parse(slurp(dir / "cfl" / "fpcheck.json"));
    CHECK(e["error"].get<std::string>().find("CFL") != std::string::npos);
}

TEST_CASE("cli: a tiny pipeline is byte-for-byte reproducible") {
    const fs::path dir = scratch("det");
    {
        std::ofstream(dir / "tiny.toml") << kTiny;
    }
    const std::string out = (dir / "out").string();
    const std::string cfg = " --config " + (dir / "tiny.toml").string() + " --out " + out;
    auto snapshot = [&] {
        std::map<std::string, std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(out))
            if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = slurp(e.path());
        return files;
    };
    REQUIRE(run("pretrain" + cfg) == 0);
    REQUIRE(run("train" + cfg) == 0);
    const int rc_bounds = run("bounds" + cfg);
    CHECK((rc_bounds == 0 || rc_bounds == 1));
    const int rc_gen = run("generate" + cfg);
    CHECK((rc_gen == 0 || rc_gen == 1));
    const auto first = snapshot();
    CHECK(first.count("gaussian/data.csv"));
    CHECK(first.count("gaussian/generated.csv"));
    CHECK(first.count("gaussian/bounds.csv"));
    CHECK(first.count("gaussian/product.csv"));
    CHECK(first.count("gaussian/checkpoints/epoch_000012.json"));

    // Every CSV opens with the config-hash comment and a header row.
    for (const auto& [name, body] : first)
        if (name.ends_with(".csv")) {
            INFO(name);
            CHECK(body.rfind("# ", 0) == 0);
            CHECK(body.find("config_hash=") != std::string::npos);
        }

    REQUIRE(run("pretrain" + cfg) == 0);
    REQUIRE(run("train" + cfg) == 0);
    CHECK(run("bounds" + cfg) == rc_bounds);
    CHECK(run("generate" + cfg) == rc_gen);
    const auto second = snapshot();
    REQUIRE(first.size() == second.size());
    for (const auto& [name, body] : first) {
        INFO(name);
        CHECK(second.at(name) == body);
    }

    // A different seed changes the data.
    CHECK(run("pretrain" + cfg + " --seed 4") == 0);
    CHECK(slurp(dir / "out" / "gaussian" / "data.csv") != first.at("gaussian/data.csv"));

    // The untrained diagnostic never asserts.
    CHECK(run("generate --untrained" + cfg) == 0);
}
