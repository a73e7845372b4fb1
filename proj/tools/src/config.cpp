#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>
#include <type_traits>

#include "cardlab/datasets.hpp"

namespace cardlab::cli {

namespace {

std::string where(const std::string& src, int line, int col) {
    if (line == 0) return src;
    return src + ":" + std::to_string(line) + ":" + std::to_string(col);
}

bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

struct Cursor {
    std::string_view s;
    std::size_t i = 0;
    const std::string& src;
    int line;
    int col0;  // column of s[0]

    int col() const { return col0 + static_cast<int>(i); }
    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(src, line, col(), msg); }
    void skip_ws() {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    }
    bool done() const { return i >= s.size(); }
    char peek() const { return done() ? '\0' : s[i]; }
};

Scalar parse_scalar(Cursor& c) {
    c.skip_ws();
    if (c.done()) c.fail("expected a value");
    const char ch = c.peek();
    if (ch == '"') {
        std::string out;
        ++c.i;
        while (true) {
            if (c.done()) c.fail("unterminated string");
            char x = c.s[c.i++];
            if (x == '"') break;
            if (x == '\\') {
                if (c.done()) c.fail("unterminated escape");
                const char e = c.s[c.i++];
                switch (e) {
                    case 'n': x = '\n'; break;
                    case 't': x = '\t'; break;
                    case '"': x = '"'; break;
                    case '\\': x = '\\'; break;
                    default: --c.i; c.fail(std::string("unknown escape \\") + e);
                }
            }
            out.push_back(x);
        }
        return out;
    }
    std::size_t j = c.i;
    while (j < c.s.size() && (is_ident(c.s[j]) || c.s[j] == '.' || c.s[j] == '+' || c.s[j] == '-'))
        ++j;
    const std::string_view tok = c.s.substr(c.i, j - c.i);
    if (tok.empty()) c.fail(std::string("unexpected character '") + ch + "'");
    if (tok == "true" || tok == "false") {
        c.i = j;
        return tok == "true";
    }
    std::string clean;
    for (char x : tok)
        if (x != '_') clean.push_back(x);
    const bool floating = clean.find_first_of(".eE") != std::string::npos ||
                          clean == "inf" || clean == "nan";
    if (!floating) {
        std::int64_t v = 0;
        const char* b = clean.data() + (clean.size() > 1 && clean[0] == '+' ? 1 : 0);
        auto [p, ec] = std::from_chars(b, clean.data() + clean.size(), v);
        if (ec == std::errc{} && p == clean.data() + clean.size()) {
            c.i = j;
            return v;
        }
        if (ec == std::errc::result_out_of_range) c.fail("integer out of range: " + std::string(tok));
    } else {
        double v = 0;
        const char* b = clean.data() + (clean.size() > 1 && clean[0] == '+' ? 1 : 0);
        auto [p, ec] = std::from_chars(b, clean.data() + clean.size(), v);
        if (ec == std::errc{} && p == clean.data() + clean.size() && std::isfinite(v)) {
            c.i = j;
            return v;
        }
    }
    c.fail("invalid value '" + std::string(tok) + "'");
}

ConfigValue parse_value(Cursor& c) {
    ConfigValue v;
    v.line = c.line;
    v.source = c.src;
    c.skip_ws();
    v.col = c.col();
    if (c.peek() == '[') {
        v.is_array = true;
        ++c.i;
        while (true) {
            c.skip_ws();
            if (c.peek() == ']') {
                ++c.i;
                break;
            }
            if (c.peek() == '[') c.fail("nested arrays are not supported");
            v.items.push_back(parse_scalar(c));
            c.skip_ws();
            if (c.peek() == ',') {
                ++c.i;
                continue;
            }
            if (c.peek() == ']') {
                ++c.i;
                break;
            }
            c.fail("expected ',' or ']' in array");
        }
    } else {
        v.items.push_back(parse_scalar(c));
    }
    c.skip_ws();
    if (!c.done()) c.fail("trailing characters after value");
    return v;
}

// Comment start outside string literals, or npos.
std::size_t comment_pos(std::string_view line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (in_str && line[i] == '\\') {
            ++i;
            continue;
        }
        if (line[i] == '"') in_str = !in_str;
        if (!in_str && line[i] == '#') return i;
    }
    return std::string_view::npos;
}

// ---- schema ---------------------------------------------------------------

const char* type_name(const Scalar& s) {
    switch (s.index()) {
        case 0: return "boolean";
        case 1: return "integer";
        case 2: return "float";
        default: return "string";
    }
}

[[noreturn]] void bad(const ConfigValue& v, const std::string& key, const std::string& msg) {
    throw ConfigError(v.source, v.line, v.col, key + ": " + msg);
}

template <class T>
T convert_scalar(const Scalar& s, const ConfigValue& v, const std::string& key) {
    if constexpr (std::is_same_v<T, bool>) {
        if (auto p = std::get_if<bool>(&s)) return *p;
        bad(v, key, std::string("expected boolean, got ") + type_name(s));
    } else if constexpr (std::is_integral_v<T>) {
        if (auto p = std::get_if<std::int64_t>(&s)) {
            if (std::is_unsigned_v<T> && *p < 0) bad(v, key, "must be non-negative");
            return static_cast<T>(*p);
        }
        bad(v, key, std::string("expected integer, got ") + type_name(s));
    } else if constexpr (std::is_floating_point_v<T>) {
        if (auto p = std::get_if<double>(&s)) return *p;
        if (auto p = std::get_if<std::int64_t>(&s)) return static_cast<double>(*p);
        bad(v, key, std::string("expected number, got ") + type_name(s));
    } else {
        if (auto p = std::get_if<std::string>(&s)) return *p;
        bad(v, key, std::string("expected string, got ") + type_name(s));
    }
}

template <class T>
struct is_vector : std::false_type {};
template <class U>
struct is_vector<std::vector<U>> : std::true_type {};

template <class T>
T convert(const ConfigValue& v, const std::string& key) {
    if constexpr (is_vector<T>::value) {
        if (!v.is_array) bad(v, key, "expected an array");
        T out;
        for (const auto& s : v.items) out.push_back(convert_scalar<typename T::value_type>(s, v, key));
        return out;
    } else {
        if (v.is_array) bad(v, key, "expected a scalar, got an array");
        return convert_scalar<T>(v.items.front(), v, key);
    }
}

template <class T>
std::string dump_one(const T& x) {
    if constexpr (std::is_same_v<T, bool>)
        return x ? "true" : "false";
    else if constexpr (std::is_integral_v<T>)
        return std::to_string(x);
    else if constexpr (std::is_floating_point_v<T>) {
        std::string s = format_double(x);
        if (s.find_first_of(".eE") == std::string::npos) s += ".0";
        return s;
    } else
        return "\"" + x + "\"";
}

template <class T>
std::string dump(const T& x) {
    if constexpr (is_vector<T>::value) {
        std::string s = "[";
        for (std::size_t i = 0; i < x.size(); ++i) s += (i ? ", " : "") + dump_one(x[i]);
        return s + "]";
    } else {
        return dump_one(x);
    }
}

struct Field {
    std::string section, key;
    std::function<void(ExperimentConfig&, const ConfigValue&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

// Lower bound check applied to scalars and to each array element.
template <class T, class Get>
Field field(std::string section, std::string key, Get acc, std::function<bool(const T&)> ok = {},
            std::string requirement = {}) {
    Field f;
    f.section = section;
    f.key = key;
    const std::string full = section + "." + key;
    f.set = [acc, ok, requirement, full](ExperimentConfig& c, const ConfigValue& v) {
        T x = convert<T>(v, full);
        if (ok && !ok(x)) bad(v, full, requirement);
        acc(c) = std::move(x);
    };
    f.get = [acc](const ExperimentConfig& c) {
        return dump(acc(const_cast<ExperimentConfig&>(c)));
    };
    return f;
}

#define ACC(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

template <class T>
std::function<bool(const T&)> at_least(T lo) {
    return [lo](const T& x) { return x >= lo; };
}
std::function<bool(const double&)> positive() {
    return [](const double& x) { return x > 0.0; };
}
template <class T>
std::function<bool(const std::vector<T>&)> all_at_least(T lo, bool nonempty = true) {
    return [lo, nonempty](const std::vector<T>& v) {
        if (nonempty && v.empty()) return false;
        return std::all_of(v.begin(), v.end(), [lo](const T& x) { return x >= lo; });
    };
}

const std::vector<Field>& schema() {
    using I = std::int64_t;
    using S = std::size_t;
    using D = std::vector<double>;
    using IV = std::vector<std::int64_t>;
    static const std::vector<Field> fields = {
        field<std::uint64_t>("experiment", "seed", ACC(seed)),
        field<std::string>("experiment", "out", ACC(out_dir),
                           [](const std::string& s) { return !s.empty(); }, "must be non-empty"),
        field<std::vector<std::string>>("experiment", "datasets", ACC(datasets),
                                        [](const std::vector<std::string>& v) { return !v.empty(); },
                                        "must list at least one dataset"),
        field<bool>("experiment", "untrained", ACC(untrained)),

        field<I>("data", "n", ACC(n_train), at_least<I>(2), "must be >= 2"),
        field<double>("data", "noise_sd", ACC(noise_sd), at_least(0.0), "must be >= 0"),
        field<double>("data", "inner_factor", ACC(inner_factor),
                      [](const double& x) { return x > 0.0 && x < 1.0; }, "must lie in (0, 1)"),

        field<I>("schedule", "T", ACC(T), at_least<I>(1), "must be >= 1"),
        field<double>("schedule", "beta_min", ACC(beta_min), positive(), "must be > 0"),
        field<double>("schedule", "beta_max", ACC(beta_max),
                      [](const double& x) { return x > 0.0 && x < 1.0; }, "must lie in (0, 1)"),

        field<I>("pretrain", "epochs", ACC(pretrain_epochs), at_least<I>(0), "must be >= 0"),
        field<I>("pretrain", "batch", ACC(pretrain_batch), at_least<I>(1), "must be >= 1"),
        field<double>("pretrain", "lr", ACC(pretrain_lr), positive(), "must be > 0"),

        field<I>("train", "epochs", ACC(epochs), at_least<I>(0), "must be >= 0"),
        field<I>("train", "batch", ACC(batch), at_least<I>(1), "must be >= 1"),
        field<double>("train", "lr", ACC(lr), positive(), "must be > 0"),
        field<I>("train", "checkpoint_stride", ACC(checkpoint_stride), at_least<I>(0), "must be >= 0"),
        field<IV>("train", "checkpoint_epochs", ACC(checkpoint_epochs), all_at_least<I>(0, false),
                  "entries must be >= 0"),

        field<I>("bounds", "n_w2", ACC(n_w2), at_least<I>(2), "must be >= 2"),
        field<I>("bounds", "n_mc", ACC(n_mc), at_least<I>(2), "must be >= 2"),
        field<I>("bounds", "n_pairs", ACC(n_pairs), at_least<I>(1), "must be >= 1"),
        field<double>("bounds", "l2_max", ACC(l2_max), positive(), "must be > 0"),
        field<I>("bounds", "n_grid", ACC(n_grid), at_least<I>(2), "must be >= 2"),

        field<double>("fpcheck", "f", ACC(fp.f)),
        field<double>("fpcheck", "v0", ACC(fp.v0), positive(), "must be > 0"),
        field<double>("fpcheck", "beta_bar", ACC(fp.beta_bar), positive(), "must be > 0"),
        field<double>("fpcheck", "half_width", ACC(fp.half_width), positive(), "must be > 0"),
        field<S>("fpcheck", "ny", ACC(fp.ny), at_least<S>(8), "must be >= 8"),
        field<double>("fpcheck", "dt", ACC(fp.dt), at_least(0.0), "must be >= 0 (0 = automatic)"),
        field<double>("fpcheck", "dt_safety", ACC(fp.dt_safety),
                      [](const double& x) { return x > 0.0 && x <= 1.0; }, "must lie in (0, 1]"),
        field<std::string>("fpcheck", "scheme", ACC(fp_scheme),
                           [](const std::string& s) { return s == "exponential" || s == "upwind"; },
                           "must be \"exponential\" or \"upwind\""),
        field<double>("fpcheck", "t_end", ACC(fp.t_end), positive(), "must be > 0"),
        field<D>("fpcheck", "probes", ACC(fp.probes),
                 [](const D& v) {
                     return !v.empty() && std::all_of(v.begin(), v.end(), [](double x) { return x > 0; });
                 },
                 "must be a non-empty list of positive times"),
        field<S>("fpcheck", "n_paths", ACC(fp.n_paths), at_least<S>(100), "must be >= 100"),
        field<S>("fpcheck", "sde_substeps", ACC(fp.sde_substeps), at_least<S>(1), "must be >= 1"),
        field<S>("fpcheck", "mc_bin_factor", ACC(fp.mc_bin_factor), at_least<S>(1), "must be >= 1"),
        field<S>("fpcheck", "ode_particles", ACC(fp.ode_particles), at_least<S>(10), "must be >= 10"),
        field<std::uint64_t>("fpcheck", "seed", ACC(fp.seed)),
        field<double>("fpcheck", "tol_moments", ACC(fp.tol_moments), positive(), "must be > 0"),
        field<double>("fpcheck", "tol_stationary", ACC(fp.tol_stationary), positive(), "must be > 0"),
        field<double>("fpcheck", "tol_mass", ACC(fp.tol_mass), positive(), "must be > 0"),
        field<double>("fpcheck", "tol_mc_l1", ACC(fp.tol_mc_l1), positive(), "must be > 0"),
        field<double>("fpcheck", "tol_ode_w2", ACC(fp.tol_ode_w2), positive(), "must be > 0"),
        field<double>("fpcheck", "tol_roundtrip_l1", ACC(fp.tol_roundtrip_l1), positive(), "must be > 0"),
        field<double>("fpcheck", "min_refinement_ratio", ACC(fp.min_refinement_ratio), positive(),
                      "must be > 0"),

        field<double>("scoreapprox", "s0", ACC(sa_s0), positive(), "must be > 0"),
        field<double>("scoreapprox", "f", ACC(sa_f)),
        field<double>("scoreapprox", "eps", ACC(sa_eps),
                      [](const double& x) { return x > 0.0 && x < 1.0 / 2.718281828459045; },
                      "must lie in (0, 1/e)"),
        field<double>("scoreapprox", "beta_bar", ACC(sa_beta_bar), positive(), "must be > 0"),
        field<double>("scoreapprox", "beta_holder", ACC(sa_beta_holder), positive(), "must be > 0"),
        field<I>("scoreapprox", "s", ACC(sa_s), at_least<I>(0), "must be >= 0"),
        field<IV>("scoreapprox", "N", ACC(sa_N), all_at_least<I>(1), "must be a non-empty list of N >= 1"),
        field<double>("scoreapprox", "sweep_t", ACC(sa_sweep_t), positive(), "must be > 0"),
        field<D>("scoreapprox", "trend_t", ACC(sa_trend_t),
                 [](const D& v) {
                     return v.size() >= 2 && std::is_sorted(v.begin(), v.end()) &&
                            std::all_of(v.begin(), v.end(), [](double x) { return x > 0; });
                 },
                 "must list at least two increasing positive times"),
        field<D>("scoreapprox", "lemma_t", ACC(sa_lemma_t),
                 [](const D& v) {
                     return !v.empty() && std::all_of(v.begin(), v.end(), [](double x) { return x > 0; });
                 },
                 "must be a non-empty list of positive times"),
        field<I>("scoreapprox", "panels", ACC(sa_panels), at_least<I>(1), "must be >= 1"),
    };
    return fields;
}

#undef ACC

}  // namespace

ConfigError::ConfigError(std::string src, int ln, int cl, const std::string& msg)
    : std::runtime_error(where(src, ln, cl) + ": " + msg), source(std::move(src)), line(ln), col(cl) {}

ConfigValue parse_value_literal(std::string_view text, const std::string& source, int line,
                                int col) {
    Cursor c{text, 0, source, line, col};
    return parse_value(c);
}

ConfigDoc parse_config(std::string_view text, const std::string& source) {
    ConfigDoc doc;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (auto cp = comment_pos(line); cp != std::string_view::npos) line = line.substr(0, cp);

        Cursor c{line, 0, source, line_no, 1};
        c.skip_ws();
        if (c.done()) continue;
        if (c.peek() == '[') {
            ++c.i;
            c.skip_ws();
            const std::size_t b = c.i;
            while (!c.done() && is_ident(c.peek())) ++c.i;
            if (c.i == b) c.fail("expected a section name");
            section = std::string(line.substr(b, c.i - b));
            c.skip_ws();
            if (c.peek() != ']') c.fail("expected ']'");
            ++c.i;
            c.skip_ws();
            if (!c.done()) c.fail("trailing characters after section header");
            continue;
        }
        const std::size_t b = c.i;
        const int key_col = c.col();
        while (!c.done() && is_ident(c.peek())) ++c.i;
        if (c.i == b) c.fail("expected a key");
        const std::string key(line.substr(b, c.i - b));
        c.skip_ws();
        if (c.peek() != '=') c.fail("expected '=' after key '" + key + "'");
        ++c.i;
        if (section.empty()) throw ConfigError(source, line_no, key_col, "key '" + key + "' outside any [section]");
        const std::string full = section + "." + key;
        if (doc.count(full)) throw ConfigError(source, line_no, key_col, "duplicate key '" + full + "'");
        doc[full] = parse_value(c);
    }
    return doc;
}

void apply_env_overrides(ConfigDoc& doc, char** envp) {
    if (!envp) return;
    constexpr std::string_view prefix = "CARDLAB_";
    const auto keys = known_keys();
    for (char** e = envp; *e; ++e) {
        const std::string_view kv(*e);
        if (kv.substr(0, prefix.size()) != prefix) continue;
        const std::size_t eq = kv.find('=');
        if (eq == std::string_view::npos) continue;
        std::string name(kv.substr(prefix.size(), eq - prefix.size()));
        const std::size_t us = name.find('_');
        if (us == std::string::npos)
            throw ConfigError("env", 0, 0, std::string(kv.substr(0, eq)) + ": expected CARDLAB_<SECTION>_<KEY>");
        std::string section = name.substr(0, us), key = name.substr(us + 1);
        std::transform(section.begin(), section.end(), section.begin(), ::tolower);
        std::string full;
        for (const auto& k : keys) {
            // keys are matched case-insensitively (schedule.T)
            std::string lk = k;
            std::transform(lk.begin(), lk.end(), lk.begin(), ::tolower);
            std::string want = section + "." + key;
            std::transform(want.begin(), want.end(), want.begin(), ::tolower);
            if (lk == want) full = k;
        }
        const std::string var(kv.substr(0, eq));
        if (full.empty()) throw ConfigError("env", 0, 0, var + ": unknown configuration key");
        doc[full] = parse_value_literal(kv.substr(eq + 1), "env " + var, 0, 0);
    }
}

ExperimentConfig config_from_doc(const ConfigDoc& doc) {
    ExperimentConfig cfg;
    const auto& fields = schema();
    for (const auto& [name, value] : doc) {
        auto it = std::find_if(fields.begin(), fields.end(),
                               [&](const Field& f) { return f.section + "." + f.key == name; });
        if (it == fields.end()) throw ConfigError(value.source, value.line, value.col, "unknown key '" + name + "'");
        it->set(cfg, value);
    }
    cfg.fp.scheme = cfg.fp_scheme == "upwind" ? FpScheme::UpwindDiffusion : FpScheme::ExponentialFitting;
    if (auto it = doc.find("schedule.beta_min"); it != doc.end() && cfg.beta_min > cfg.beta_max)
        throw ConfigError(it->second.source, it->second.line, it->second.col,
                          "schedule.beta_min must not exceed schedule.beta_max");
    for (std::size_t i = 0; i < cfg.datasets.size(); ++i) {
        try {
            (void)dataset_kind_from_string(cfg.datasets[i]);
        } catch (const std::exception&) {
            const auto it = doc.find("experiment.datasets");
            throw ConfigError(it->second.source, it->second.line, it->second.col,
                              "unknown dataset '" + cfg.datasets[i] + "'");
        }
    }
    validate(cfg);
    return cfg;
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.beta_min > cfg.beta_max)
        throw ConfigError("config", 0, 0, "schedule.beta_min must not exceed schedule.beta_max");
    for (const auto& d : cfg.datasets) {
        try {
            (void)dataset_kind_from_string(d);
        } catch (const std::exception&) {
            throw ConfigError("config", 0, 0, "unknown dataset '" + d + "'");
        }
    }
    if (cfg.out_dir.empty()) throw ConfigError("config", 0, 0, "experiment.out must be non-empty");
}

std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    for (const auto& f : schema()) out.push_back(f.section + "." + f.key);
    return out;
}

std::string to_canonical(const ExperimentConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const auto& f : schema()) {
        if (f.section != section) {
            if (!section.empty()) os << "\n";
            section = f.section;
            os << "[" << section << "]\n";
        }
        os << f.key << " = " << f.get(cfg) << "\n";
    }
    return os.str();
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_canonical(cfg))));
    return buf;
}

}  // namespace cardlab::cli
