#include "cardlab/datasets.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "cardlab/rng.hpp"

namespace cardlab {

namespace {

constexpr double kPi = std::numbers::pi;

// numpy.linspace semantics, including the one-point case returning `lo`.
double linspace_at(double lo, double hi, std::size_t count, std::size_t i, bool endpoint) {
    if (count <= 1) return lo;
    const double div = endpoint ? static_cast<double>(count - 1) : static_cast<double>(count);
    return lo + (hi - lo) * static_cast<double>(i) / div;
}

void jitter(std::vector<LabeledSample>& out, double noise_sd, Rng& rng) {
    if (noise_sd <= 0.0) return;
    for (auto& s : out) {
        s.y0[0] += noise_sd * rng.normal();
        s.y0[1] += noise_sd * rng.normal();
    }
}

}  // namespace

int n_classes(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::Moons: return 2;
        case DatasetKind::Circles: return 2;
        case DatasetKind::Gaussian: return 1;
        case DatasetKind::GaussianMixture: return 4;
    }
    return 0;
}

std::string_view to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::Moons: return "moons";
        case DatasetKind::Circles: return "circles";
        case DatasetKind::Gaussian: return "gaussian";
        case DatasetKind::GaussianMixture: return "mixture";
    }
    return "?";
}

DatasetKind dataset_kind_from_string(std::string_view name) {
    if (name == "moons") return DatasetKind::Moons;
    if (name == "circles") return DatasetKind::Circles;
    if (name == "gaussian") return DatasetKind::Gaussian;
    if (name == "mixture" || name == "gaussian_mixture") return DatasetKind::GaussianMixture;
    throw std::invalid_argument("unknown dataset kind '" + std::string(name) + "'");
}

std::vector<LabeledSample> make_moons(std::size_t n, double noise_sd, std::uint64_t seed) {
    if (noise_sd < 0.0) throw std::invalid_argument("make_moons: noise_sd < 0");
    const std::size_t n_out = n / 2;
    const std::size_t n_in = n - n_out;
    std::vector<LabeledSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double a = linspace_at(0.0, kPi, n_out, i, true);
        out.push_back({{std::cos(a), std::sin(a)}, 0});
    }
    for (std::size_t i = 0; i < n_in; ++i) {
        const double a = linspace_at(0.0, kPi, n_in, i, true);
        out.push_back({{1.0 - std::cos(a), 1.0 - std::sin(a) - 0.5}, 1});
    }
    Rng rng(seed);
    jitter(out, noise_sd, rng);
    return out;
}

std::vector<LabeledSample> make_circles(std::size_t n, double noise_sd, double inner_factor,
                                        std::uint64_t seed) {
    if (!(inner_factor > 0.0 && inner_factor < 1.0))
        throw std::invalid_argument("make_circles: inner_factor must lie in (0, 1)");
    if (noise_sd < 0.0) throw std::invalid_argument("make_circles: noise_sd < 0");
    const std::size_t n_out = n / 2;
    const std::size_t n_in = n - n_out;
    std::vector<LabeledSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double a = linspace_at(0.0, 2.0 * kPi, n_out, i, false);
        out.push_back({{std::cos(a), std::sin(a)}, 0});
    }
    for (std::size_t i = 0; i < n_in; ++i) {
        const double a = linspace_at(0.0, 2.0 * kPi, n_in, i, false);
        out.push_back({{inner_factor * std::cos(a), inner_factor * std::sin(a)}, 1});
    }
    Rng rng(seed);
    jitter(out, noise_sd, rng);
    return out;
}

std::vector<LabeledSample> make_gaussian(std::size_t n, std::uint64_t seed) {
    const double sd = std::sqrt(0.1);
    Rng rng(seed);
    std::vector<LabeledSample> out(n);
    for (auto& s : out) {
        s.y0[0] = sd * rng.normal();
        s.y0[1] = sd * rng.normal();
        s.x = 0;
    }
    return out;
}

const std::array<Vec2, 4>& mixture_centers() {
    static const std::array<Vec2, 4> c{{{0.5, 0.5}, {-0.5, 0.5}, {-0.5, -0.5}, {0.5, -0.5}}};
    return c;
}

std::vector<LabeledSample> make_gaussian_mixture(std::size_t n, std::uint64_t seed,
                                                 MixtureAssignment assign) {
    const double sd = 0.1;  // variance 0.01
    Rng rng(seed);
    std::vector<LabeledSample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int k = assign == MixtureAssignment::RoundRobin ? static_cast<int>(i % 4)
                                                              : static_cast<int>(rng.below(4));
        const auto& c = mixture_centers()[static_cast<std::size_t>(k)];
        out[i].x = k;
        out[i].y0[0] = c[0] + sd * rng.normal();
        out[i].y0[1] = c[1] + sd * rng.normal();
    }
    return out;
}

std::vector<LabeledSample> make_dataset(const DatasetSpec& spec) {
    switch (spec.kind) {
        case DatasetKind::Moons: return make_moons(spec.n, spec.noise_sd, spec.seed);
        case DatasetKind::Circles:
            return make_circles(spec.n, spec.noise_sd, spec.inner_factor, spec.seed);
        case DatasetKind::Gaussian: return make_gaussian(spec.n, spec.seed);
        case DatasetKind::GaussianMixture: return make_gaussian_mixture(spec.n, spec.seed);
    }
    throw std::invalid_argument("make_dataset: bad kind");
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_samples_csv(std::ostream& os, const std::vector<LabeledSample>& samples,
                       std::string_view comment) {
    if (!comment.empty()) os << "# " << comment << '\n';
    os << "y1,y2,x\n";
    for (const auto& s : samples)
        os << format_double(s.y0[0]) << ',' << format_double(s.y0[1]) << ',' << s.x << '\n';
}

std::vector<LabeledSample> read_samples_csv(std::istream& is) {
    std::vector<LabeledSample> out;
    std::string line;
    bool header_seen = false;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "y1,y2,x")
                throw std::runtime_error("samples csv: expected header y1,y2,x");
            header_seen = true;
            continue;
        }
        LabeledSample s;
        const char* p = line.data();
        const char* end = p + line.size();
        for (int k = 0; k < 2; ++k) {
            auto r = std::from_chars(p, end, s.y0[static_cast<std::size_t>(k)]);
            if (r.ec != std::errc() || r.ptr == end || *r.ptr != ',')
                throw std::runtime_error("samples csv: bad number on line " + std::to_string(lineno));
            p = r.ptr + 1;
        }
        auto r = std::from_chars(p, end, s.x);
        if (r.ec != std::errc())
            throw std::runtime_error("samples csv: bad class on line " + std::to_string(lineno));
        out.push_back(s);
    }
    return out;
}

}  // namespace cardlab
