#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace cardlab {

using Vec2 = std::array<double, 2>;

struct LabeledSample {
    Vec2 y0{};
    int x = 0;  // class index, used one-hot downstream
};

enum class DatasetKind { Moons, Circles, Gaussian, GaussianMixture };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Moons;
    std::size_t n = 1000;
    double noise_sd = 0.05;
    double inner_factor = 0.5;
    std::uint64_t seed = 0;
};

enum class MixtureAssignment { Uniform, RoundRobin };

int n_classes(DatasetKind kind);
std::string_view to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(std::string_view name);  // throws on unknown

std::vector<LabeledSample> make_moons(std::size_t n, double noise_sd, std::uint64_t seed);
std::vector<LabeledSample> make_circles(std::size_t n, double noise_sd, double inner_factor,
                                        std::uint64_t seed);
std::vector<LabeledSample> make_gaussian(std::size_t n, std::uint64_t seed);
std::vector<LabeledSample> make_gaussian_mixture(
    std::size_t n, std::uint64_t seed, MixtureAssignment assign = MixtureAssignment::Uniform);

std::vector<LabeledSample> make_dataset(const DatasetSpec& spec);

// Component centres of the four-class mixture, indexed by class.
const std::array<Vec2, 4>& mixture_centers();

// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

// CSV with header `y1,y2,x`. An optional comment line is emitted first as "# ...".
void write_samples_csv(std::ostream& os, const std::vector<LabeledSample>& samples,
                       std::string_view comment = {});
std::vector<LabeledSample> read_samples_csv(std::istream& is);

}  // namespace cardlab
