#pragma once

#include <array>
#include <cstdint>

namespace cardlab {

// xoshiro256** seeded through splitmix64. Normals come from Box-Muller with
// the spare value cached, so a stream is reproducible across platforms as
// long as the call sequence is the same.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    // Independent stream for parallel work: seed + stream id, re-mixed.
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t next_u64();
    double uniform();                 // [0, 1)
    double uniform(double lo, double hi);
    double normal();                  // N(0, 1)
    std::uint64_t below(std::uint64_t n);  // uniform integer in [0, n)

private:
    std::array<std::uint64_t, 4> s_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace cardlab
