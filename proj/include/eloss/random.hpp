#pragma once

#include <cstdint>
#include <random>

namespace eloss {

/// Root seed for all Monte Carlo work. Path `i` draws from its own substream,
/// so results never depend on which thread simulated which path.
struct RngSpec {
    std::uint64_t seed = 42;
};

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Gaussian stream for one path id.
class PathRng {
public:
    PathRng(RngSpec spec, std::uint64_t path_id)
        : engine_(detail::splitmix64(detail::splitmix64(spec.seed) ^ detail::splitmix64(path_id + 0x632BE59BD9B4E019ull))) {}

    double normal() { return dist_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace eloss
