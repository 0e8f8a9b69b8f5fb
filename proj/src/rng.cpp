#include "meanfield/rng.hpp"

#include <cmath>
#include <numbers>

namespace meanfield {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, Purpose purpose, std::uint64_t index)
    : key_(derive_key(seed, purpose, index)) {}

std::uint64_t CounterRng::derive_key(std::uint64_t seed, Purpose purpose, std::uint64_t index) {
    std::uint64_t k = mix64(seed + kGolden);
    k = mix64(k ^ (static_cast<std::uint64_t>(purpose) * 0xD1B54A32D192ED03ULL));
    k = mix64(k ^ (index + 1) * 0x8CB92BA72F3D8DD7ULL);
    return k;
}

std::uint64_t CounterRng::at(std::uint64_t counter) const { return mix64(key_ + (counter + 1) * kGolden); }

double CounterRng::normal_at(std::uint64_t index) const {
    const double u1 = to_unit(at(2 * index));
    const double u2 = to_unit(at(2 * index + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double CounterRng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace meanfield
