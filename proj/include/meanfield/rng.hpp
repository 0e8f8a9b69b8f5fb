#pragma once

#include <cstdint>

namespace meanfield {

/// Stream purposes. Together with a seed and an index they name an
/// independent random stream:
///
///   key = mix(seed, purpose, index)
///   draw #c of the stream = mix64(key + (c + 1) * golden)
///
/// Index conventions:
///   Init        index = particle i (pair index for antithetic ensembles)
///   Data        index 0        (SGD step k consumes a contiguous counter block)
///   Noise       index = particle i (counter = fine step * D + coordinate)
///   Frozen      index 0        (estimator sample set)
///   Rotation    index 0        (orthogonal matrix of the data model)
///   Study       index = job id
///
/// Adding particles never perturbs the streams of existing particles.
enum class Purpose : std::uint64_t {
    Init = 1,
    Data = 2,
    Noise = 3,
    Frozen = 4,
    Rotation = 5,
    Study = 6,
};

std::uint64_t mix64(std::uint64_t z);

/// Counter-based generator: every draw is a pure function of (key, counter),
/// so any stream position can be addressed directly.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, Purpose purpose, std::uint64_t index);

    static std::uint64_t derive_key(std::uint64_t seed, Purpose purpose, std::uint64_t index);

    std::uint64_t next_u64() { return at(counter_++); }
    /// Uniform on (0, 1), 53-bit resolution, never 0.
    double uniform() { return to_unit(next_u64()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();

    std::uint64_t at(std::uint64_t counter) const;
    /// Standard normal addressed by index; consumes counters 2*index, 2*index+1.
    double normal_at(std::uint64_t index) const;

    std::uint64_t counter() const { return counter_; }
    void seek(std::uint64_t counter) { counter_ = counter; }
    std::uint64_t key() const { return key_; }

    static double to_unit(std::uint64_t bits) {
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace meanfield
