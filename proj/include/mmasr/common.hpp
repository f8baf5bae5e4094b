#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace mmasr {

#ifdef MMASR_SINGLE_PRECISION
using real_t = float;
#else
using real_t = double;
#endif

inline constexpr const char* kToolVersion = "0.1.0";

// Error taxonomy; the CLI maps these onto stable exit codes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Stable seed derivation for per-item sub-streams (utterance k, variant j, ...).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64_str(const std::string& s);

// Deterministic RNG: mt19937_64 (bit-exact per the standard) plus fixed
// uniform/gaussian mappings, so streams reproduce across platforms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    std::size_t uniform_index(std::size_t n);

    double gaussian();
    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mmasr
