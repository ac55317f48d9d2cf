#pragma once

#include <cmath>
#include <cstdint>

// Counter-based random streams. Every draw is a pure function of
// (seed, stream tags..., counter), so results do not depend on the order in
// which draws are made or on how work is split across threads. That property
// backs the reproducibility guarantees of the simulator, the particle filter
// and the experiment harness.
namespace linewatch {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Registry of stream tags so independent modules never collide on a key.
namespace streams {
constexpr std::uint64_t kSwingNoise = 1;    // simulator torque perturbations
constexpr std::uint64_t kPhasorNoise = 2;   // synthetic PMU voltage/angle noise
constexpr std::uint64_t kOutputNoise = 3;   // synthetic output-signal noise
constexpr std::uint64_t kParticleInit = 4;  // particle cloud initialization
constexpr std::uint64_t kParticleProp = 5;  // particle propagation noise
constexpr std::uint64_t kResample = 6;      // systematic resampling offsets
constexpr std::uint64_t kCalibration = 7;   // control-chart threshold search
constexpr std::uint64_t kScenario = 8;      // per-scenario seed derivation
}  // namespace streams

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Order-sensitive combination of a seed with any number of stream tags.
inline std::uint64_t mix_key(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Tags>
std::uint64_t mix_key(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return mix_key(splitmix64(seed ^ (tag + 0xD1B54A32D192ED03ull)), rest...);
}

// A keyed stream: draw i is independent of all other indices and streams.
class RngStream {
 public:
  RngStream() : key_(0) {}
  explicit RngStream(std::uint64_t key) : key_(key) {}

  template <typename... Tags>
  static RngStream of(std::uint64_t seed, Tags... tags) {
    return RngStream(mix_key(seed, static_cast<std::uint64_t>(tags)...));
  }

  std::uint64_t bits(std::uint64_t counter) const {
    return splitmix64(key_ ^ (counter * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull));
  }

  // Uniform on (0, 1]; never returns 0 so log(u) is always finite.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>((bits(counter) >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Deterministic per counter (no rejection).
  double normal(std::uint64_t counter) const {
    const double u1 = uniform(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

// Stateful convenience wrapper for call sites that just want a sequence.
class SequentialRng {
 public:
  explicit SequentialRng(RngStream stream) : stream_(stream) {}

  template <typename... Tags>
  static SequentialRng of(std::uint64_t seed, Tags... tags) {
    return SequentialRng(RngStream::of(seed, tags...));
  }

  double uniform() { return stream_.uniform(counter_++); }
  double normal() { return stream_.normal(counter_++); }
  std::uint64_t bits() { return stream_.bits(counter_++); }

 private:
  RngStream stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace linewatch
