#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pcn {

// Deterministic RNG used everywhere. std::mt19937_64 is fully specified by
// the standard, and we roll our own uniform/normal transforms because the
// std::*_distribution classes are not bit-portable across library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive on both ends. Rejection-free modulo is fine at desk scale.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }

  // Standard normal via Box-Muller; caches the second draw.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = engine_() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// splitmix64 finalizer, used to derive independent child seeds.
inline uint64_t mix_seed(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
  return mix_seed(master ^ mix_seed(stream));
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index) {
  return mix_seed(derive_seed(master, stream) ^ mix_seed(index + 0x517cc1b727220a95ULL));
}

// Named stream tags so different pipeline stages never collide.
namespace streams {
constexpr uint64_t kDataset = 0x01;
constexpr uint64_t kBackboneInit = 0x02;
constexpr uint64_t kBaseClfInit = 0x03;
constexpr uint64_t kBaseTrain = 0x04;
constexpr uint64_t kEpisodeSample = 0x05;
constexpr uint64_t kNovelInit = 0x06;
constexpr uint64_t kCalibInit = 0x07;
constexpr uint64_t kEvalTask = 0x08;
constexpr uint64_t kGradCheck = 0x09;
}  // namespace streams

}  // namespace pcn
