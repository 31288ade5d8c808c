#pragma once
// Shared error types, angle helpers and deterministic RNG plumbing.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bic {

struct NonSquareImage : std::runtime_error {
  explicit NonSquareImage(const std::string& m) : std::runtime_error(m) {}
};
struct BeamBoundExceeded : std::runtime_error {
  explicit BeamBoundExceeded(const std::string& m) : std::runtime_error(m) {}
};
struct MaskOutOfGrid : std::runtime_error {
  explicit MaskOutOfGrid(const std::string& m) : std::runtime_error(m) {}
};
struct SizeMismatch : std::runtime_error {
  explicit SizeMismatch(const std::string& m) : std::runtime_error(m) {}
};
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& m) : std::runtime_error(m) {}
};
struct NotInSubgroup : std::runtime_error {
  explicit NotInSubgroup(const std::string& m) : std::runtime_error(m) {}
};
struct DegenerateDistribution : std::runtime_error {
  explicit DegenerateDistribution(const std::string& m) : std::runtime_error(m) {}
};
struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& m) : std::runtime_error(m) {}
};
struct NonFiniteActivation : std::runtime_error {
  explicit NonFiniteActivation(const std::string& m) : std::runtime_error(m) {}
};
struct GradCheckFailure : std::runtime_error {
  explicit GradCheckFailure(const std::string& m) : std::runtime_error(m) {}
};
struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& m) : std::runtime_error(m) {}
};
struct EmptyDataset : std::runtime_error {
  explicit EmptyDataset(const std::string& m) : std::runtime_error(m) {}
};
struct MixedSizes : std::runtime_error {
  explicit MixedSizes(const std::string& m) : std::runtime_error(m) {}
};
struct UnreadableFile : std::runtime_error {
  explicit UnreadableFile(const std::string& m) : std::runtime_error(m) {}
};

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// 0-indexed grid center; equals 1-indexed round-half-up(n/2).
inline int center_pixel(int n) { return (n - 1) / 2; }

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Decorrelated stream for (seed, index) pairs; generation order independent.
inline uint64_t stream_seed(uint64_t seed, uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x51ed2701ULL));
}

// mt19937_64 with hand-rolled transforms; std:: distributions are
// implementation defined and would break cross-run bit determinism.
class Rng {
 public:
  explicit Rng(uint64_t seed) : s0_(splitmix64(seed)), s1_(splitmix64(splitmix64(seed))) {
    if (s0_ == 0 && s1_ == 0) s1_ = 0x9e3779b97f4a7c15ULL;
  }

  uint64_t next_u64() {
    // xoroshiro128+, fixed algorithm, no library dependence.
    uint64_t a = s0_, b = s1_;
    uint64_t r = a + b;
    b ^= a;
    s0_ = rotl(a, 24) ^ b ^ (b << 16);
    s1_ = rotl(b, 37);
    return r;
  }

  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n) by rejection, bias free
  uint64_t below(uint64_t n) {
    uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do { x = next_u64(); } while (x >= lim);
    return x % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do { u1 = uniform(); } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s0_, s1_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// deterministic Fisher-Yates
template <class T>
void shuffle_indices(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = size_t(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace bic
