#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace cbn {

/// Portable deterministic generator.
///
/// The stream is xoshiro256** with its four state words filled by splitmix64
/// from the seed. Uniform doubles take the top 53 bits; normals use the
/// Box-Muller transform and cache the second variate. Nothing here depends
/// on the standard library's distribution objects, so the integer and uniform
/// streams are identical on every platform; normals additionally go through
/// libm's log/sin/cos.
class Rng {
 public:
  struct State {
    std::array<std::uint64_t, 4> words{};
    bool has_spare = false;
    double spare = 0.0;

    friend bool operator==(const State&, const State&) = default;
  };

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  State state() const { return state_; }
  void restore(const State& s) { state_ = s; }

 private:
  State state_;
};

}  // namespace cbn
