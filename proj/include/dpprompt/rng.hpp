#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dpprompt {

// Counter-based 64-bit generator: output i is the SplitMix64 finalizer applied
// to key + i * golden_gamma. Gaussian draws use the inverse normal CDF
// (Wichura AS241), so a (key, counter) pair fixes every draw bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  // Uniform integer in [0, n); unbiased. n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

// Inverse of the standard normal CDF for p in (0, 1).
double inverse_normal_cdf(double p);

}  // namespace dpprompt
