#pragma once

#include <cstdint>
#include <random>

#include "nrlg/tensor.hpp"

namespace nrlg {

// Deterministic random source for the whole artifact.
//
// Engine: std::mt19937_64, whose integer stream is pinned by the C++
// standard and therefore identical on every platform for a given seed.
// Uniforms take the top 53 bits of each output; Gaussians use the basic
// Box-Muller transform (pairs generated together, second value cached).
// std::normal_distribution is deliberately avoided because its algorithm
// is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in (0, 1]; never returns 0 so log() below is safe.
  double uniform01() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  void fill_gaussian(Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = gaussian();
  }

  Tensor gaussian_tensor(std::vector<std::size_t> dims) {
    Tensor t(std::move(dims));
    fill_gaussian(t);
    return t;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stateless mix used to derive independent per-item seeds from a base
// seed (fan-out over measurement directories). splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = index + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z = z ^ (z >> 31);
  return base ^ z;
}

}  // namespace nrlg
