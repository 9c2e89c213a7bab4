#pragma once

#include <cstdint>

#include "nrlg/linop.hpp"
#include "nrlg/rng.hpp"
#include "nrlg/tensor.hpp"

namespace nrlg {

// Degraded measurement plus everything needed to replay it bit-for-bit.
struct Measurement {
  Tensor y;
  double sigma_y = 0.0;
  OperatorDescriptor operator_descriptor;
  ImageGeometry geometry;
  std::uint64_t noise_seed = 0;
  std::string source_image;  // optional provenance
};

// y = A x0 + sigma_y * g with g drawn from the seed. Noise is added in
// measurement space, after A; y is never clipped.
inline Measurement degrade(const LinearOperator& op, const Tensor& x0,
                           double sigma_y, std::uint64_t seed) {
  if (x0.size() != op.shape().input_dim)
    throw shape_error("degrade: image does not match operator input");
  if (!(sigma_y >= 0.0)) throw domain_error("degrade: sigma_y must be >= 0");
  Measurement m;
  m.y = op.apply(x0);
  if (sigma_y > 0.0) {
    Rng rng(seed);
    for (std::size_t i = 0; i < m.y.size(); ++i)
      m.y[i] += sigma_y * rng.gaussian();
  }
  m.sigma_y = sigma_y;
  m.operator_descriptor = op.descriptor();
  m.geometry = op.shape().geometry;
  m.noise_seed = seed;
  return m;
}

}  // namespace nrlg
