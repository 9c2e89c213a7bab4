#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "nrlg/errors.hpp"

namespace nrlg {

// Dense row-major real array with an explicit shape. Carrier for images,
// flattened vectors, measurements and noise tensors. All library math is
// done in double precision; only the external-denoiser wire narrows to f32.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims)
      : dims_(std::move(dims)), data_(count(dims_), 0.0) {}

  Tensor(std::vector<std::size_t> dims, std::vector<double> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != count(dims_))
      throw shape_error("tensor payload size does not match shape");
  }

  static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<std::size_t> dims, double value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t ndim() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor& operator+=(const Tensor& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }

  // this += s * other
  void axpy(double s, const Tensor& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }

  double dot(const Tensor& o) const {
    check_same_shape(o);
    double acc = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) acc += data_[i] * o.data_[i];
    return acc;
  }

  double norm2() const { return std::sqrt(dot(*this)); }

  double norm_inf() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  void clamp(double lo, double hi) {
    for (double& v : data_) v = std::min(hi, std::max(lo, v));
  }

  static std::size_t count(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

  static std::string shape_string(const std::vector<std::size_t>& dims) {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(dims[i]);
    }
    return s + ")";
  }

 private:
  // Arithmetic is layout-tolerant: an (H,W) image and its flat (H*W) view
  // combine freely. Semantic shape checks happen at module boundaries.
  void check_same_shape(const Tensor& o) const {
    if (data_.size() != o.data_.size())
      throw shape_error("tensor size mismatch: " + shape_string(dims_) +
                        " vs " + shape_string(o.dims_));
  }

  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

inline double relative_l2_error(const Tensor& got, const Tensor& want) {
  double denom = want.norm2();
  if (denom == 0.0) return (got - want).norm2();
  return (got - want).norm2() / denom;
}

}  // namespace nrlg
