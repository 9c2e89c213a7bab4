#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "nrlg/errors.hpp"
#include "nrlg/tensor.hpp"

namespace nrlg {

struct ImageGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t pixel_count() const { return height * width * channels; }

  std::vector<std::size_t> dims() const {
    if (channels == 1) return {height, width};
    return {height, width, channels};
  }
};

struct OperatorShape {
  std::size_t input_dim = 0;   // N
  std::size_t output_dim = 0;  // M
  ImageGeometry geometry;      // geometry of the input image
};

// Thin SVD A = U S V^T with k = min(M, N) retained columns, exposed as
// apply/adjoint closures so implicit factorizations (DFT-based circulants)
// fit the same mold as explicit ones. Singular values of implicit
// factorizations are not required to be sorted.
struct SvdFactors {
  std::vector<double> singular_values;                  // length k
  std::function<Tensor(const Tensor&)> u_apply;         // R^k -> R^M
  std::function<Tensor(const Tensor&)> u_adjoint;       // R^M -> R^k
  std::function<Tensor(const Tensor&)> v_apply;         // R^k -> R^N
  std::function<Tensor(const Tensor&)> v_adjoint;       // R^N -> R^k

  Tensor reconstruct_apply(const Tensor& x) const {
    Tensor w = v_adjoint(x);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= singular_values[i];
    return u_apply(w);
  }
};

// Serializable description of a degradation operator: kind plus the
// parameters (including seeds) needed to rebuild it bit-exactly.
struct OperatorDescriptor {
  std::string kind;
  std::map<std::string, double> params;
  std::map<std::string, std::string> text_params;
};

// Known linear degradation A from measurement model y = A x + z.
// Implementations are immutable after construction and safe to share
// across concurrent restorations.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;

  virtual const OperatorShape& shape() const = 0;
  virtual Tensor apply(const Tensor& x) const = 0;
  virtual Tensor adjoint(const Tensor& y) const = 0;

  virtual bool has_svd() const { return false; }
  virtual bool exact_kernel_solve() const { return false; }

  virtual SvdFactors svd_factors() const {
    throw capability_error("operator '" + descriptor().kind +
                           "' has no SVD factorization");
  }

  // Solves (c * A A^T + sigma2 * I) v = r. Default falls back to the
  // iterative conjugate-gradient path; structured operators override
  // with direct formulas.
  virtual Tensor kernel_solve(double c, double sigma2, const Tensor& r) const;

  virtual OperatorDescriptor descriptor() const = 0;

 protected:
  void check_input(const Tensor& x) const {
    if (x.size() != shape().input_dim)
      throw shape_error("operator input size " + std::to_string(x.size()) +
                        " != N=" + std::to_string(shape().input_dim));
  }
  void check_output(const Tensor& y) const {
    if (y.size() != shape().output_dim)
      throw shape_error("operator output size " + std::to_string(y.size()) +
                        " != M=" + std::to_string(shape().output_dim));
  }
};

// Conjugate gradients on the SPD system (c*AA^T + sigma2*I) v = r.
// Well-posed whenever sigma2 > 0 or A has full row rank with c > 0.
// Exposed separately so tests can force the iterative path on operators
// that also have direct solves.
inline Tensor kernel_solve_cg(const LinearOperator& op, double c, double sigma2,
                              const Tensor& r, double tol = 1e-8,
                              std::size_t max_iter = 0) {
  if (c < 0.0 || sigma2 < 0.0)
    throw domain_error("kernel_solve: c and sigma2 must be nonnegative");
  if (c == 0.0 && sigma2 == 0.0)
    throw solver_error("kernel_solve: c and sigma2 both zero, system singular");
  const std::size_t m = op.shape().output_dim;
  if (r.size() != m) throw shape_error("kernel_solve: rhs size != M");
  if (max_iter == 0) max_iter = 10 * m;

  auto system_apply = [&](const Tensor& v) {
    Tensor out = c > 0.0 ? op.apply(op.adjoint(v)) * c : Tensor(v.dims());
    if (sigma2 > 0.0) out.axpy(sigma2, v);
    return out;
  };

  Tensor x(r.dims());
  Tensor resid = r;  // r - S*0
  Tensor p = resid;
  double rr = resid.dot(resid);
  const double stop = tol * std::sqrt(r.dot(r));
  if (std::sqrt(rr) <= stop) return x;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Tensor sp = system_apply(p);
    double denom = p.dot(sp);
    if (!(denom > 0.0))
      throw solver_error("kernel_solve: system not positive definite");
    double step = rr / denom;
    x.axpy(step, p);
    resid.axpy(-step, sp);
    double rr_new = resid.dot(resid);
    if (std::sqrt(rr_new) <= stop) return x;
    p *= rr_new / rr;
    p += resid;
    rr = rr_new;
  }
  throw solver_error("kernel_solve: no convergence after " +
                     std::to_string(max_iter) + " iterations");
}

inline Tensor LinearOperator::kernel_solve(double c, double sigma2,
                                           const Tensor& r) const {
  return kernel_solve_cg(*this, c, sigma2, r);
}

}  // namespace nrlg
