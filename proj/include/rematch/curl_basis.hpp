#pragma once

// Divergence-free basis fields on the unit box [0,1]^d built from the
// scalar potentials phi(x) = prod_l sin(j_l * pi * x_l).
//
//   d = 3: three fields per frequency tuple, curl(phi e_l) = grad(phi) x e_l
//   d = 2: one field per tuple, the rotated gradient (-d2 phi, d1 phi)
//
// Values and Jacobians are analytic, so div = trace(J) vanishes up to
// rounding.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rematch/tensor_kit.hpp"

namespace rematch {

using Frequency = std::vector<int>;

class CurlField {
 public:
  CurlField(Frequency freq, int component)
      : freq_(std::move(freq)), component_(component) {}

  int dim() const { return static_cast<int>(freq_.size()); }
  const Frequency& frequency() const { return freq_; }
  /// Axis l of curl(phi e_l) in 3D; always 0 in 2D.
  int component() const { return component_; }

  Vector value(const Vector& x) const {
    const Potential p = potential(x, false);
    const int d = dim();
    Vector v(d);
    if (d == 2) {
      v << -p.grad(1), p.grad(0);
      return v;
    }
    for (int a = 0; a < 3; ++a) {
      v(a) = 0.0;
      for (int b = 0; b < 3; ++b) v(a) += levi_civita(a, b, component_) * p.grad(b);
    }
    return v;
  }

  Matrix jacobian(const Vector& x) const {
    const Potential p = potential(x, true);
    const int d = dim();
    Matrix j(d, d);
    if (d == 2) {
      j.row(0) = -p.hess.row(1);
      j.row(1) = p.hess.row(0);
      return j;
    }
    for (int a = 0; a < 3; ++a)
      for (int m = 0; m < 3; ++m) {
        j(a, m) = 0.0;
        for (int b = 0; b < 3; ++b)
          j(a, m) += levi_civita(a, b, component_) * p.hess(b, m);
      }
    return j;
  }

  double divergence(const Vector& x) const { return jacobian(x).trace(); }

 private:
  struct Potential {
    Vector grad;
    Matrix hess;
  };

  static int levi_civita(int i, int j, int k) {
    if (i == j || j == k || i == k) return 0;
    return ((i + 1) % 3 == j) ? 1 : -1;
  }

  Potential potential(const Vector& x, bool with_hessian) const {
    const int d = dim();
    Vector k(d), s(d), c(d);
    for (int l = 0; l < d; ++l) {
      k(l) = freq_[l] * std::numbers::pi;
      s(l) = std::sin(k(l) * x(l));
      c(l) = std::cos(k(l) * x(l));
    }
    // Product of sines over all axes except the excluded ones.
    auto prod_except = [&](int e1, int e2) {
      double p = 1.0;
      for (int l = 0; l < d; ++l)
        if (l != e1 && l != e2) p *= s(l);
      return p;
    };
    Potential p;
    p.grad.resize(d);
    for (int a = 0; a < d; ++a) p.grad(a) = k(a) * c(a) * prod_except(a, -1);
    if (with_hessian) {
      p.hess.resize(d, d);
      const double phi = prod_except(-1, -1);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          p.hess(a, b) = (a == b) ? -k(a) * k(a) * phi
                                  : k(a) * k(b) * c(a) * c(b) * prod_except(a, b);
    }
    return p;
  }

  Frequency freq_;
  int component_;
};

using CurlBasis = std::vector<CurlField>;

inline CurlBasis build_curl_basis(const std::vector<Frequency>& frequencies,
                                  int d) {
  if (d != 2 && d != 3) throw UnsupportedDimension(d);
  CurlBasis basis;
  for (const auto& f : frequencies) {
    if (static_cast<int>(f.size()) != d)
      throw InvalidArgument("build_curl_basis: frequency tuple of length " +
                            std::to_string(f.size()) + " for d=" +
                            std::to_string(d));
    for (int j : f)
      if (j < 1)
        throw InvalidArgument("build_curl_basis: frequencies must be positive");
    if (d == 2) {
      basis.emplace_back(f, 0);
    } else {
      for (int l = 0; l < 3; ++l) basis.emplace_back(f, l);
    }
  }
  return basis;
}

/// d x K matrix whose columns are the basis fields evaluated at x.
inline Matrix basis_matrix(const CurlBasis& basis, const Vector& x) {
  Matrix m(x.size(), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t j = 0; j < basis.size(); ++j)
    m.col(static_cast<Eigen::Index>(j)) = basis[j].value(x);
  return m;
}

inline Vector combo_value(const CurlBasis& basis, const Vector& beta,
                          const Vector& x) {
  Vector v = Vector::Zero(x.size());
  for (std::size_t j = 0; j < basis.size(); ++j)
    v += beta(static_cast<Eigen::Index>(j)) * basis[j].value(x);
  return v;
}

inline Matrix combo_jacobian(const CurlBasis& basis, const Vector& beta,
                             const Vector& x) {
  Matrix jac = Matrix::Zero(x.size(), x.size());
  for (std::size_t j = 0; j < basis.size(); ++j)
    jac += beta(static_cast<Eigen::Index>(j)) * basis[j].jacobian(x);
  return jac;
}

}  // namespace rematch
