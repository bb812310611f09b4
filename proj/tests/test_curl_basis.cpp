#include <gtest/gtest.h>

#include <numbers>

#include "test_support.hpp"

namespace rematch {
namespace {

constexpr double kPi = std::numbers::pi;

double fd_divergence(const CurlField& f, const Vector& x, double h) {
  double div = 0.0;
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vector xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    div += (f.value(xp)(c) - f.value(xm)(c)) / (2.0 * h);
  }
  return div;
}

TEST(CurlBasis, ThreeFieldsPerTupleIn3d) {
  Rng rng(1);
  const CurlBasis basis = build_curl_basis({{1, 1, 1}}, 3);
  ASSERT_EQ(basis.size(), 3u);
  for (const auto& f : basis)
    for (int i = 0; i < 100; ++i) EXPECT_LE(std::abs(f.divergence(rng.uniform_matrix(3, 1, 0, 1))), 1e-12);
}

TEST(CurlBasis, RotatedGradientIn2d) {
  Rng rng(2);
  const CurlBasis basis = build_curl_basis({{1, 1}}, 2);
  ASSERT_EQ(basis.size(), 1u);
  for (int i = 0; i < 50; ++i) {
    const Vector x = rng.uniform_matrix(2, 1, 0, 1);
    Vector expected(2);
    expected << -kPi * std::sin(kPi * x(0)) * std::cos(kPi * x(1)),
        kPi * std::cos(kPi * x(0)) * std::sin(kPi * x(1));
    EXPECT_LE((basis[0].value(x) - expected).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE(std::abs(basis[0].divergence(x)), 1e-12);
  }
}

TEST(CurlBasis, FourTuplesGiveTwelveFields) {
  Rng rng(3);
  const CurlBasis basis = build_curl_basis({{1, 1, 1}, {2, 1, 1}, {1, 2, 3}, {2, 2, 1}}, 3);
  ASSERT_EQ(basis.size(), 12u);
  for (const auto& f : basis)
    for (int i = 0; i < 50; ++i)
      EXPECT_LE(std::abs(fd_divergence(f, rng.uniform_matrix(3, 1, 0, 1), 1e-5)), 1e-6);
}

TEST(CurlBasis, JacobianMatchesFiniteDifferences) {
  Rng rng(4);
  for (int d : {2, 3}) {
    const CurlBasis basis =
        build_curl_basis(d == 2 ? std::vector<Frequency>{{2, 1}} : std::vector<Frequency>{{1, 2, 1}}, d);
    for (const auto& f : basis)
      for (int i = 0; i < 20; ++i) {
        const Vector x = rng.uniform_matrix(d, 1, 0.1, 0.9);
        Matrix fd(d, d);
        for (int c = 0; c < d; ++c) {
          Vector xp = x, xm = x;
          xp(c) += 1e-6;
          xm(c) -= 1e-6;
          fd.col(c) = (f.value(xp) - f.value(xm)) / 2e-6;
        }
        EXPECT_LE((fd - f.jacobian(x)).cwiseAbs().maxCoeff(), 1e-7);
      }
  }
}

TEST(CurlBasis, VanishesNormalToBoundary) {
  // phi vanishes on the box faces, so curl(phi e_l) has zero normal component there.
  Rng rng(5);
  const CurlBasis basis = build_curl_basis({{1, 2, 1}}, 3);
  for (const auto& f : basis)
    for (int face = 0; face < 3; ++face) {
      Vector x = rng.uniform_matrix(3, 1, 0, 1);
      x(face) = 0.0;
      EXPECT_LE(std::abs(f.value(x)(face)), 1e-12);
    }
}

TEST(CurlBasis, Errors) {
  EXPECT_THROW(build_curl_basis({{1, 1, 1, 1}}, 4), UnsupportedDimension);
  EXPECT_THROW(build_curl_basis({{1, 1}}, 3), InvalidArgument);
  EXPECT_THROW(build_curl_basis({{0, 1}}, 2), InvalidArgument);
}

TEST(CurlBasis, ComboIsLinear) {
  Rng rng(6);
  const CurlBasis basis = build_curl_basis({{1, 1, 1}, {1, 1, 2}}, 3);
  const Vector beta = rng.normal_vector(6);
  const Vector x = rng.uniform_matrix(3, 1, 0, 1);
  EXPECT_LE((combo_value(basis, beta, x) - basis_matrix(basis, x) * beta).norm(), 1e-13);
  EXPECT_LE(std::abs(combo_jacobian(basis, beta, x).trace()), 1e-11);
}

}  // namespace
}  // namespace rematch
