#include "afo/numerics.hpp"

#include <doctest.h>

#include <cmath>

using namespace afo;

TEST_CASE("zero covariance gives the mean exactly") {
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    RngStream s(seed, {0, StreamPurpose::setup, 0});
    const VectorD x = sample_gaussian_vector(s, VectorD::Zero(2), MatrixD::Zero(2, 2));
    CHECK(x(0) == 0.0);
    CHECK(x(1) == 0.0);
  }
}

TEST_CASE("sample mean of N((5,5), I) over 1e5 draws") {
  RngStream s(7, {0, StreamPurpose::setup, 0});
  GaussianSampler g(VectorD::Constant(2, 5.0), MatrixD::Identity(2, 2));
  VectorD sum = VectorD::Zero(2);
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += g.sample(s);
  const VectorD mean = sum / n;
  CHECK(std::abs(mean(0) - 5.0) < 0.02);
  CHECK(std::abs(mean(1) - 5.0) < 0.02);
}

TEST_CASE("same seed and stream give bit-identical samples") {
  MatrixD cov(2, 2);
  cov << 2.0, 0.3, 0.3, 1.0;
  RngStream a(42, {3, StreamPurpose::step, 1});
  RngStream b(42, {3, StreamPurpose::step, 1});
  for (int i = 0; i < 10; ++i) {
    const VectorD x = sample_gaussian_vector(a, VectorD::Zero(2), cov);
    const VectorD y = sample_gaussian_vector(b, VectorD::Zero(2), cov);
    CHECK(x == y);
  }
}

TEST_CASE("distinct stream ids diverge") {
  RngStream a(42, {0, StreamPurpose::step, 0});
  RngStream b(42, {1, StreamPurpose::step, 0});
  RngStream c(42, {0, StreamPurpose::estimate, 0});
  RngStream d(43, {0, StreamPurpose::step, 0});
  const double x = a.normal();
  CHECK(x != b.normal());
  CHECK(x != c.normal());
  CHECK(x != d.normal());
}

TEST_CASE("derived streams are deterministic and distinct") {
  RngStream base(5, {2, StreamPurpose::step, 0});
  auto c1 = base.derive(10);
  auto c2 = base.derive(10);
  auto c3 = base.derive(11);
  const double v = c1.normal();
  CHECK(v == c2.normal());
  CHECK(v != c3.normal());
}

TEST_CASE("independent streams are uncorrelated") {
  RngStream a(1, {0, StreamPurpose::step, 0});
  RngStream b(1, {1, StreamPurpose::step, 0});
  const int n = 100000;
  double sxy = 0.0;
  for (int i = 0; i < n; ++i) sxy += a.normal() * b.normal();
  // standard error of the sample correlation is 1/sqrt(n)
  CHECK(std::abs(sxy / n) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("orthogonal matrices") {
  SUBCASE("d = 1 is +-1") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      RngStream s(seed, {0, StreamPurpose::setup, 2});
      const MatrixD p = sample_orthogonal_matrix(s, 1);
      REQUIRE(p.rows() == 1);
      CHECK(std::abs(p(0, 0)) == 1.0);
    }
  }
  SUBCASE("d = 10 orthogonality and determinant") {
    RngStream s(11, {0, StreamPurpose::setup, 2});
    for (int rep = 0; rep < 5; ++rep) {
      const MatrixD p = sample_orthogonal_matrix(s, 10);
      const MatrixD e = p.transpose() * p - MatrixD::Identity(10, 10);
      CHECK(e.cwiseAbs().maxCoeff() < 1e-10);
      CHECK(std::abs(std::abs(p.determinant()) - 1.0) < 1e-8);
    }
  }
  SUBCASE("distinct streams, d = 2") {
    RngStream a(3, {0, StreamPurpose::setup, 2});
    RngStream b(3, {1, StreamPurpose::setup, 2});
    CHECK(!sample_orthogonal_matrix(a, 2).isApprox(sample_orthogonal_matrix(b, 2)));
  }
  SUBCASE("d < 1 rejected") {
    RngStream s(3, {0, StreamPurpose::setup, 2});
    CHECK_THROWS(sample_orthogonal_matrix(s, 0));
  }
}

TEST_CASE("Haar first column is uniform on the circle") {
  // E[P_00^2] = 1/d for Haar matrices; the sign correction matters here.
  const int n = 20000;
  double m = 0.0, m1 = 0.0;
  for (int i = 0; i < n; ++i) {
    RngStream s(static_cast<std::uint64_t>(i), {0, StreamPurpose::setup, 2});
    const MatrixD p = sample_orthogonal_matrix(s, 2);
    m += p(0, 0) * p(0, 0);
    m1 += p(0, 0);
  }
  CHECK(std::abs(m / n - 0.5) < 0.02);
  CHECK(std::abs(m1 / n) < 0.03);
}

TEST_CASE("psd factor") {
  SUBCASE("positive definite") {
    MatrixD c(3, 3);
    c << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
    const MatrixD f = psd_factor(c);
    CHECK((f * f.transpose() - c).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("rank deficient") {
    VectorD u(3);
    u << 1, 2, -1;
    const MatrixD c = u * u.transpose();
    const MatrixD f = psd_factor(c);
    CHECK((f * f.transpose() - c).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("indefinite rejected") {
    MatrixD c(2, 2);
    c << 1, 0, 0, -1;
    CHECK_THROWS(psd_factor(c));
  }
  SUBCASE("asymmetric rejected") {
    MatrixD c(2, 2);
    c << 1, 0.5, 0, 1;
    CHECK_THROWS(psd_factor(c));
  }
}

TEST_CASE("matrix helpers") {
  MatrixD a(2, 2);
  a << 2, 1, 1, 2;
  CHECK(is_symmetric(a));
  CHECK(is_spd(a));
  const VectorD ev = symmetric_eigenvalues(a);
  CHECK(ev(0) == doctest::Approx(1.0));
  CHECK(ev(1) == doctest::Approx(3.0));
  CHECK(spectral_norm(a) == doctest::Approx(3.0));
  MatrixD b(2, 2);
  b << 1, 0, 0, 0;
  CHECK(!is_spd(b));
  CHECK_THROWS(require_same_size(VectorD::Zero(2), VectorD::Zero(3), "test"));
  VectorD v(2);
  v << 1.0, std::nan("");
  CHECK(!all_finite(v));
}
