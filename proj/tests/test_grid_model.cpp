#include <doctest.h>

#include <cmath>

#include "gridgp/grid_model.hpp"
#include "test_support.hpp"

using namespace gridgp;

namespace {

const char* kTriangle = R"(
base_freq_hz = 60
base_mva = 100
[buses]
1, generator
2, generator
3, generator
[branches]
1, 2, 0.1
2, 3, 0.1
1, 3, 0.1
[generators]
1, 5.0, 2.0
2, 5.0, 2.0
3, 5.0, 2.0
)";

}  // namespace

TEST_CASE("triangle case builds the susceptance Laplacian") {
  CaseFile cf = parse_case(kTriangle);
  REQUIRE(cf.buses.size() == 3);
  REQUIRE(cf.branches.size() == 3);
  GridModel m = build_model(cf, false);
  for (int i = 0; i < 3; ++i) CHECK(m.laplacian(i, i) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(m.laplacian(0, 1) == doctest::Approx(-10.0));
  // row sums vanish for branch-built Laplacians
  for (int i = 0; i < 3; ++i) CHECK(std::abs(m.laplacian.row(i).sum()) < 1e-8);
}

TEST_CASE("empty branch list is a disconnected graph") {
  const char* text = R"(
[buses]
1, generator
2, generator
[generators]
1, 5.0, 2.0
2, 5.0, 2.0
)";
  CHECK_THROWS_AS(parse_case(text), ValidationError);
}

TEST_CASE("dangling generator reference is rejected") {
  const char* text = R"(
[buses]
1, generator
2, generator
[branches]
1, 2, 0.1
[generators]
1, 5.0, 2.0
99, 5.0, 2.0
)";
  CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("99"), ValidationError);
}

TEST_CASE("parser reports the offending line") {
  const char* text = "base_freq_hz = 60\n[buses]\n1, generator\nbogus row here\n";
  try {
    parse_case(text);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("duplicate bus ids are rejected") {
  const char* text = R"(
[buses]
1, generator
1, load
[branches]
[generators]
1, 5.0, 2.0
)";
  CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("duplicate"), ValidationError);
}

TEST_CASE("inertia conversion M = 2H/(2 pi f0)") {
  CaseFile cf = parse_case(kTriangle);
  GridModel m = build_model(cf, false);
  CHECK(m.inertia[0] == doctest::Approx(10.0 / (120.0 * testsup::kPi)).epsilon(1e-14));
}

TEST_CASE("virtual inertia augmentation of load buses") {
  CaseFile cf = load_case("cases/triangle3.case");
  GridModel m = build_model(cf, true);
  CHECK(m.inertia[2] == 1e-4);
  CHECK(m.damping[2] == 0.1);
  CHECK(m.gamma == doctest::Approx(m.damping.sum() / m.inertia.sum()));

  // all-generator case: augmentation is a no-op
  CaseFile tri = parse_case(kTriangle);
  GridModel a = build_model(tri, true);
  GridModel b = build_model(tri, false);
  CHECK((a.inertia - b.inertia).norm() == 0.0);
  CHECK((a.laplacian - b.laplacian).norm() == 0.0);
}

TEST_CASE("kron reduction: keep-all is identity, path collapses to half weight") {
  GridModel path = testsup::path_model(3, 1.0, 1.0, 0.5);

  GridModel same = kron_reduce(path, {0, 1, 2});
  CHECK((same.laplacian - path.laplacian).norm() == 0.0);

  GridModel red = kron_reduce(path, {0, 2});
  REQUIRE(red.n_buses == 2);
  CHECK(red.laplacian(0, 1) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(red.laplacian(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  for (int i = 0; i < 2; ++i) CHECK(std::abs(red.laplacian.row(i).sum()) < 1e-8);

  // reducing twice with the same keep set equals reducing once
  GridModel red2 = kron_reduce(red, {0, 1});
  CHECK((red2.laplacian - red.laplacian).norm() < 1e-14);
}

TEST_CASE("kron reduction on the nine-bus case keeps generators dynamic") {
  CaseFile cf = load_case("cases/nine4.case");
  GridModel full = build_model(cf, false);
  std::vector<int> keep;
  for (std::size_t i = 0; i < cf.buses.size(); ++i) {
    if (cf.buses[i].type == BusType::generator) keep.push_back(static_cast<int>(i));
  }
  GridModel red = kron_reduce(full, keep);
  REQUIRE(red.n_buses == 3);
  red.validate_dynamic();
  for (int i = 0; i < 3; ++i) CHECK(std::abs(red.laplacian.row(i).sum()) < 1e-8);
  GridModel red2 = kron_reduce(red, {0, 1, 2});
  CHECK((red2.laplacian - red.laplacian).norm() < 1e-12);
}

TEST_CASE("two-machine eigenspace matches the analytic decomposition") {
  GridModel m = testsup::path_model(2, 1.0, 1.0, 0.5);
  EigenSpace space = eigenspace(m);
  CHECK(space.eigvals[0] == 0.0);
  CHECK(space.eigvals[1] == doctest::Approx(2.0).epsilon(1e-12));
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(space.eigvecs(0, 0)) == doctest::Approx(inv_sqrt2));
  CHECK(std::abs(space.eigvecs(1, 1)) == doctest::Approx(inv_sqrt2));
  CHECK(space.eigvecs(0, 1) * space.eigvecs(1, 1) < 0.0);  // opposite signs in mode 2
  CHECK((space.eigvecs.transpose() * space.eigvecs - Eigen::MatrixXd::Identity(2, 2)).norm() <
        1e-8);
}

TEST_CASE("band retention drops out-of-band modes") {
  GridModel m = testsup::path_model(2, 1.0, 1.0, 0.5);
  BandSpec band;
  band.low_hz = 0.5;
  band.high_hz = 0.8;
  // lambda = 2 -> 0.225 Hz resonance; the zero mode is at 0 Hz
  EigenSpace space = eigenspace(m, band);
  CHECK(space.retained.empty());
}

TEST_CASE("common rescaling of M and L leaves the eigenspace unchanged") {
  GridModel m = testsup::path_model(4, 0.7, 0.2, 0.4);
  GridModel scaled = m;
  scaled.inertia *= 3.0;
  scaled.damping *= 3.0;
  scaled.laplacian *= 3.0;
  EigenSpace a = eigenspace(m);
  EigenSpace b = eigenspace(scaled);
  CHECK((a.eigvals - b.eigvals).cwiseAbs().maxCoeff() < 1e-10);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(std::abs(a.eigvecs.col(i).dot(b.eigvecs.col(i))) - 1.0) < 1e-10);
  }
}

TEST_CASE("eigenspace reconstructs the Laplacian") {
  CaseFile cf = load_case("cases/path10.case");
  GridModel m = build_model(cf, false);
  EigenSpace space = eigenspace(m);
  Eigen::VectorXd sqrt_m = m.inertia.array().sqrt();
  Eigen::MatrixXd rebuilt = sqrt_m.asDiagonal() * space.eigvecs *
                            space.eigvals.asDiagonal() * space.eigvecs.transpose() *
                            sqrt_m.asDiagonal();
  CHECK((rebuilt - m.laplacian).norm() / m.laplacian.norm() < 1e-7);

  // retained ordering follows ascending resonance
  BandSpec band;
  band.low_hz = 0.5;
  band.high_hz = 0.8;
  EigenSpace banded = eigenspace(m, band);
  REQUIRE(banded.retained.size() == 4);
  for (std::size_t k = 1; k < banded.retained.size(); ++k) {
    CHECK(banded.eigvals[banded.retained[k]] > banded.eigvals[banded.retained[k - 1]]);
  }
}

TEST_CASE("path10 shipped case matches its documented mode placement") {
  CaseFile cf = load_case("cases/path10.case");
  GridModel m = build_model(cf, false);
  EigenSpace space = eigenspace(m);
  std::vector<double> expected = {0.0,    0.1017, 0.2009, 0.2951, 0.3821,
                                  0.4596, 0.5259, 0.5792, 0.6182, 0.6420};
  CHECK(space.resonance_hz(0) == 0.0);
  for (int i = 1; i < 10; ++i) {
    CHECK(space.resonance_hz(i) ==
          doctest::Approx(expected[static_cast<std::size_t>(i)]).epsilon(2e-3));
  }
}

TEST_CASE("designer model pins resonances and keeps zero row sums") {
  GridModel m = testsup::standard_ten_machine();
  for (int i = 0; i < m.n_buses; ++i) CHECK(std::abs(m.laplacian.row(i).sum()) < 1e-10);
  EigenSpace space = eigenspace(m);
  CHECK(space.eigvals[0] == 0.0);
  CHECK(space.resonance_hz(5) == doctest::Approx(0.19).epsilon(1e-9));
  CHECK(space.resonance_hz(6) == doctest::Approx(0.53).epsilon(1e-9));
  CHECK(space.resonance_hz(9) == doctest::Approx(0.76).epsilon(1e-9));
  BandSpec band;
  band.low_hz = 0.5;
  band.high_hz = 0.8;
  CHECK(eigenspace(m, band).retained.size() == 4);
}

TEST_CASE("singular elimination block is reported") {
  // Two disconnected components; eliminating one of them pivots on a
  // singular sub-Laplacian.
  GridModel m = testsup::path_model(4, 1.0, 1.0, 0.5);
  m.laplacian.setZero();
  m.laplacian(0, 0) = 1.0;
  m.laplacian(1, 1) = 1.0;
  m.laplacian(0, 1) = -1.0;
  m.laplacian(1, 0) = -1.0;
  m.laplacian(2, 2) = 1.0;
  m.laplacian(3, 3) = 1.0;
  m.laplacian(2, 3) = -1.0;
  m.laplacian(3, 2) = -1.0;
  CHECK_THROWS_AS(kron_reduce(m, {0, 1}), NumericError);
}
