#include <cmath>
#include <random>

#include "helpers.hpp"
#include "pbm/partition.hpp"

using namespace pbm;

TEST_CASE("uniform 4-cell partition of [0,1]") {
  const auto p = testing::unit_partition({4});
  const std::vector<double> expect{0, 0.25, 0.5, 0.75, 1};
  CHECK(p.knots()[0] == expect);
  CHECK(p.cell_count() == 4);
  CHECK(p.mesh() == doctest::Approx(0.25));
}

TEST_CASE("2x3 partition of the unit square") {
  const auto p = testing::unit_partition({2, 3});
  CHECK(p.cell_count() == 6);
  CHECK(p.mesh() == doctest::Approx(std::sqrt(0.25 + 1.0 / 9.0)));
}

TEST_CASE("single cell") {
  const auto p = testing::unit_partition({1});
  CHECK(p.cell_count() == 1);
  CHECK(p.mesh() == doctest::Approx(1.0));
  const auto sq = testing::unit_partition({1, 1});
  CHECK(sq.cell_geometry(0).diameter == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("locate follows the half-open rule") {
  const auto p = testing::unit_partition({4});
  const double a = 0.3, b = 1.0, c = 1.0 + 1e-9, k = 0.5;
  CHECK(p.locate({&a, 1}) == 1);
  CHECK(p.locate({&b, 1}) == 3);
  CHECK(p.locate({&k, 1}) == 2);
  CHECK_CODE(p.locate({&c, 1}), ErrorCode::OutOfDomain);
}

TEST_CASE("cell geometry") {
  const auto p = testing::unit_partition({4});
  const auto g = p.cell_geometry(2);
  CHECK(g.lower[0] == 0.5);
  CHECK(g.upper[0] == 0.75);
  CHECK(g.diameter == doctest::Approx(0.25));
  CHECK_CODE(p.cell_geometry(4), ErrorCode::InvalidIndex);

  const auto q = testing::unit_partition({3, 5});
  double hmax = 0.0;
  for (std::size_t c = 0; c < q.cell_count(); ++c) hmax = std::max(hmax, q.cell_geometry(c).diameter);
  CHECK(hmax == doctest::Approx(q.mesh()).epsilon(1e-14));
}

TEST_CASE("degenerate and invalid inputs") {
  CHECK_CODE(build_tensor_partition(Domain{{1.0}, {1.0}}, std::vector<std::size_t>{2}), ErrorCode::DegenerateDomain);
  CHECK_CODE(build_tensor_partition(Domain::unit(1), std::vector<std::size_t>{0}), ErrorCode::InvalidArgument);
  // a heavily skewed sample forces quantile knots beyond the ratio bound
  std::vector<double> data;
  for (int i = 0; i < 90; ++i) data.push_back(0.001 * i / 90.0);
  for (int i = 0; i < 10; ++i) data.push_back(0.5 + 0.05 * i);
  CHECK_CODE(build_tensor_partition(Domain::unit(1), std::vector<std::size_t>{4}, KnotRule::Quantile, data),
             ErrorCode::QuasiUniformityViolated);
}

TEST_CASE("quantile knots need enough distinct values") {
  const std::vector<double> data{0.1, 0.1, 0.1, 0.9};
  CHECK_CODE(build_tensor_partition(Domain::unit(1), std::vector<std::size_t>{3}, KnotRule::Quantile, data),
             ErrorCode::DataError);
}

TEST_CASE("quantile knots are deterministic and quasi-uniform") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> data(2000);
  for (double& v : data) v = u(gen);
  const std::vector<std::size_t> cells{2, 2};
  const auto a = build_tensor_partition(Domain::unit(2), cells, KnotRule::Quantile, data);
  const auto b = build_tensor_partition(Domain::unit(2), cells, KnotRule::Quantile, data);
  CHECK(a.knots() == b.knots());
  CHECK(a.mesh() / a.min_diameter() <= a.ratio_bound());
  CHECK(a.knots()[0].front() == 0.0);
  CHECK(a.knots()[0].back() == 1.0);
}

TEST_CASE("coverage and disjointness on random points") {
  const auto p = build_tensor_partition(Domain{{-1.0, 2.0}, {1.0, 5.0}}, std::vector<std::size_t>{5, 3});
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 10000; ++t) {
    const std::vector<double> x{-1.0 + 2.0 * u(gen), 2.0 + 3.0 * u(gen)};
    const auto c = p.locate(x);
    const auto g = p.cell_geometry(c);
    int hits = 0;
    for (std::size_t k = 0; k < p.cell_count(); ++k) {
      const auto gk = p.cell_geometry(k);
      bool in = true;
      for (int j = 0; j < 2; ++j) in = in && x[j] >= gk.lower[j] && (x[j] < gk.upper[j] || gk.upper[j] == p.domain().upper[j]);
      hits += in;
    }
    CHECK(hits == 1);
    for (int j = 0; j < 2; ++j) CHECK((x[j] >= g.lower[j] && x[j] <= g.upper[j]));
  }
}

TEST_CASE("ravel and unravel agree") {
  const auto p = testing::unit_partition({3, 4, 2});
  for (std::size_t c = 0; c < p.cell_count(); ++c) {
    const auto m = p.unravel(c);
    CHECK(p.ravel(m) == c);
  }
  CHECK(p.unravel(1)[0] == 1);
}
