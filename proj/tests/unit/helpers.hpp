#pragma once

#include <doctest.h>

#include "pbm/error.hpp"
#include "pbm/partition.hpp"

#define CHECK_CODE(expr, expected)                                 \
  do {                                                             \
    bool thrown_ = false;                                          \
    try {                                                          \
      (void)(expr);                                                \
    } catch (const pbm::Error& e) {                                \
      thrown_ = true;                                              \
      CHECK_MESSAGE(e.code() == (expected), e.what());             \
    }                                                              \
    CHECK_MESSAGE(thrown_, "expected a pbm::Error from " #expr);   \
  } while (0)

namespace testing {

inline pbm::Partition unit_partition(std::vector<std::size_t> cells) {
  return pbm::build_tensor_partition(pbm::Domain::unit(cells.size()), cells);
}

}  // namespace testing

#include <cmath>
#include <memory>
#include <random>

#include "pbm/basis.hpp"
#include "pbm/solver.hpp"

namespace testing {

inline std::shared_ptr<const pbm::Basis> make_basis(std::vector<std::size_t> cells, pbm::BasisKind kind, int order) {
  return std::make_shared<const pbm::Basis>(unit_partition(std::move(cells)), pbm::BasisSpec{kind, order, -1});
}

/// x ~ U[0,1]^d, y = sin(2 pi x1) + noise * N(0,1).
inline pbm::Dataset sine_data(std::size_t n, std::size_t d, double noise, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  pbm::Dataset data;
  data.d = d;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) data.X.push_back(u(gen));
    data.y.push_back(std::sin(6.283185307179586 * data.X[i * d]) + noise * z(gen));
  }
  return data;
}

/// Binary responses with P(y = 1 | x) = logistic(a + b x1).
inline pbm::Dataset logit_data(std::size_t n, double a, double b, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  pbm::Dataset data;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(gen);
    data.X.push_back(x);
    data.y.push_back(u(gen) < 1.0 / (1.0 + std::exp(-(a + b * x))) ? 1.0 : 0.0);
  }
  return data;
}

}  // namespace testing
