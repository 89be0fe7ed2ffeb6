#include <benchmark/benchmark.h>

#include <pbm/banded.hpp>
#include <pbm/basis.hpp>
#include <pbm/dgp.hpp>
#include <pbm/inference.hpp>
#include <pbm/loss.hpp>
#include <pbm/partition.hpp>
#include <pbm/sandwich.hpp>
#include <pbm/solver.hpp>

#include <memory>
#include <random>
#include <vector>

using namespace pbm;

namespace {

std::shared_ptr<const Basis> unit_basis(std::vector<std::size_t> cells, BasisKind kind, int order) {
  return std::make_shared<const Basis>(build_tensor_partition(Domain::unit(cells.size()), cells),
                                       BasisSpec{kind, order, -1});
}

}  // namespace

static void BM_BasisEval(benchmark::State& state) {
  const auto basis = unit_basis({64}, BasisKind::BSpline, static_cast<int>(state.range(0)));
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> xs(1024);
  for (auto& x : xs) x = u(gen);
  SparseVec out;
  std::size_t i = 0;
  for (auto _ : state) {
    const double x = xs[i++ & 1023];
    benchmark::DoNotOptimize(basis->eval_into({&x, 1}, {}, out));
  }
}
BENCHMARK(BM_BasisEval)->Arg(1)->Arg(2)->Arg(4);

static void BM_BandedCholesky(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t bw = 3;
  BandedMatrix a(n, bw);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = j; i < std::min(n, j + bw + 1); ++i) a.lower(i, j) = i == j ? 4.0 : -0.5;
  std::vector<double> b(n, 1.0);
  for (auto _ : state) {
    auto chol = BandedCholesky::factor(a);
    chol->solve(b);
    benchmark::DoNotOptimize(b.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BandedCholesky)->RangeMultiplier(4)->Range(64, 16384)->Complexity(benchmark::oN);

static void BM_FitQuantile(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto data = make_dgp("qr1d")->generate(n, 11, 0);
  const auto basis = unit_basis({16}, BasisKind::BSpline, 2);
  const auto loss = quantile_loss();
  for (auto _ : state) benchmark::DoNotOptimize(fit(data, basis, loss, {0.25, 0.5, 0.75}));
}
BENCHMARK(BM_FitQuantile)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

static void BM_FitLogistic(benchmark::State& state) {
  const auto data = make_dgp("logit1d")->generate(static_cast<std::size_t>(state.range(0)), 11, 0);
  const auto basis = unit_basis({12}, BasisKind::BSpline, 2);
  const auto loss = logistic_loss();
  for (auto _ : state) benchmark::DoNotOptimize(fit(data, basis, loss, {0.0}));
}
BENCHMARK(BM_FitLogistic)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_BandDraws(benchmark::State& state) {
  const auto data = make_dgp("qr1d")->generate(2000, 5, 0);
  auto f = std::make_shared<const FitResult>(fit(data, unit_basis({12}, BasisKind::BSpline, 2), quantile_loss(), {0.5}));
  const SandwichSet sand(f, data);
  const auto grid = make_grid(f->basis->partition(), 10, {0.5});
  SimOptions opts;
  opts.n_draws = static_cast<int>(state.range(0));
  opts.keep_draws = false;
  for (auto _ : state) benchmark::DoNotOptimize(simulate_band(sand, grid, opts));
}
BENCHMARK(BM_BandDraws)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
