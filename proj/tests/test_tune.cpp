#include <doctest.h>

#include <cmath>
#include <random>

#include "deesn/errors.hpp"
#include "deesn/experiment.hpp"
#include "deesn/lorenz96.hpp"
#include "deesn/tune.hpp"
#include "test_util.hpp"

using namespace deesn;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GaConfig small_ga(std::uint64_t seed) {
  GaConfig g;
  g.seed = seed;
  return g;
}

TuneData random_tune_data(std::uint64_t seed) {
  TuneData d;
  d.input = testutil::random_matrix(120, 20, seed);
  // Response follows the input one step later, plus noise.
  d.response = MatrixXd::Zero(120, 3);
  d.response.bottomRows(119) = d.input.topRows(119).leftCols(3) + 0.1 * testutil::random_matrix(119, 3, seed + 1);
  d.n_train = 100;
  d.grid = GridSpec::abstract(3);
  return d;
}

DeepEsnConfig tiny_base(int L) {
  DeepEsnConfig c;
  c.L = L;
  c.n_h_deep = 20;
  c.n_res = 5;
  c.master_seed = 9;
  return c;
}

}  // namespace

TEST_CASE("chromosome decoding") {
  const SearchSpace s = SearchSpace::for_layers(1);
  REQUIRE(s.n_genes() == 5);
  const Candidate lo = decode_chromosome(VectorXd::Zero(5), s);
  CHECK(lo.m == 0);
  CHECK(lo.nu == std::vector<double>{0.0});
  CHECK(lo.n_h_tilde == 6);
  CHECK(lo.n_h1 == 25);
  CHECK(lo.r_v == doctest::Approx(1e-4).epsilon(1e-12));
  const Candidate hi = decode_chromosome(VectorXd::Ones(5), s);
  CHECK(hi.m == 5);
  CHECK(hi.nu == std::vector<double>{1.0});
  CHECK(hi.n_h_tilde == 20);
  CHECK(hi.n_h1 == 75);
  CHECK(hi.r_v == doctest::Approx(1e-2).epsilon(1e-12));
  const Candidate mid = decode_chromosome(VectorXd::Constant(5, 0.5), s);
  CHECK(mid.nu.front() == 0.5);
  CHECK(mid.r_v == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(mid.m == 3);  // floor(0.5 * 6)

  CHECK(decode_chromosome(VectorXd::Constant(5, 7.0), s).key() == hi.key());
  CHECK(decode_chromosome(VectorXd::Constant(5, -3.0), s).key() == lo.key());
  CHECK_THROWS_AS(decode_chromosome(VectorXd::Zero(4), s), DimensionError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (int i = 0; i < 2000; ++i) {
    VectorXd g(5);
    for (Index k = 0; k < 5; ++k) g(k) = u(rng);
    const Candidate c = decode_chromosome(g, s);
    REQUIRE(c.m >= 0);
    REQUIRE(c.m <= 5);
    REQUIRE(c.nu.front() >= 0.0);
    REQUIRE(c.nu.front() <= 1.0);
    REQUIRE(c.n_h_tilde >= 6);
    REQUIRE(c.n_h_tilde <= 20);
    REQUIRE(c.n_h1 >= 25);
    REQUIRE(c.n_h1 <= 75);
    REQUIRE(c.r_v >= 1e-4 * (1 - 1e-12));
    REQUIRE(c.r_v <= 1e-2 * (1 + 1e-12));
  }
}

TEST_CASE("leak rates per layer") {
  CHECK(SearchSpace::for_layers(2).n_genes() == 6);
  CHECK(SearchSpace::for_layers(3).n_nu == 3);
  CHECK(SearchSpace::for_layers(7).n_nu == 1);
  CHECK(SearchSpace::for_layers(7, true).n_nu == 7);
  CHECK_THROWS_AS(SearchSpace::for_layers(0), ConfigError);

  VectorXd g(6);
  g << 0.0, 0.2, 0.9, 0.0, 0.0, 0.0;
  const Candidate c = decode_chromosome(g, SearchSpace::for_layers(2));
  CHECK(c.nu == std::vector<double>{0.2, 0.9});
  const DeepEsnConfig applied = c.apply(tiny_base(2));
  CHECK(applied.nu == c.nu);
  CHECK(applied.n_res == 5);

  Candidate shared;
  shared.nu = {0.35};
  const DeepEsnConfig deep = shared.apply(tiny_base(7));
  CHECK(deep.nu_at(6) == 0.35);
  CHECK_NOTHROW(deep.validate());

  CHECK(Candidate::from_json(c.to_json()).key() == c.key());
  CHECK(Candidate::from_json({{"m", 2}, {"nu", 0.4}, {"n_h_tilde", 8}, {"n_h1", 30}, {"r_v", 0.001}}).nu ==
        std::vector<double>{0.4});
  CHECK_THROWS_AS(Candidate::from_json({{"m", "two"}}), ConfigError);
  CHECK_THROWS_AS(Candidate::from_json({{"nu", std::vector<double>{}}}), ConfigError);
}

TEST_CASE("GA configuration") {
  GaConfig g;
  CHECK(g.generations == 40);
  CHECK(g.population == 20);
  g.population = 3;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GaConfig{};
  g.mutation_rate = 1.5;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GaConfig{};
  g.elitism = 21;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  CHECK(GaConfig::from_json(small_ga(4).to_json()).to_json() == small_ga(4).to_json());
}

TEST_CASE("GA finds a one-gene optimum") {
  const GaResult r = ga_search(5, small_ga(2), [](const VectorXd& g) { return -(g(1) - 0.3) * (g(1) - 0.3); });
  CHECK(std::abs(r.best_genes(1) - 0.3) < 0.05);
  REQUIRE(r.history.size() == 40);
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i].best_ever >= r.history[i - 1].best_ever);
  CHECK(r.history.back().best_ever == r.best_fitness);
  CHECK(r.history.front().generation == 1);
}

TEST_CASE("GA sphere against a grid search") {
  const VectorXd centre = (VectorXd(5) << 0.31, 0.62, 0.18, 0.87, 0.45).finished();
  auto loss = [&](const VectorXd& g) { return (g - centre).squaredNorm(); };
  double grid_best = 1e300;
  VectorXd p(5);
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      for (int c = 0; c < 5; ++c)
        for (int d = 0; d < 5; ++d)
          for (int e = 0; e < 5; ++e) {
            p << 0.25 * a, 0.25 * b, 0.25 * c, 0.25 * d, 0.25 * e;
            grid_best = std::min(grid_best, loss(p));
          }
  const GaResult r = ga_search(5, small_ga(3), [&](const VectorXd& g) { return -loss(g); });
  MESSAGE("GA loss " << -r.best_fitness << " vs grid " << grid_best);
  CHECK(-r.best_fitness <= 1.1 * grid_best);
}

TEST_CASE("GA bookkeeping") {
  int calls = 0;
  const GaResult a = ga_search(3, small_ga(5), [&](const VectorXd& g) {
    ++calls;
    return -g.sum();
  });
  const GaResult b = ga_search(3, small_ga(5), [](const VectorXd& g) { return -g.sum(); });
  CHECK(a.best_genes == b.best_genes);
  CHECK(a.history.back().mean == b.history.back().mean);
  CHECK(a.evaluations == calls);

  GaConfig frozen = small_ga(6);
  frozen.elitism = frozen.population;
  frozen.generations = 5;
  const GaResult f = ga_search(3, frozen, [](const VectorXd& g) { return -g.squaredNorm(); });
  for (const auto& h : f.history) {
    CHECK(h.best == f.history.front().best);
    CHECK(h.mean == f.history.front().mean);
  }

  // Failing candidates are culled, not fatal.
  const GaResult c = ga_search(2, small_ga(7), [](const VectorXd& g) {
    if (g(0) > 0.5) throw NumericError("unstable");
    return g(0) < 0.2 ? std::nan("") : -g(1);
  });
  CHECK(c.best_genes(0) >= 0.2);
  CHECK(c.best_genes(0) <= 0.5);
  CHECK(std::isfinite(c.best_fitness));
}

TEST_CASE("validation block") {
  CvScheme cv;
  CHECK(cv.fit_rows(435) == 348);
  cv.validation_rows = 50;
  CHECK(cv.fit_rows(435) == 385);
  cv.validation_rows = 434;
  CHECK_THROWS_AS(cv.fit_rows(435), ConfigError);
  cv = CvScheme{};
  cv.validation_fraction = 0.0;
  CHECK_THROWS_AS(cv.fit_rows(435), ConfigError);
  cv.validation_fraction = 0.001;
  CHECK_THROWS_AS(cv.fit_rows(100), ConfigError);
}

TEST_CASE("candidate scores never see the test period") {
  TuneData d = random_tune_data(10);
  Candidate c;
  c.m = 1;
  c.nu = {0.4};
  c.n_h1 = 30;
  c.n_h_tilde = 6;
  const DeepEsnConfig base = tiny_base(1);
  const CvScheme cv;
  const double a = evaluate_candidate(c, base, d, cv, 5);
  CHECK(std::isfinite(a));
  CHECK(a < 0.0);
  CHECK(evaluate_candidate(c, base, d, cv, 5) == a);

  d.response.bottomRows(20).setConstant(1e6);
  d.input.bottomRows(20).setConstant(-1e6);
  CHECK(evaluate_candidate(c, base, d, cv, 5) == a);

  // Shifting one validation truth cell by +e and -e moves the MSPE only through
  // that cell when the fit never sees it: M(+e) + M(-e) - 2 M(0) = 2 e^2 / N.
  TuneData plus = d, minus = d;
  const double e = 0.7;
  plus.response(95, 1) += e;
  minus.response(95, 1) -= e;
  const double n_cells = 20.0 * 3.0;  // 20 validation rows x 3 locations
  const double curvature = -evaluate_candidate(c, base, plus, cv, 5) - evaluate_candidate(c, base, minus, cv, 5) + 2 * a;
  CHECK(curvature == doctest::Approx(2 * e * e / n_cells).epsilon(1e-9));

  CvScheme none;
  none.validation_fraction = 0.0;
  CHECK_THROWS_AS(evaluate_candidate(c, base, d, none, 5), ConfigError);
}

TEST_CASE("a reasonable reservoir beats a memoryless one on Lorenz data") {
  Lorenz96Config cfg;
  cfg.seed = 1;
  const ExperimentData data = lorenz_experiment(output_field(simulate(cfg)));
  DeepEsnConfig base;
  base.L = 2;
  base.master_seed = 4;
  Candidate good;
  good.m = 3;
  good.nu = {0.3, 0.6};
  good.n_h1 = 50;
  good.n_h_tilde = 10;
  Candidate degenerate = good;
  degenerate.m = 0;
  degenerate.nu = {0.0, 0.0};
  const TuneData t = data.tune_data();
  const double fg = evaluate_candidate(good, base, t, CvScheme{}, 30);
  const double fd = evaluate_candidate(degenerate, base, t, CvScheme{}, 30);
  MESSAGE("validation MSPE: good " << -fg << ", degenerate " << -fd);
  CHECK(fg > fd);

  const CvObjective obj(t, CvScheme{}, base, 30);
  CHECK(obj(good) == fg);
  CHECK(obj(good) == fg);
  CHECK(obj.cache_size() == 1);
}

TEST_CASE("tuning end to end") {
  const TuneData d = random_tune_data(20);
  GaConfig ga = small_ga(8);
  ga.generations = 3;
  ga.population = 4;
  const SearchSpace space = SearchSpace::for_layers(2);
  const TuneResult r = tune_model(d, tiny_base(2), space, ga, CvScheme{}, 5);
  CHECK(std::isfinite(r.fitness));
  CHECK(r.config.n_res == 5);
  CHECK(r.config.nu == r.best.nu);
  CHECK(r.best.nu.size() == 2);
  const std::string log = search_log_csv(r.ga, space);
  CHECK(log.rfind("generation,best_fitness,mean_fitness,best_ever,m,nu,n_h_tilde,n_h1,r_v\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);
  CHECK(r.fitness == doctest::Approx(evaluate_candidate(r.best, tiny_base(2), d, CvScheme{}, 5)));
}
