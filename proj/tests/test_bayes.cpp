#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "deesn/bayes.hpp"
#include "deesn/errors.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace deesn;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

using oracle::batch_mean_se;
using oracle::make_cov;
using oracle::make_stage;

GibbsConfig plain_config(std::uint64_t seed) {
  GibbsConfig g;
  g.seed = seed;
  g.intercept = false;
  g.standardize = false;
  return g;
}

ForecastProblem random_problem(Index t, Index n_train, Index n_x, std::uint64_t seed) {
  ForecastProblem p;
  p.inputs = testutil::random_matrix(t, n_x, seed);
  p.targets = testutil::random_matrix(t, 2, seed + 1);
  p.truth = p.targets;
  p.n_train = n_train;
  p.lead = 1;
  p.tau = 1;
  return p;
}

DeepEsnConfig small_esn(int L, int n_res) {
  DeepEsnConfig c;
  c.L = L;
  c.n_h1 = 20;
  c.n_h_deep = 20;
  c.n_h_tilde = 4;
  c.nu = {0.5};
  c.m = 1;
  c.n_res = n_res;
  c.master_seed = 5;
  return c;
}

void geweke_check(Index block_limit) {
  for (const oracle::MomentCheck& c : oracle::geweke(block_limit)) {
    INFO(c.name << ": prior " << c.direct << ", successive conditional " << c.chain << ", se " << c.se);
    CHECK(c.ok());
  }
}

}  // namespace

TEST_CASE("prior defaults and validation") {
  const SsvsPrior two = SsvsPrior::defaults_for_layers(2);
  CHECK(two.pi_at(1) == 0.25);
  CHECK(two.slab_at(2) == 5.0);
  CHECK(two.spike_at(1) == 0.001);
  const SsvsPrior seven = SsvsPrior::defaults_for_layers(7);
  CHECK(seven.pi_at(7) == 0.10);
  CHECK(seven.slab_at(3) == 4.0);
  CHECK(seven.alpha_eta == 1.0);
  CHECK(seven.beta_eta == 1.0);

  SsvsPrior p;
  p.pi_beta = {0.2, 0.3};
  CHECK_NOTHROW(p.validate(2));
  CHECK(p.pi_at(2) == 0.3);
  CHECK_THROWS_AS(p.validate(3), ConfigError);
  p.pi_beta = {1.0};
  CHECK_THROWS_AS(p.validate(1), ConfigError);
  p = SsvsPrior{};
  p.sigma2_beta1 = {5.0};
  CHECK_THROWS_AS(p.validate(1), ConfigError);
  p = SsvsPrior{};
  p.beta_eta = 0.0;
  CHECK_THROWS_AS(p.validate(1), ConfigError);

  const SsvsPrior merged = SsvsPrior::from_json({{"pi_beta", 0.4}}, seven);
  CHECK(merged.pi_at(1) == 0.4);
  CHECK(merged.slab_at(1) == 4.0);
  CHECK(SsvsPrior::from_json(two.to_json()).to_json() == two.to_json());
  CHECK_THROWS_AS(SsvsPrior::from_json({{"pi_beta", "x"}}), ConfigError);

  GibbsConfig g;
  CHECK(g.n_kept() == 4000);
  g.thinning = 3;
  CHECK(g.n_kept() == 1334);
  g.n_burn = g.n_iter;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  CHECK_THROWS_AS(GibbsConfig::from_json({{"n_iter", 10}, {"n_burn", 20}}), ConfigError);
  CHECK(GibbsConfig::from_json(GibbsConfig{}.to_json()).to_json() == GibbsConfig{}.to_json());
}

TEST_CASE("covariates are the deep stack designs") {
  const ForecastProblem p = random_problem(60, 50, 20, 1);
  const DeepEsnConfig c = small_esn(2, 2);
  const Alignment al = align(p, c.m);
  const ReservoirCovariates cov = precompute_reservoir_covariates(c, al);
  REQUIRE(cov.n_members() == 2);
  CHECK(cov.total_width() == 2 * (c.n_h1 + c.n_h_tilde));
  for (std::size_t j = 0; j < 2; ++j) {
    const LayerStack s = run_deep_stack(c, al.embedded, al.n_fit, j);
    CHECK(cov.designs[j] == s.design(false));
  }
  CHECK(std::count(cov.column_layer.begin(), cov.column_layer.end(), 2) == c.n_h_tilde);
  CHECK(cov.n_fit == al.n_fit);
  CHECK(cov.n_fit + cov.n_forecast == al.n_rows());

  DeepEsnConfig lorenz = small_esn(4, 3);
  const ReservoirCovariates deep = precompute_reservoir_covariates(lorenz, al);
  Index count = 0;
  for (const auto& d : deep.designs) count += d.cols();
  CHECK(count == lorenz.n_res * (lorenz.n_h1 + (lorenz.L - 1) * lorenz.n_h_tilde));

  DeepEsnConfig q = small_esn(1, 2);
  q.quadratic = true;
  const ReservoirCovariates quad = precompute_reservoir_covariates(q, al);
  CHECK(quad.width() == 2 * q.n_h1);
  CHECK(std::count(quad.column_layer.begin(), quad.column_layer.end(), 1) == 2 * q.n_h1);
}

TEST_CASE("covariate cache round trip") {
  const ForecastProblem p = random_problem(40, 30, 20, 3);
  const DeepEsnConfig c = small_esn(2, 2);
  const ReservoirCovariates cov = precompute_reservoir_covariates(c, align(p, c.m));
  const auto dir = testutil::scratch_dir("bayes_cov");
  save_covariates(dir / "cov.bin", cov);
  const ReservoirCovariates back = load_covariates(dir / "cov.bin");
  CHECK(back.n_members() == 2);
  CHECK(back.designs[1] == cov.designs[1]);
  CHECK(back.column_layer == cov.column_layer);
  CHECK(back.column_unit == cov.column_unit);
  CHECK(back.first_target == cov.first_target);

  {
    std::ofstream junk(dir / "junk.bin", std::ios::binary);
    junk << "not a cache";
  }
  CHECK_THROWS_AS(load_covariates(dir / "junk.bin"), ParseError);
  std::filesystem::resize_file(dir / "cov.bin", std::filesystem::file_size(dir / "cov.bin") - 8);
  CHECK_THROWS_AS(load_covariates(dir / "cov.bin"), ParseError);
  CHECK_THROWS_AS(load_covariates(dir / "missing.bin"), IoError);
}

TEST_CASE("sparse coefficients are recovered") {
  for (Index block_limit : {Index{600}, Index{0}}) {
    INFO("block limit " << block_limit);
    const oracle::SparseRecovery r = oracle::sparse_recovery(block_limit);
    for (Index k = 0; k < r.truth.size(); ++k) {
      INFO("coefficient " << k);
      if (r.truth(k) != 0.0) {
        CHECK(r.inclusion(k) > 0.9);
        CHECK(r.beta_mean(k) == doctest::Approx(r.truth(k)).epsilon(0.05));
      } else {
        CHECK(r.inclusion(k) < 0.2);
      }
    }
    CHECK(r.sigma2_mean == doctest::Approx(0.25).epsilon(0.2));
    CHECK(r.kept == 2500);
    CHECK(r.ok());
  }
}

TEST_CASE("without data the coefficients follow the mixture prior") {
  const ReservoirCovariates cov = make_cov({testutil::random_matrix(30, 4, 60)}, 30);
  const DataStage stage = make_stage(MatrixXd::Identity(2, 2), 1e8);
  SsvsPrior prior;
  prior.pi_beta = {0.3};
  prior.sigma2_beta0 = {2.0};
  prior.sigma2_beta1 = {0.05};
  prior.alpha_eta = 5.0;
  prior.beta_eta = 4.0;
  GibbsConfig g;
  g.intercept = false;
  g.seed = 61;
  GibbsSampler s(cov, stage, prior, g, MatrixXd::Zero(30, 2), 0);
  s.draw_from_prior();
  std::vector<double> b2, incl, s2;
  for (int i = 0; i < 100000; ++i) {
    s.step();
    b2.push_back(s.state().beta.array().square().mean());
    incl.push_back(s.state().gamma.cast<double>().mean());
    s2.push_back(s.state().sigma2_eta);
  }
  const auto [mb, sb] = batch_mean_se(b2);
  const auto [mi, si] = batch_mean_se(incl);
  const auto [ms, sigs] = batch_mean_se(s2);
  CHECK(std::abs(mb - (0.3 * 2.0 + 0.7 * 0.05)) < 3.0 * sb);
  CHECK(std::abs(mi - 0.3) < 3.0 * si);
  CHECK(std::abs(ms - 1.0) < 3.0 * sigs);  // IG(5, 4) mean
}

TEST_CASE("Geweke check with joint coefficient draws") { geweke_check(600); }

TEST_CASE("Geweke check with single-site coefficient draws") { geweke_check(0); }

TEST_CASE("slab-only conditional is Bayesian ridge") {
  const Index t = 15, p = 6;
  const MatrixXd x = testutil::random_matrix(t, p, 70);
  const ReservoirCovariates cov = make_cov({x}, t);
  const DataStage stage = make_stage(MatrixXd::Identity(2, 2), 0.1);
  SsvsPrior prior;
  prior.sigma2_beta0 = {2.0};
  prior.sigma2_beta1 = {2.0 - 1e-10};
  GibbsSampler s(cov, stage, prior, plain_config(71), MatrixXd::Zero(t, 2), 0);
  GibbsState& st = s.mutable_state();
  st.alpha = testutil::random_matrix(t, 2, 72);
  st.sigma2_eta = 0.7;
  st.gamma.setOnes();
  st.gamma(2, 1) = 0;
  for (Index b = 0; b < 2; ++b) {
    const auto [mean, covar] = s.beta_conditional(b);
    // Dual form: tau X' (tau X X' + s2 I)^-1 alpha.
    const double tau = 2.0;
    const MatrixXd k = tau * x * x.transpose() + 0.7 * MatrixXd::Identity(t, t);
    const Eigen::LDLT<MatrixXd> kl(k);
    const VectorXd oracle_mean = tau * x.transpose() * kl.solve(st.alpha.col(b));
    const MatrixXd oracle_cov = tau * MatrixXd::Identity(p, p) - tau * tau * x.transpose() * kl.solve(x);
    CHECK(testutil::max_abs(mean - oracle_mean) < 1e-8);
    CHECK(testutil::max_abs(covar - oracle_cov) < 1e-8);
  }
}

TEST_CASE("tiny data-stage noise pins alpha to the data") {
  const Index t = 25;
  const MatrixXd z = testutil::random_matrix(t, 3, 80);
  const ReservoirCovariates cov = make_cov({testutil::random_matrix(t, 5, 81)}, t);
  const DataStage stage = make_stage(MatrixXd::Identity(3, 3), 1e-8);
  GibbsConfig g;
  g.seed = 82;
  g.n_iter = 400;
  g.n_burn = 100;
  const PosteriorSamples s = gibbs_run(cov, stage, SsvsPrior{}, g, z);
  CHECK(testutil::max_abs(s.alpha_mean - z) < 1e-4);
}

TEST_CASE("fixed seeds reproduce a chain") {
  const ReservoirCovariates cov =
      make_cov({testutil::random_matrix(30, 4, 90), testutil::random_matrix(30, 4, 91)}, 25);
  const DataStage stage = make_stage(MatrixXd::Identity(2, 2), 0.25);
  const MatrixXd z = testutil::random_matrix(25, 2, 92);
  GibbsConfig g;
  g.seed = 93;
  g.n_iter = 200;
  g.n_burn = 50;
  const PosteriorSamples a = gibbs_run(cov, stage, SsvsPrior{}, g, z, 0);
  const PosteriorSamples b = gibbs_run(cov, stage, SsvsPrior{}, g, z, 0);
  const PosteriorSamples c = gibbs_run(cov, stage, SsvsPrior{}, g, z, 1);
  CHECK(a.sigma2_eta == b.sigma2_eta);
  CHECK(a.forecast_mean.back() == b.forecast_mean.back());
  CHECK(a.sigma2_eta != c.sigma2_eta);
  CHECK(a.forecast_mean.front().rows() == 5);

  g.n_chains = 3;
  const BayesRun run = run_chains(cov, stage, SsvsPrior{}, g, z);
  REQUIRE(run.chains.size() == 3);
  CHECK(run.chains[1].sigma2_eta == gibbs_run(cov, stage, SsvsPrior{}, g, z, 1).sigma2_eta);
  CHECK(run.rhat.count("sigma2_eta") == 1);
  CHECK(run.rhat.count("forecast_level") == 1);

  const std::string csv = inclusion_csv(run.chains);
  CHECK(csv.rfind("member,layer,unit,output,frequency\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 8 * 2);
}

TEST_CASE("log data stage rejects non-positive data") {
  const ReservoirCovariates cov = make_cov({testutil::random_matrix(12, 3, 100)}, 10);
  const DataStage stage = make_stage(MatrixXd::Identity(2, 2), 0.25, Transform::kLog);
  MatrixXd z = MatrixXd::Ones(10, 2);
  z(4, 1) = 0.0;
  GibbsConfig g;
  g.n_iter = 20;
  g.n_burn = 5;
  CHECK_THROWS_AS(gibbs_run(cov, stage, SsvsPrior{}, g, z), DataError);
}

TEST_CASE("predictive draws") {
  const Index n_f = 4, n_z = 3;
  const int n = 20000;
  PosteriorSamples s;
  s.sigma2_eta = VectorXd::Constant(n, 0.5);
  s.forecast_mean.assign(n, MatrixXd::Zero(n_f, n_z));
  const DataStage stage = make_stage(MatrixXd::Identity(n_z, n_z), 0.25);
  const ForecastCube cube = posterior_forecast({s}, stage, 7, 0);
  REQUIRE(cube.size() == static_cast<std::size_t>(n));
  const DistributionFit fit = ensemble_to_distribution(cube, false);
  const double var_se = 0.75 * std::sqrt(2.0 / (n - 1));
  for (Index i = 0; i < fit.sigma.size(); ++i) {
    CHECK(std::abs(fit.sigma.data()[i] * fit.sigma.data()[i] - 0.75) < 4.0 * var_se);
    CHECK(std::abs(fit.mu.data()[i]) < 4.0 * std::sqrt(0.75 / n));
  }
  CHECK(posterior_forecast({s}, stage, 7, 100).size() == 100);
  CHECK(posterior_forecast({s}, stage, 7, 100)[3] == posterior_forecast({s}, stage, 7, 100)[3]);

  // Zero coefficients and no output noise leave only data-stage noise.
  PosteriorSamples quiet = s;
  quiet.sigma2_eta.setConstant(1e-300);
  const DistributionFit q = ensemble_to_distribution(posterior_forecast({quiet}, stage, 8, 0), false);
  CHECK(std::abs(q.sigma(0, 0) * q.sigma(0, 0) - 0.25) < 4.0 * 0.25 * std::sqrt(2.0 / (n - 1)));

  const DataStage logs = make_stage(MatrixXd::Identity(n_z, n_z), 0.25, Transform::kLog);
  for (const auto& d : posterior_forecast({s}, logs, 9, 500)) CHECK(d.minCoeff() > 0.0);
  CHECK_THROWS_AS(posterior_forecast({}, stage, 1), DataError);
}

TEST_CASE("Gelman-Rubin") {
  std::mt19937_64 rng(110);
  std::normal_distribution<double> g(0.0, 1.0);
  auto draw = [&](Index n, double shift) {
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = g(rng) + shift;
    return v;
  };
  const VectorXd c = draw(200, 0.0);
  CHECK(gelman_rubin({c, c}) == doctest::Approx(std::sqrt(199.0 / 200.0)).epsilon(1e-14));
  CHECK(gelman_rubin({draw(1000, 0.0), draw(1000, 10.0)}) > 5.0);
  CHECK(gelman_rubin({draw(1000, 0.0), draw(1000, 0.0), draw(1000, 0.0), draw(1000, 0.0)}) < 1.05);
  CHECK_THROWS_AS(gelman_rubin({c}), DataError);
  CHECK_THROWS_AS(gelman_rubin({draw(9, 0), draw(9, 0)}), DataError);
  CHECK_THROWS_AS(gelman_rubin({draw(20, 0), draw(21, 0)}), DimensionError);
}
