#include <doctest.h>

#include <chrono>
#include <cmath>

#include "deesn/deepesn.hpp"
#include "deesn/errors.hpp"
#include "deesn/eval.hpp"
#include "deesn/experiment.hpp"
#include "deesn/lorenz96.hpp"
#include "test_util.hpp"

using namespace deesn;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const ExperimentData& lorenz_data() {
  static const ExperimentData data = [] {
    Lorenz96Config cfg;
    cfg.seed = 1;
    return lorenz_experiment(output_field(simulate(cfg)));
  }();
  return data;
}

const PreparedData& lorenz_prepared() {
  static const PreparedData p = lorenz_data().prepare();
  return p;
}

DeepEsnConfig small_config(int L) {
  DeepEsnConfig c;
  c.L = L;
  c.n_h1 = 30;
  c.n_h_deep = 20;
  c.n_h_tilde = 6;
  c.nu = {0.4};
  c.m = 1;
  c.n_res = 3;
  c.master_seed = 17;
  return c;
}

}  // namespace

TEST_CASE("config invariants") {
  DeepEsnConfig c = small_config(2);
  c.quadratic = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(2);
  c.n_h_tilde = 21;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(3);
  c.nu = {0.1, 0.2};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.nu = {0.1, 0.2, 0.3};
  CHECK_NOTHROW(c.validate());
  CHECK(c.nu_at(2) == 0.2);
  c.n_res = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const DeepEsnConfig d = DeepEsnConfig::from_json(small_config(4).to_json());
  CHECK(d.to_json() == small_config(4).to_json());
}

TEST_CASE("single layer stack is one reservoir run") {
  const DeepEsnConfig c = small_config(1);
  const EmbeddedInputs e = build_embeddings(testutil::random_matrix(80, 5, 1), 2, 1);
  const LayerStack s = run_deep_stack(c, e, 60, 4);
  REQUIRE(s.L() == 1);
  const ReservoirSpec spec = c.layer_spec(1);
  const ReservoirWeights w = sample_weights(spec, e.width(), 4, 1);
  const HiddenStates h = run_reservoir(w, spec, e, VectorXd::Zero(spec.n_h));
  CHECK(s.states[0] == h.states);
  CHECK(s.design(false) == h.states);
  CHECK(s.block_widths(true) == std::vector<Index>{30, 30});
  CHECK(testutil::max_abs(s.design(true).rightCols(30) - h.states.array().square().matrix()) < 1e-15);
}

TEST_CASE("full-rank reduction is a rotation") {
  DeepEsnConfig c = small_config(2);
  c.n_h_tilde = c.n_h_deep;
  const EmbeddedInputs e = build_embeddings(testutil::random_matrix(120, 30, 2), 1, 0);
  const LayerStack s = run_deep_stack(c, e, 100, 0);
  const MatrixXd& h2 = s.states[1];
  const ReductionMap& map = s.maps[1];
  CHECK(testutil::max_abs(map.components.transpose() * map.components - MatrixXd::Identity(20, 20)) < 1e-10);
  CHECK(testutil::max_abs(s.reduced[1] * map.components.transpose() - (h2.rowwise() - map.mean)) < 1e-10);
  // Layer 1 is driven by the reduced layer-2 states.
  const ReservoirSpec spec1 = c.layer_spec(1);
  const ReservoirWeights w1 = sample_weights(spec1, 20, 0, 1);
  CHECK(testutil::max_abs(run_reservoir(w1, spec1, s.reduced[1], VectorXd::Zero(spec1.n_h)).states - s.states[0]) == 0.0);
  // Reduced design columns pass through tanh.
  const MatrixXd d = s.design(false);
  CHECK(d.rightCols(20).cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("reduction fits on training rows only") {
  MatrixXd states = testutil::random_matrix(40, 8, 3);
  const Reduction a = reduce_states(states, 30, 3);
  states.bottomRows(10) *= 100.0;
  const Reduction b = reduce_states(states, 30, 3);
  CHECK(a.map.components == b.map.components);
  CHECK(a.map.mean == b.map.mean);
}

TEST_CASE("reduction ignores a constant column and matches an eigen oracle") {
  MatrixXd states = testutil::random_matrix(30, 10, 4) * VectorXd::LinSpaced(10, 2.0, 0.2).asDiagonal();
  states.col(4).setConstant(0.7);
  const Reduction r = reduce_states(states, 30, 3);
  CHECK(testutil::max_abs(r.map.components.row(4)) < 1e-12);

  const MatrixXd c = states.rowwise() - states.colwise().mean();
  const MatrixXd cov = c.transpose() * c / 29.0;
  Eigen::EigenSolver<MatrixXd> es(cov);
  std::vector<std::pair<double, VectorXd>> pairs;
  for (Index i = 0; i < 10; ++i) pairs.emplace_back(es.eigenvalues()(i).real(), es.eigenvectors().col(i).real());
  std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  for (Index k = 0; k < 3; ++k) {
    const VectorXd v = pairs[static_cast<std::size_t>(k)].second.normalized();
    CHECK(std::abs(v.dot(r.map.components.col(k))) == doctest::Approx(1.0).epsilon(1e-8));
  }
  MatrixXd low_rank = MatrixXd::Zero(30, 5);
  low_rank.col(0) = VectorXd::LinSpaced(30, 0, 1);
  CHECK_THROWS_AS(reduce_states(low_rank, 30, 2), RankError);
}

TEST_CASE("output fit recovers known coefficients") {
  const MatrixXd design = testutil::random_matrix(200, 20, 5);
  const MatrixXd v = testutil::random_matrix(20, 3, 6);
  const OutputFit f = fit_output(design, design * v, 1e-9, {12, 8});
  CHECK(testutil::max_abs(f.ridge.coef - v) / testutil::max_abs(v) < 1e-4);
  CHECK(f.block(1).rows() == 8);
  CHECK(f.block(1) == f.ridge.coef.bottomRows(8));
  CHECK(f.sigma2_eta > 0.0);

  const OutputFit z = fit_output(design, MatrixXd::Zero(200, 3), 1e-3);
  CHECK(testutil::max_abs(z.ridge.coef) == 0.0);

  const EmbeddedInputs e = build_embeddings(testutil::random_matrix(50, 3, 7), 1, 0);
  const LayerStack s = run_deep_stack(small_config(2), e, 40, 0);
  CHECK_THROWS_AS(fit_output(s, 40, MatrixXd::Zero(40, 2), 1e-3, true), ConfigError);
}

TEST_CASE("ensemble members are independent and reproducible") {
  const PreparedData& p = lorenz_prepared();
  const DeepEsnConfig c = small_config(3);
  const EnsembleForecast f = forecast_ensemble(c, p.problem, p.stage);
  REQUIRE(f.data.size() == 3);
  const Alignment al = align(p.problem, c.m);
  for (int j = 2; j >= 0; --j) {
    const MemberForecast m = forecast_member(c, al, p.problem, p.stage, static_cast<std::uint64_t>(j));
    CHECK(m.data == f.data[static_cast<std::size_t>(j)]);
  }
  DeepEsnConfig one = c;
  one.n_res = 1;
  const EnsembleForecast a = forecast_ensemble(one, p.problem, p.stage);
  const EnsembleForecast b = forecast_ensemble(one, p.problem, p.stage);
  CHECK(a.data[0] == b.data[0]);
  CHECK(a.data[0] == f.data[0]);
  CHECK(a.data[0].allFinite());
  CHECK(a.data[0].rows() == 75);
}

TEST_CASE("single-layer path equals a hand-built echo state network") {
  const PreparedData& p = lorenz_prepared();
  DeepEsnConfig c = small_config(1);
  c.n_res = 1;
  const Alignment al = align(p.problem, c.m);
  const ReservoirSpec spec = c.layer_spec(1);
  const ReservoirWeights w = sample_weights(spec, al.embedded.width(), 0, 1);
  const MatrixXd h = run_reservoir(w, spec, al.embedded, VectorXd::Zero(spec.n_h)).states;
  const RidgeFit r = ridge_fit(h.topRows(al.n_fit), p.problem.targets.middleRows(al.first_target, al.n_fit), c.r_v);
  const MatrixXd coeffs = r.predict(h.bottomRows(al.n_forecast));
  const MemberForecast m = forecast_member(c, al, p.problem, p.stage, 0);
  CHECK(testutil::max_abs(m.coeffs - coeffs) < 1e-12);
}

TEST_CASE("in-sample fit beats the target variance") {
  const PreparedData& p = lorenz_prepared();
  const DeepEsnConfig c = small_config(2);
  const Alignment al = align(p.problem, c.m);
  const LayerStack s = run_deep_stack(c, al.embedded, al.n_fit, 0);
  const MatrixXd targets = p.problem.targets.middleRows(al.first_target, al.n_fit);
  const OutputFit f = fit_output(s, al.n_fit, targets, c.r_v, false);
  const MatrixXd fitted = f.predict(s.design(false).topRows(al.n_fit));
  const double var = (targets.rowwise() - targets.colwise().mean()).squaredNorm() / static_cast<double>(targets.size());
  CHECK(mspe(fitted, targets) < var);
}

TEST_CASE("ensemble mean settles by 100 members and a deep fit is quick") {
  const ExperimentData& data = lorenz_data();
  const PreparedData& p = lorenz_prepared();
  DeepEsnConfig c;
  c.L = 2;
  c.nu = {0.3, 0.6};
  c.m = 3;
  c.n_h1 = 50;
  c.n_h_tilde = 10;
  c.master_seed = 3;
  c.n_res = 100;
  const double a = mspe(cube_mean(forecast_ensemble(c, p.problem, p.stage).data), data.truth());
  c.n_res = 200;
  const double b = mspe(cube_mean(forecast_ensemble(c, p.problem, p.stage).data), data.truth());
  CHECK(std::abs(b - a) / a < 0.02);

  c.L = 7;
  c.nu = {0.5};
  c.n_res = 100;
  const auto start = std::chrono::steady_clock::now();
  const EnsembleForecast f = forecast_ensemble(c, p.problem, p.stage);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("seven-layer, 100-member fit: " << secs << " s");
  CHECK(secs < 175.0);
  CHECK(f.data.size() == 100);
}
