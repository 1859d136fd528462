#include <doctest.h>

#include <cmath>
#include <sstream>

#include "deesn/errors.hpp"
#include "deesn/reservoir.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace deesn;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using oracle::solve_by_elimination;

double nonzero_fraction(const SparseMatrix& m) {
  return static_cast<double>(m.nonZeros()) / static_cast<double>(m.rows() * m.cols());
}

}  // namespace

TEST_CASE("embedding rows stack current then lagged inputs") {
  MatrixXd x(10, 1);
  for (int i = 0; i < 10; ++i) x(i, 0) = i + 1;
  const EmbeddedInputs e = build_embeddings(x, 1, 2);
  CHECK(e.first_time() == 2);
  CHECK(e.n_rows() == 8);
  // Time 5 (1-based) is embedded row 2.
  CHECK(e.matrix.row(2) == Eigen::RowVector3d(5, 4, 3));

  const MatrixXd y = testutil::random_matrix(20, 3, 1);
  const EmbeddedInputs id = build_embeddings(y, 2, 0);
  CHECK(id.matrix == y);

  const EmbeddedInputs lz = build_embeddings(testutil::random_matrix(50, 18, 2), 3, 3);
  CHECK(lz.width() == 4 * 18);
  CHECK(lz.first_time() + 1 == 10);
  CHECK(lz.matrix.block(0, 18, 1, 18) == testutil::random_matrix(50, 18, 2).row(6));

  CHECK_THROWS_AS(build_embeddings(testutil::random_matrix(9, 1, 3), 3, 3), DataError);
}

TEST_CASE("weights are sparse, bounded and reproducible") {
  ReservoirSpec spec;
  spec.n_h = 100;
  spec.seed = 42;
  const ReservoirWeights a = sample_weights(spec, 60, 3, 1);
  const ReservoirWeights b = sample_weights(spec, 60, 3, 1);
  CHECK(MatrixXd(a.W) == MatrixXd(b.W));
  CHECK(MatrixXd(a.U) == MatrixXd(b.U));
  const ReservoirWeights other = sample_weights(spec, 60, 4, 1);
  CHECK(MatrixXd(a.W) != MatrixXd(other.W));

  const double n_w = 100.0 * 100.0;
  const double sd_w = std::sqrt(0.1 * 0.9 / n_w);
  CHECK(std::abs(nonzero_fraction(a.W) - 0.10) < 4.0 * sd_w);
  const double sd_u = std::sqrt(0.1 * 0.9 / (100.0 * 60.0));
  CHECK(std::abs(nonzero_fraction(a.U) - 0.10) < 4.0 * sd_u);
  CHECK(MatrixXd(a.W).cwiseAbs().maxCoeff() <= 0.1);
  CHECK(MatrixXd(a.U).cwiseAbs().maxCoeff() <= 0.1);
  for (int k = 0; k < a.W.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(a.W, k); it; ++it) CHECK(it.value() != 0.0);
  CHECK(a.lambda_w == doctest::Approx(spectral_radius(MatrixXd(a.W))).epsilon(1e-10));
}

TEST_CASE("an all-zero draw is redrawn and counted") {
  ReservoirSpec spec;
  spec.n_h = 1;
  spec.pi_w = 0.05;
  bool saw_resample = false;
  for (std::uint64_t seed = 0; seed < 50 && !saw_resample; ++seed) {
    spec.seed = seed;
    const ReservoirWeights w = sample_weights(spec, 2);
    CHECK(w.W.nonZeros() == 1);
    saw_resample = w.resample_count > 0;
  }
  CHECK(saw_resample);
}

TEST_CASE("spectral radius") {
  CHECK(spectral_radius(MatrixXd(Eigen::Vector2d(3, -5).asDiagonal())) == doctest::Approx(5.0));
  CHECK(spectral_radius(MatrixXd::Zero(4, 4)) == 0.0);
  CHECK(spectral_radius(SparseMatrix(6, 6)) == 0.0);

  const MatrixXd r = testutil::random_matrix(8, 8, 7);
  const double oracle = Eigen::EigenSolver<MatrixXd>(r).eigenvalues().cwiseAbs().maxCoeff();
  CHECK(spectral_radius(r) == doctest::Approx(oracle).epsilon(1e-8));

  // The iterative path on sparse reservoirs of several sizes.
  ReservoirSpec spec;
  for (Index n : {30, 84, 150}) {
    spec.n_h = n;
    spec.seed = static_cast<std::uint64_t>(n);
    const ReservoirWeights w = sample_weights(spec, 5);
    const double dense = Eigen::EigenSolver<MatrixXd>(MatrixXd(w.W)).eigenvalues().cwiseAbs().maxCoeff();
    CHECK(spectral_radius_iterative(w.W) == doctest::Approx(dense).epsilon(1e-8));
  }
  CHECK_THROWS_AS(spectral_radius(MatrixXd::Zero(2, 3)), DimensionError);
}

TEST_CASE("scaled recurrent matrix has spectral radius nu") {
  ReservoirSpec spec;
  spec.n_h = 120;
  for (double nu : {0.1, 0.35, 0.9}) {
    spec.nu = nu;
    spec.seed = 9;
    const ReservoirWeights w = sample_weights(spec, 4);
    const MatrixXd scaled = (nu / w.lambda_w) * MatrixXd(w.W);
    CHECK(Eigen::EigenSolver<MatrixXd>(scaled).eigenvalues().cwiseAbs().maxCoeff() == doctest::Approx(nu).epsilon(1e-8));
  }
}

TEST_CASE("reservoir recursion") {
  ReservoirSpec spec;
  spec.n_h = 40;
  spec.seed = 5;
  const MatrixXd x = testutil::random_matrix(60, 6, 11);
  const VectorXd h0 = VectorXd::Zero(40);

  SUBCASE("nu = 0 is memoryless") {
    spec.nu = 0.0;
    const ReservoirWeights w = sample_weights(spec, 6);
    const HiddenStates h = run_reservoir(w, spec, x, h0);
    const MatrixXd direct = (x * MatrixXd(w.U).transpose()).array().tanh().matrix();
    CHECK(testutil::max_abs(h.states - direct) < 1e-14);
  }
  SUBCASE("zero inputs stay at zero") {
    const ReservoirWeights w = sample_weights(spec, 6);
    CHECK(testutil::max_abs(run_reservoir(w, spec, MatrixXd::Zero(30, 6), h0).states) == 0.0);
  }
  SUBCASE("one explicit step") {
    spec.nu = 0.7;
    const ReservoirWeights w = sample_weights(spec, 6);
    const VectorXd start = VectorXd::Constant(40, 0.3);
    const HiddenStates h = run_reservoir(w, spec, x.topRows(2), start);
    const VectorXd h1 = ((0.7 / w.lambda_w) * (MatrixXd(w.W) * start) + MatrixXd(w.U) * x.row(0).transpose())
                            .array()
                            .tanh()
                            .matrix();
    CHECK(testutil::max_abs(h.states.row(0).transpose() - h1) < 1e-14);
    CHECK(h.states.cwiseAbs().maxCoeff() < 1.0);
  }
  SUBCASE("echo-state contraction") {
    spec.nu = 0.35;
    const ReservoirWeights w = sample_weights(spec, 6);
    const MatrixXd xs = testutil::random_matrix(100, 6, 12);
    const HiddenStates a = run_reservoir(w, spec, xs, VectorXd::Constant(40, 0.9));
    const HiddenStates b = run_reservoir(w, spec, xs, VectorXd::Constant(40, -0.9));
    const double gap10 = (a.states.row(9) - b.states.row(9)).norm();
    const double gap50 = (a.states.row(49) - b.states.row(49)).norm();
    const double gap100 = (a.states.row(99) - b.states.row(99)).norm();
    CHECK(gap50 < 1e-6);
    CHECK(gap100 < gap10);
  }
  SUBCASE("shape errors") {
    const ReservoirWeights w = sample_weights(spec, 6);
    CHECK_THROWS_AS(run_reservoir(w, spec, MatrixXd::Zero(3, 5), h0), DimensionError);
    CHECK_THROWS_AS(run_reservoir(w, spec, x, VectorXd::Zero(3)), DimensionError);
  }
}

TEST_CASE("ridge regression") {
  SUBCASE("identity design reproduces the targets") {
    const MatrixXd y = testutil::random_matrix(5, 2, 13);
    const RidgeFit f = ridge_fit(MatrixXd::Identity(5, 5), y, 1e-12, Intercept::kNone);
    CHECK(testutil::max_abs(f.coef - y) < 1e-10);
  }
  SUBCASE("two by two hand case") {
    const MatrixXd x{{1.0, 0.0}, {0.0, 2.0}};
    const MatrixXd y{{1.0}, {2.0}};
    const RidgeFit f = ridge_fit(x, y, 1.0, Intercept::kNone);
    CHECK(f.coef(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(f.coef(1, 0) == doctest::Approx(0.8).epsilon(1e-14));
  }
  SUBCASE("normal-equation oracle, with and without intercept") {
    for (Index p : {1, 4, 10}) {
      const MatrixXd x = testutil::random_matrix(30, p, 100 + static_cast<std::uint64_t>(p));
      const MatrixXd y = testutil::random_matrix(30, 3, 200 + static_cast<std::uint64_t>(p)).array() + 2.0;
      const double r = 0.37;
      const MatrixXd plain = solve_by_elimination(x.transpose() * x + r * MatrixXd::Identity(p, p), x.transpose() * y);
      CHECK(testutil::max_abs(ridge_fit(x, y, r, Intercept::kNone).coef - plain) < 1e-8);

      MatrixXd xa(30, p + 1);
      xa << MatrixXd::Ones(30, 1), x;
      MatrixXd pen = r * MatrixXd::Identity(p + 1, p + 1);
      pen(0, 0) = 0.0;
      const MatrixXd aug = solve_by_elimination(xa.transpose() * xa + pen, xa.transpose() * y);
      const RidgeFit f = ridge_fit(x, y, r);
      CHECK(testutil::max_abs(f.intercept - aug.row(0)) < 1e-8);
      CHECK(testutil::max_abs(f.coef - aug.bottomRows(p)) < 1e-8);
      CHECK(testutil::max_abs(f.predict(x) - xa * aug) < 1e-8);
    }
  }
  SUBCASE("coefficient norm shrinks as the penalty grows") {
    const MatrixXd x = testutil::random_matrix(40, 8, 14);
    const MatrixXd y = testutil::random_matrix(40, 2, 15);
    double prev = std::numeric_limits<double>::infinity();
    for (double r = 1e-4; r < 1e4; r *= 3.0) {
      const double n = ridge_fit(x, y, r).coef.norm();
      CHECK(n <= prev + 1e-12);
      prev = n;
    }
  }
  CHECK_THROWS_AS(ridge_fit(MatrixXd::Ones(3, 2), MatrixXd::Ones(3, 1), 0.0), ConfigError);
  CHECK_THROWS_AS(ridge_fit(MatrixXd::Ones(3, 2), MatrixXd::Ones(4, 1), 1.0), DimensionError);
}

TEST_CASE("coordinate-list dump") {
  SparseMatrix m(3, 4);
  m.insert(0, 1) = 2.5;
  m.insert(2, 3) = -1.0;
  m.makeCompressed();
  std::ostringstream out;
  write_coo(out, m);
  const std::string s = out.str();
  CHECK(s.rfind("3 4 2\n", 0) == 0);
  CHECK(s.find("0 1 2.5") != std::string::npos);
  CHECK(s.find("2 3 -1") != std::string::npos);
}
