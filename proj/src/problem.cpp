#include "deesn/problem.hpp"

#include <cmath>
#include <string>

#include "deesn/errors.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

MatrixXd DataStage::centered(const MatrixXd& data) const {
  if (data.cols() != n_z()) throw DimensionError("data rows must have n_z=" + std::to_string(n_z()) + " values");
  MatrixXd out;
  if (transform == Transform::kLog) {
    if ((data.array() <= 0.0).any()) throw DataError("log-Gaussian data stage needs strictly positive data");
    out = data.array().log().matrix();
  } else {
    out = data;
  }
  out.rowwise() -= offset;
  return out;
}

MatrixXd DataStage::coefficients(const MatrixXd& data) const { return centered(data) * phi(); }

MatrixXd DataStage::uncenter(const MatrixXd& centered_rows) const {
  MatrixXd out = centered_rows.rowwise() + offset;
  if (transform == Transform::kLog) out = out.array().exp().matrix();
  return out;
}

MatrixXd DataStage::to_data(const MatrixXd& coeffs, double eta_var) const {
  if (coeffs.cols() != n_b()) throw DimensionError("coefficient rows must have n_b=" + std::to_string(n_b()) + " values");
  MatrixXd out = coeffs * phi().transpose();
  if (transform == Transform::kLog && eta_var > 0.0) {
    const RowVectorXd half_var = 0.5 * eta_var * phi().rowwise().squaredNorm().transpose();
    out.rowwise() += half_var;
  }
  return uncenter(out);
}

MatrixXd InputStage::apply(const MatrixXd& raw) const {
  MatrixXd x;
  if (log) {
    if ((raw.array() <= 0.0).any()) throw DataError("log inputs need strictly positive values");
    x = raw.array().log().matrix();
  } else {
    x = raw;
  }
  if (eofs) x = project(*eofs, x.rowwise() - eofs->mean);
  if (x.cols() != mean.size()) throw DimensionError("input width differs from the fitted standardization");
  x.rowwise() -= mean;
  return x.array().rowwise() / sd.array();
}

Alignment align(const ForecastProblem& problem, Index m) {
  const Index t = problem.n_times();
  if (problem.lead < 1 || problem.tau < 1) throw ConfigError("lead and tau must be >= 1");
  if (t <= problem.lead) throw DataError("series shorter than the lead time");
  Alignment a;
  // Inputs after T - lead have no target and are never needed.
  a.embedded = build_embeddings(problem.inputs.topRows(t - problem.lead), problem.tau, m);
  a.first_target = a.embedded.first_time() + problem.lead;
  a.n_fit = problem.n_train - a.first_target;
  if (a.n_fit < 2) {
    throw DataError("training period too short for lead=" + std::to_string(problem.lead) + ", tau=" +
                    std::to_string(problem.tau) + ", m=" + std::to_string(m));
  }
  a.n_forecast = a.embedded.n_rows() - a.n_fit;
  return a;
}

PreparedData prepare_data(const MatrixXd& response, const MatrixXd& input, Index n_train, const GridSpec& response_grid,
                          const PrepareOptions& options) {
  const Index t = response.rows();
  if (input.rows() != t) throw DimensionError("input and response differ in length");
  if (n_train < 2 || n_train > t) throw ConfigError("n_train must lie in [2, T]");
  if (response_grid.n_z() != response.cols()) throw DimensionError("response grid differs from response width");

  PreparedData out;
  DataStage& stage = out.stage;
  stage.transform = options.response_transform;
  MatrixXd g = response;
  if (stage.transform == Transform::kLog) {
    if ((g.array() <= 0.0).any()) throw DataError("log-Gaussian data stage needs strictly positive data");
    g = g.array().log().matrix();
  }
  const MatrixXd g_train = g.topRows(n_train);
  stage.offset = g_train.colwise().mean();
  if (options.response_eofs || options.response_eof_fraction) {
    EofOptions eo;
    eo.n_b = options.response_eofs;
    eo.target_fraction = options.response_eof_fraction;
    SpatioTemporalField train_field(response_grid, std::vector<std::string>(static_cast<std::size_t>(n_train), "t"),
                                    g_train.rowwise() - stage.offset);
    stage.basis = fit_eof(train_field, eo);
  } else {
    stage.basis = BasisDecomposition::identity(response_grid);
  }
  stage.sigma_z = truncation_covariance(stage.basis, options.sigma_z);

  InputStage& in = out.input_stage;
  in.log = options.input_log;
  MatrixXd x = input;
  if (in.log) {
    if ((x.array() <= 0.0).any()) throw DataError("log inputs need strictly positive values");
    x = x.array().log().matrix();
  }
  if (options.input_eofs) {
    EofOptions eo;
    eo.n_b = options.input_eofs;
    eo.retain_tail = false;
    const MatrixXd x_train = x.topRows(n_train);
    SpatioTemporalField f(GridSpec::abstract(x.cols()), std::vector<std::string>(static_cast<std::size_t>(n_train), "t"),
                          x_train);
    in.eofs = fit_eof(f, eo);
    x = project(*in.eofs, x.rowwise() - in.eofs->mean);
  }
  in.mean = x.topRows(n_train).colwise().mean();
  in.sd = ((x.topRows(n_train).rowwise() - in.mean).array().square().colwise().sum() /
           static_cast<double>(n_train - 1))
              .sqrt();
  for (Index c = 0; c < in.sd.size(); ++c) {
    if (!(in.sd(c) > 0.0)) in.sd(c) = 1.0;  // constant column: leave unscaled
  }

  ForecastProblem& p = out.problem;
  p.inputs = (x.rowwise() - in.mean).array().rowwise() / in.sd.array();
  p.targets = (g.rowwise() - stage.offset) * stage.phi();
  p.truth = response;
  p.n_train = n_train;
  p.lead = options.lead;
  p.tau = options.tau;
  return out;
}

MatrixXd forecast_truth(const ForecastProblem& problem) {
  return problem.truth.bottomRows(problem.n_forecast());
}

}  // namespace deesn
