#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "deesn/basis.hpp"
#include "deesn/eval.hpp"
#include "deesn/reservoir.hpp"

namespace deesn {

enum class Transform { kIdentity, kLog };

// Maps data rows to output coefficients and back:
//   alpha_t = (g(Z_t) - offset) Phi,   g = identity or log.
struct DataStage {
  Transform transform = Transform::kIdentity;
  BasisDecomposition basis;
  Eigen::RowVectorXd offset;
  TruncationCovariance sigma_z;

  Eigen::Index n_z() const { return basis.n_z(); }
  Eigen::Index n_b() const { return basis.n_b(); }
  const Eigen::MatrixXd& phi() const { return basis.phi; }

  // g(Z) - offset; throws DataError on non-positive data in log mode.
  Eigen::MatrixXd centered(const Eigen::MatrixXd& data) const;
  Eigen::MatrixXd coefficients(const Eigen::MatrixXd& data) const;

  // Point forecast on the data scale. In log mode this is the log-Gaussian
  // mean exp(Phi a + offset + var/2) with var = eta_var * diag(Phi Phi').
  Eigen::MatrixXd to_data(const Eigen::MatrixXd& coeffs, double eta_var = 0.0) const;
  // Inverse of `centered` for a draw already on the transformed scale.
  Eigen::MatrixXd uncenter(const Eigen::MatrixXd& centered_rows) const;

  CrpsFamily family() const {
    return transform == Transform::kLog ? CrpsFamily::kLogGaussian : CrpsFamily::kGaussian;
  }
};

// Reservoir inputs: optional log, optional projection on leading EOFs, then
// per-column standardization with training statistics.
struct InputStage {
  bool log = false;
  std::optional<BasisDecomposition> eofs;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd sd;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const;
};

// Everything a forecaster sees. Times [0, n_train) are training; the rest are
// forecast targets. The input at time s forecasts the target at s + lead.
struct ForecastProblem {
  Eigen::MatrixXd inputs;   // T x n_x, already staged
  Eigen::MatrixXd targets;  // T x n_b coefficients
  Eigen::MatrixXd truth;    // T x n_z on the data scale
  Eigen::Index n_train = 0;
  Eigen::Index lead = 1;
  Eigen::Index tau = 1;

  Eigen::Index n_times() const { return truth.rows(); }
  Eigen::Index n_forecast() const { return n_times() - n_train; }
};

// Row bookkeeping for one embedding count m. Embedding row r uses inputs at
// s = m*tau + r and predicts time s + lead. The first n_fit rows predict
// training times; the following n_forecast rows predict the forecast times.
struct Alignment {
  EmbeddedInputs embedded;
  Eigen::Index n_fit = 0;
  Eigen::Index n_forecast = 0;
  Eigen::Index first_target = 0;  // target time of row 0

  Eigen::Index n_rows() const { return n_fit + n_forecast; }
};

Alignment align(const ForecastProblem& problem, Eigen::Index m);

struct PrepareOptions {
  Transform response_transform = Transform::kIdentity;
  // Neither set: Phi = I.
  std::optional<Eigen::Index> response_eofs;
  std::optional<double> response_eof_fraction;
  TruncationMode sigma_z = IdentityScaled{0.0};
  bool input_log = false;
  std::optional<Eigen::Index> input_eofs;
  Eigen::Index lead = 1;
  Eigen::Index tau = 1;
};

struct PreparedData {
  DataStage stage;
  InputStage input_stage;
  ForecastProblem problem;
};

// Fits every data-dependent map (offset, EOFs, standardization) on rows
// [0, n_train) of `response` and `input` and stages all rows.
PreparedData prepare_data(const Eigen::MatrixXd& response, const Eigen::MatrixXd& input, Eigen::Index n_train,
                          const GridSpec& response_grid, const PrepareOptions& options);

// Forecast-period rows of the truth.
Eigen::MatrixXd forecast_truth(const ForecastProblem& problem);

}  // namespace deesn
