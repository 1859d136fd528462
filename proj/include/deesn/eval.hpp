#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deesn/forecast.hpp"

namespace deesn {

double mspe(const Eigen::MatrixXd& forecast, const Eigen::MatrixXd& truth);

double normal_cdf(double x);
double normal_pdf(double x);

// sigma [z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)], z = (y - mu) / sigma.
double crps_gaussian(double mu, double sigma, double y);

// CRPS of LogGaussian(mu, sigma^2) at y > 0.
double crps_lognormal(double mu_log, double sigma_log, double y);

struct CrpsTotals {
  double mean = 0.0;  // average over cells
  double sum = 0.0;   // total over cells
};

enum class CrpsFamily { kGaussian, kLogGaussian };

// Elementwise CRPS over aligned n_f x n_z matrices of parameters and truths.
CrpsTotals crps_field(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& truth,
                      CrpsFamily family);

struct DistributionFit {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd sigma;
  Eigen::Index floored = 0;  // cells whose spread was raised to the floor
};

inline constexpr double kSigmaFloor = 1e-8;

// Per-cell sample mean and SD (divisor n - 1). With log_scale the moments are
// taken of log(draw), which must be positive.
DistributionFit ensemble_to_distribution(const ForecastCube& draws, bool log_scale);

// CRPS of the Gaussian (or log-Gaussian) fitted to each cell of the draws.
CrpsTotals crps_draws(const ForecastCube& draws, const Eigen::MatrixXd& truth, CrpsFamily family);

// Training-period per-location mean, repeated over n_f rows. mu/sigma are the
// per-location moments (of log values when log_scale) for CRPS.
struct ClimatologyForecast {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd mu;
  Eigen::MatrixXd sigma;
};

ClimatologyForecast climatology_forecast(const Eigen::MatrixXd& train, Eigen::Index n_f, bool log_scale);

double skill_score(double model_mspe, double reference_mspe);

// Per-location skill over test time: 1 - MSPE_model(s) / MSPE_reference(s).
Eigen::VectorXd skill_map(const Eigen::MatrixXd& model, const Eigen::MatrixXd& reference,
                          const Eigen::MatrixXd& truth);

// Percentage (0..100) of entries strictly above zero.
double percent_positive(const Eigen::VectorXd& values);

enum class LinearMode { kDirect, kIterated };

// alpha_t = M alpha_{t - lead} (direct) or alpha_t = M1 alpha_{t-1} applied
// `lead` times (iterated). Residual covariance is taken on the scale of the
// transformed, offset-free data.
struct LinearDstm {
  Eigen::MatrixXd M;       // n_b x n_b (the lead-step map in both modes)
  Eigen::MatrixXd M_step;  // the fitted one-step map in iterated mode
  Eigen::MatrixXd sigma_L; // n_z x n_z
  Eigen::MatrixXd phi;     // n_z x n_b
  Eigen::Index lead = 1;
  LinearMode mode = LinearMode::kDirect;
};

LinearDstm fit_linear_dstm(const Eigen::MatrixXd& alphas, Eigen::Index lead, const Eigen::MatrixXd& phi,
                           const Eigen::MatrixXd& train_data, LinearMode mode = LinearMode::kDirect);

struct LinearForecast {
  Eigen::MatrixXd coeffs;  // n_f x n_b
  Eigen::MatrixXd mean;    // n_f x n_z, coeffs phi'
  Eigen::VectorXd sd;      // per-location sqrt(diag sigma_L)
};

// `origins` row i holds alpha at the time `lead` steps before forecast i.
LinearForecast forecast_linear_dstm(const LinearDstm& model, const Eigen::MatrixXd& origins);

struct ScoreRow {
  std::string model;
  double mspe = 0.0;
  std::optional<double> crps_mean;
  std::optional<double> crps_sum;
  std::optional<double> pct_ss_positive;
};

// model,MSPE,CRPS-mean,CRPS-sum,%SS>0 ; absent values are left empty.
std::string scores_csv(const std::vector<ScoreRow>& rows);
void save_scores(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);

}  // namespace deesn
