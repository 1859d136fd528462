#include "deesn/eval.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "deesn/errors.hpp"
#include "deesn/stfield.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInvSqrtPi = 0.56418958354775628695;
constexpr double kInvSqrt2 = 0.70710678118654752440;

void same_shape(const MatrixXd& a, const MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + " differ");
  }
}

}  // namespace

double mspe(const MatrixXd& forecast, const MatrixXd& truth) {
  same_shape(forecast, truth, "mspe");
  if (truth.size() == 0) throw DataError("mspe of an empty field");
  return (forecast - truth).squaredNorm() / static_cast<double>(truth.size());
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double normal_pdf(double x) { return kInvSqrt2 * kInvSqrtPi * std::exp(-0.5 * x * x); }

double crps_gaussian(double mu, double sigma, double y) {
  if (!(sigma > 0.0)) throw DataError("crps_gaussian needs sigma > 0");
  const double z = (y - mu) / sigma;
  return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - kInvSqrtPi);
}

double crps_lognormal(double mu_log, double sigma_log, double y) {
  if (!(sigma_log > 0.0)) throw DataError("crps_lognormal needs sigma > 0");
  if (!(y > 0.0)) throw DataError("crps_lognormal needs y > 0");
  const double w = (std::log(y) - mu_log) / sigma_log;
  const double mean = std::exp(mu_log + 0.5 * sigma_log * sigma_log);
  return y * (2.0 * normal_cdf(w) - 1.0) -
         2.0 * mean * (normal_cdf(w - sigma_log) + normal_cdf(sigma_log * kInvSqrt2) - 1.0);
}

CrpsTotals crps_field(const MatrixXd& mu, const MatrixXd& sigma, const MatrixXd& truth, CrpsFamily family) {
  same_shape(mu, truth, "crps_field");
  same_shape(sigma, truth, "crps_field");
  if (truth.size() == 0) throw DataError("crps of an empty field");
  CrpsTotals out;
  for (Index c = 0; c < truth.cols(); ++c) {
    for (Index r = 0; r < truth.rows(); ++r) {
      out.sum += family == CrpsFamily::kGaussian ? crps_gaussian(mu(r, c), sigma(r, c), truth(r, c))
                                                 : crps_lognormal(mu(r, c), sigma(r, c), truth(r, c));
    }
  }
  out.mean = out.sum / static_cast<double>(truth.size());
  return out;
}

DistributionFit ensemble_to_distribution(const ForecastCube& draws, bool log_scale) {
  if (draws.size() < 2) throw DataError("ensemble_to_distribution needs at least two draws");
  const Index rows = draws.front().rows();
  const Index cols = draws.front().cols();
  DistributionFit fit;
  fit.mu = MatrixXd::Zero(rows, cols);
  MatrixXd sq = MatrixXd::Zero(rows, cols);
  for (const auto& d : draws) {
    if (d.rows() != rows || d.cols() != cols) throw DimensionError("ensemble draws differ in shape");
    if (log_scale) {
      if ((d.array() <= 0.0).any()) throw DataError("log-scale moments need strictly positive draws");
      fit.mu.array() += d.array().log();
    } else {
      fit.mu += d;
    }
  }
  const double n = static_cast<double>(draws.size());
  fit.mu /= n;
  for (const auto& d : draws) {
    if (log_scale) {
      sq.array() += (d.array().log() - fit.mu.array()).square();
    } else {
      sq.array() += (d - fit.mu).array().square();
    }
  }
  fit.sigma = (sq / (n - 1.0)).cwiseSqrt();
  for (Index i = 0; i < fit.sigma.size(); ++i) {
    if (!(fit.sigma.data()[i] >= kSigmaFloor)) {
      fit.sigma.data()[i] = kSigmaFloor;
      ++fit.floored;
    }
  }
  return fit;
}

CrpsTotals crps_draws(const ForecastCube& draws, const MatrixXd& truth, CrpsFamily family) {
  const DistributionFit fit = ensemble_to_distribution(draws, family == CrpsFamily::kLogGaussian);
  return crps_field(fit.mu, fit.sigma, truth, family);
}

ClimatologyForecast climatology_forecast(const MatrixXd& train, Index n_f, bool log_scale) {
  if (train.rows() < 2) throw DataError("climatology needs at least two training rows");
  ForecastCube rows;
  rows.reserve(static_cast<std::size_t>(train.rows()));
  for (Index t = 0; t < train.rows(); ++t) rows.emplace_back(train.row(t));
  const DistributionFit fit = ensemble_to_distribution(rows, log_scale);
  ClimatologyForecast c;
  c.mean = train.colwise().mean().replicate(n_f, 1);
  c.mu = fit.mu.replicate(n_f, 1);
  c.sigma = fit.sigma.replicate(n_f, 1);
  return c;
}

double skill_score(double model_mspe, double reference_mspe) {
  if (!(reference_mspe > 0.0)) throw DataError("skill score needs a positive reference MSPE");
  return 1.0 - model_mspe / reference_mspe;
}

VectorXd skill_map(const MatrixXd& model, const MatrixXd& reference, const MatrixXd& truth) {
  same_shape(model, truth, "skill_map");
  same_shape(reference, truth, "skill_map");
  VectorXd out(truth.cols());
  for (Index s = 0; s < truth.cols(); ++s) {
    const double m = (model.col(s) - truth.col(s)).squaredNorm();
    const double r = (reference.col(s) - truth.col(s)).squaredNorm();
    out(s) = skill_score(m, r);
  }
  return out;
}

double percent_positive(const VectorXd& values) {
  if (values.size() == 0) return 0.0;
  return 100.0 * static_cast<double>((values.array() > 0.0).count()) / static_cast<double>(values.size());
}

namespace {

// Least squares B for Y ~ X B, with a rank check on X.
MatrixXd least_squares(const MatrixXd& x, const MatrixXd& y) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) {
    throw RankError("linear DSTM regressors have rank " + std::to_string(qr.rank()) + " < n_b=" +
                    std::to_string(x.cols()));
  }
  return qr.solve(y);
}

}  // namespace

LinearDstm fit_linear_dstm(const MatrixXd& alphas, Index lead, const MatrixXd& phi, const MatrixXd& train_data,
                           LinearMode mode) {
  const Index t = alphas.rows();
  const Index n_b = alphas.cols();
  if (lead < 1) throw ConfigError("linear DSTM lead must be >= 1");
  if (t <= n_b + lead) throw DataError("linear DSTM needs T > n_b + lead");
  if (phi.cols() != n_b) throw DimensionError("basis width differs from coefficient width");
  if (train_data.rows() != t || train_data.cols() != phi.rows()) {
    throw DimensionError("training data must be T x n_z and align with the coefficients");
  }
  LinearDstm model;
  model.phi = phi;
  model.lead = lead;
  model.mode = mode;
  if (mode == LinearMode::kDirect) {
    // Row form: alpha_t' = alpha_{t-lead}' M'.
    model.M = least_squares(alphas.topRows(t - lead), alphas.bottomRows(t - lead)).transpose();
  } else {
    model.M_step = least_squares(alphas.topRows(t - 1), alphas.bottomRows(t - 1)).transpose();
    model.M = MatrixXd::Identity(n_b, n_b);
    for (Index i = 0; i < lead; ++i) model.M = model.M_step * model.M;
  }
  const MatrixXd fitted = alphas.topRows(t - lead) * model.M.transpose() * phi.transpose();
  MatrixXd resid = train_data.bottomRows(t - lead) - fitted;
  resid.rowwise() -= resid.colwise().mean();
  model.sigma_L = resid.transpose() * resid / static_cast<double>(resid.rows() - 1);
  return model;
}

LinearForecast forecast_linear_dstm(const LinearDstm& model, const MatrixXd& origins) {
  if (origins.cols() != model.M.cols()) throw DimensionError("forecast origins must have n_b columns");
  LinearForecast f;
  f.coeffs = origins * model.M.transpose();
  f.mean = f.coeffs * model.phi.transpose();
  f.sd = model.sigma_L.diagonal().cwiseMax(0.0).cwiseSqrt().cwiseMax(kSigmaFloor);
  return f;
}

std::string scores_csv(const std::vector<ScoreRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "model,MSPE,CRPS-mean,CRPS-sum,%SS>0\n";
  auto opt = [&out](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& r : rows) {
    out << r.model << ',' << r.mspe << ',';
    opt(r.crps_mean);
    out << ',';
    opt(r.crps_sum);
    out << ',';
    opt(r.pct_ss_positive);
    out << '\n';
  }
  return out.str();
}

void save_scores(const std::filesystem::path& path, const std::vector<ScoreRow>& rows) {
  write_file_atomically(path, scores_csv(rows));
}

}  // namespace deesn
