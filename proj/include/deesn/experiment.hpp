#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deesn/bayes.hpp"
#include "deesn/deepesn.hpp"
#include "deesn/eval.hpp"
#include "deesn/lorenz96.hpp"
#include "deesn/problem.hpp"
#include "deesn/stfield.hpp"
#include "deesn/tune.hpp"

namespace deesn {

enum class ModelKind { kQeesn, kBqeesn, kDeesn, kBdeesn, kLinDstm, kClimatology };

std::string model_name(ModelKind kind);
ModelKind parse_model(const std::string& name);
bool is_bayesian(ModelKind kind);
bool is_reservoir(ModelKind kind);

// Q kinds: one quadratic layer with a single nu. Other kinds: no quadratic term.
DeepEsnConfig reservoir_config(ModelKind kind, DeepEsnConfig base);

// A response/input pair with its train/test split and preparation options.
struct ExperimentData {
  std::string kind;              // "lorenz96" or "field-forecast"
  SpatioTemporalField response;  // the modelled scale (anomalies in field runs)
  Eigen::MatrixXd input;         // T x n_x, same rows as response
  Eigen::Index n_train = 0;
  PrepareOptions options;
  std::vector<int> score_months;  // empty: score every test row

  Eigen::Index n_test() const { return response.n_times() - n_train; }
  PreparedData prepare() const;
  TuneData tune_data() const;
  Eigen::MatrixXd truth() const;
  std::vector<std::string> test_times() const;
  // Indices into the test rows that enter the scores.
  std::vector<Eigen::Index> score_rows() const;
};

struct LorenzExperimentOptions {
  Eigen::Index holdout = 75;
  Eigen::Index lead = 3;
  Eigen::Index tau = 3;
  double sigma2_z = 0.25;
};

// z is both input and response; log data stage with Phi = I.
ExperimentData lorenz_experiment(const SpatioTemporalField& z, const LorenzExperimentOptions& options = {});

struct FieldExperimentOptions {
  Eigen::Index holdout = 72;
  Eigen::Index lead = 6;
  Eigen::Index tau = 6;
  std::optional<Eigen::Index> response_eofs = 15;
  std::optional<double> response_eof_fraction;
  double nugget = 0.01;
  Eigen::Index input_eofs = 5;
  bool seasonal = true;
  std::vector<int> score_months;
};

// Anomalies from training-period (monthly) means for both fields, EOF bases,
// low-rank-plus-nugget data covariance.
ExperimentData field_experiment(const SpatioTemporalField& response, const SpatioTemporalField& input,
                                const FieldExperimentOptions& options = {});

struct ModelSpec {
  ModelKind kind = ModelKind::kDeesn;
  DeepEsnConfig esn;
  std::optional<SsvsPrior> prior;  // defaults_for_layers when absent
  GibbsConfig gibbs;
  LinearMode linear_mode = LinearMode::kDirect;
  int max_draws = 1000;
};

struct ModelForecast {
  std::string model;
  Eigen::MatrixXd mean;  // n_test x n_z, data scale
  DistributionFit dist;  // per-cell CRPS parameters
  CrpsFamily family = CrpsFamily::kGaussian;
  ForecastCube draws;    // members or predictive draws; empty for baselines
  std::string inclusion; // CSV for Bayesian models
  nlohmann::json info = nlohmann::json::object();
};

ModelForecast run_model(const ModelSpec& spec, const ExperimentData& data, const PreparedData& prepared);

struct ScoredModel {
  ScoreRow row;
  Eigen::VectorXd skill;  // per location, against the reference
};

// Scores every model on the scored test rows; skill against `reference`.
std::vector<ScoredModel> score_models(const std::vector<ModelForecast>& models, const ModelForecast& reference,
                                      const ExperimentData& data);

// Long format: time,location,truth,mean,lower,upper (95% point-wise band).
std::string band_csv(const ModelForecast& model, const ExperimentData& data);

struct SyntheticFieldConfig {
  Eigen::Index n_times = 768;  // monthly rows
  Eigen::Index ny = 20, nx = 20;
  Eigen::Index input_ny = 10, input_nx = 15;
  Eigen::Index lead = 6;
  int first_year = 1950;
  double noise_sd = 0.3;
  double input_noise_sd = 0.3;
  double seasonal_amplitude = 2.0;
  std::uint64_t seed = 0;
};

struct SyntheticField {
  SpatioTemporalField response;  // soil-moisture-like, lat/lon grid
  SpatioTemporalField input;     // SST-like driver field
};

// Quasi-periodic latent oscillators drive the input field; the response
// responds nonlinearly to the oscillators `lead` months earlier, plus
// unpredictable smooth modes, white noise and a seasonal cycle.
SyntheticField synthetic_seasonal_field(const SyntheticFieldConfig& config);

}  // namespace deesn
