#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deesn/deepesn.hpp"
#include "deesn/forecast.hpp"
#include "deesn/problem.hpp"
#include "deesn/rng.hpp"

namespace deesn {

// Spike-and-slab prior per output coefficient; every per-layer vector holds
// one shared value or one value per layer (layer 1 first).
struct SsvsPrior {
  std::vector<double> pi_beta{0.25};
  std::vector<double> sigma2_beta0{5.0};    // slab
  std::vector<double> sigma2_beta1{0.001};  // spike
  double alpha_eta = 1.0;
  double beta_eta = 1.0;

  // L = 2: pi 0.25, slab 5; otherwise pi 0.10, slab 4 (L = 1 is the quadratic
  // model, whose design is as wide as a deep one). Spike 0.001, IG(1, 1).
  static SsvsPrior defaults_for_layers(int L);

  void validate(int L) const;
  double pi_at(int layer) const;
  double slab_at(int layer) const;
  double spike_at(int layer) const;

  nlohmann::json to_json() const;
  // Fields missing from j keep their values from base.
  static SsvsPrior from_json(const nlohmann::json& j, const SsvsPrior& base);
  static SsvsPrior from_json(const nlohmann::json& j);
};

struct GibbsConfig {
  int n_iter = 5000;
  int n_burn = 1000;
  int n_chains = 4;
  int thinning = 1;
  std::uint64_t seed = 0;
  bool store_beta = false;
  // Flat-prior intercept per output (covariates are centered on training means).
  bool intercept = true;
  // Scale each covariate column to unit training SD before the 1/n_res
  // average; constant columns are left unscaled.
  bool standardize = true;
  // Joint Gaussian draw of each output's coefficients while the total width
  // stays at or below this; single-coefficient updates above it.
  Eigen::Index block_limit = 600;
  // Ridge penalty for the starting coefficients.
  double init_ridge = 1e-3;

  void validate() const;
  int n_kept() const { return (n_iter - n_burn + thinning - 1) / thinning; }

  nlohmann::json to_json() const;
  static GibbsConfig from_json(const nlohmann::json& j);
};

// Per-member design matrices, generated once and treated as fixed. Rows are
// the training rows followed by the forecast rows of an Alignment.
struct ReservoirCovariates {
  std::vector<Eigen::MatrixXd> designs;
  std::vector<int> column_layer;           // 1-based layer of each column
  std::vector<Eigen::Index> column_unit;   // unit index within the layer block
  Eigen::Index n_fit = 0;
  Eigen::Index n_forecast = 0;
  Eigen::Index first_target = 0;

  int n_members() const { return static_cast<int>(designs.size()); }
  Eigen::Index width() const { return designs.empty() ? 0 : designs.front().cols(); }
  Eigen::Index total_width() const { return width() * n_members(); }
};

// Same seeds and maps as forecast_ensemble, so the states match a D-EESN fit
// exactly.
ReservoirCovariates precompute_reservoir_covariates(const DeepEsnConfig& config, const Alignment& alignment);

void save_covariates(const std::filesystem::path& path, const ReservoirCovariates& cov);
ReservoirCovariates load_covariates(const std::filesystem::path& path);

struct GibbsState {
  Eigen::MatrixXd beta;             // total_width x n_b, member blocks stacked
  Eigen::MatrixXi gamma;            // same shape, 0 = spike, 1 = slab
  Eigen::RowVectorXd intercept;     // 1 x n_b
  double sigma2_eta = 1.0;
  Eigen::MatrixXd alpha;            // n_fit x n_b
};

class GibbsSampler {
 public:
  // `data` holds the transformed, offset-free training rows (n_fit x n_z).
  GibbsSampler(const ReservoirCovariates& cov, const DataStage& stage, const SsvsPrior& prior,
               const GibbsConfig& config, const Eigen::MatrixXd& data, std::uint64_t chain = 0);

  void initialize();  // ridge start, gamma from its conditional
  void step();        // one full sweep: beta, gamma, intercept, sigma2, alpha

  void set_data(const Eigen::MatrixXd& data);
  // Draws every unknown from the prior given the covariates.
  void draw_from_prior();
  // New data from the data stage at the current alpha.
  Eigen::MatrixXd simulate_data();

  const GibbsState& state() const { return state_; }
  GibbsState& mutable_state() { return state_; }

  // Mean over members of the scaled design times beta plus intercept.
  Eigen::MatrixXd fitted_mean() const;
  Eigen::MatrixXd forecast_mean() const;

  // Gaussian full conditional of output b's coefficients (mean, covariance).
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> beta_conditional(Eigen::Index b) const;

  Eigen::Index n_b() const { return n_b_; }
  Eigen::Index total_width() const { return total_width_; }

 private:
  void update_beta_block();
  void update_beta_single_site();
  void update_gamma();
  void update_intercept();
  void update_sigma2();
  void update_alpha();
  Eigen::MatrixXd prior_precision() const;  // total_width x n_b

  const ReservoirCovariates& cov_;
  SsvsPrior prior_;
  GibbsConfig config_;
  Eigen::Index n_b_ = 0;
  Eigen::Index n_z_ = 0;
  Eigen::Index n_fit_ = 0;
  Eigen::Index width_ = 0;
  Eigen::Index total_width_ = 0;
  int members_ = 0;

  std::vector<Eigen::MatrixXd> x_fit_;   // centered (and standardized), times 1/n_res
  std::vector<Eigen::MatrixXd> x_fore_;
  std::vector<Eigen::MatrixXd> gram_;    // x_fit' x_fit per member
  Eigen::VectorXd layer_pi_, layer_slab_, layer_spike_;  // per column of a member block

  Eigen::MatrixXd phi_;
  Eigen::MatrixXd sigma_z_chol_;   // lower factor of Sigma_z
  Eigen::MatrixXd a_mat_;          // phi' Sigma_z^-1 phi
  Eigen::MatrixXd s_mat_;          // Sigma_z^-1 phi
  Eigen::MatrixXd data_proj_;      // data Sigma_z^-1 phi
  Eigen::MatrixXd resid_;          // alpha - fitted mean

  GibbsState state_;
  Rng rng_;
};

struct PosteriorSamples {
  Eigen::VectorXd sigma2_eta;                 // per kept draw
  std::vector<Eigen::MatrixXd> forecast_mean; // per kept draw, n_f x n_b
  std::vector<Eigen::MatrixXd> beta;          // per kept draw when stored
  Eigen::MatrixXd beta_mean;                  // total_width x n_b
  Eigen::MatrixXd inclusion;                  // fraction of kept draws with gamma = 1
  Eigen::MatrixXd alpha_mean;                 // n_fit x n_b
  Eigen::MatrixXd fitted_mean;                // n_fit x n_b, average of fitted means
  Eigen::VectorXd forecast_level;             // per kept draw, average of forecast_mean
  std::vector<int> column_layer;
  std::vector<Eigen::Index> column_unit;
  int n_members = 0;
  double seconds = 0.0;
};

// `train_data` holds the data-scale rows for the covariate training rows.
PosteriorSamples gibbs_run(const ReservoirCovariates& cov, const DataStage& stage, const SsvsPrior& prior,
                           const GibbsConfig& config, const Eigen::MatrixXd& train_data, std::uint64_t chain = 0);

// Predictive draws on the data scale: eta, the basis map, data-stage noise,
// then the inverse transform. At most max_draws kept draws are used, evenly
// spaced; chains are pooled.
ForecastCube posterior_forecast(const std::vector<PosteriorSamples>& chains, const DataStage& stage,
                                std::uint64_t seed, int max_draws = 1000);

// Predictive mean averaged over every kept draw, with the noise integrated out.
Eigen::MatrixXd posterior_mean_forecast(const std::vector<PosteriorSamples>& chains, const DataStage& stage);

// Potential scale reduction factor from m >= 2 equal-length chains.
double gelman_rubin(const std::vector<Eigen::VectorXd>& chains);

struct BayesRun {
  std::vector<PosteriorSamples> chains;
  std::map<std::string, double> rhat;  // sigma2_eta, forecast_level
};

// Independent chains (keyed by chain index) and their diagnostics.
BayesRun run_chains(const ReservoirCovariates& cov, const DataStage& stage, const SsvsPrior& prior,
                    const GibbsConfig& config, const Eigen::MatrixXd& train_data);

// member,layer,unit,output,frequency ; averaged over chains.
std::string inclusion_csv(const std::vector<PosteriorSamples>& chains);

}  // namespace deesn
