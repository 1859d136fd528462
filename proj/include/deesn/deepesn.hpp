#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "deesn/forecast.hpp"
#include "deesn/problem.hpp"
#include "deesn/reservoir.hpp"

namespace deesn {

// Layer 1 feeds the output stage; layer L reads the embedded inputs.
struct DeepEsnConfig {
  int L = 1;
  Eigen::Index n_h1 = 50;
  Eigen::Index n_h_deep = 84;
  Eigen::Index n_h_tilde = 10;
  // Either one shared value or L values, layer 1 first.
  std::vector<double> nu{0.5};
  double pi_w = 0.10;
  double pi_u = 0.10;
  double a_w = 0.10;
  double a_u = 0.10;
  double r_v = 1e-3;
  Eigen::Index m = 0;
  int n_res = 100;
  bool quadratic = false;
  std::uint64_t master_seed = 0;

  void validate() const;
  double nu_at(int layer) const;
  Eigen::Index hidden_size(int layer) const;
  ReservoirSpec layer_spec(int layer) const;

  nlohmann::json to_json() const;
  static DeepEsnConfig from_json(const nlohmann::json& j);
};

// Training-fitted PCA map: (h - mean) components.
struct ReductionMap {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // n_h x n_h_tilde, orthonormal columns

  Eigen::MatrixXd apply(const Eigen::MatrixXd& states) const;
};

struct Reduction {
  Eigen::MatrixXd reduced;
  ReductionMap map;
};

// Fits the map on the first n_fit_rows rows and applies it to all rows.
Reduction reduce_states(const Eigen::MatrixXd& states, Eigen::Index n_fit_rows, Eigen::Index n_h_tilde);

struct LayerStack {
  // Index i holds layer i + 1.
  std::vector<ReservoirWeights> weights;
  std::vector<Eigen::MatrixXd> states;
  std::vector<Eigen::MatrixXd> reduced;  // empty matrix for layer 1
  std::vector<ReductionMap> maps;        // unused for layer 1

  int L() const { return static_cast<int>(states.size()); }

  // [h_1, tanh(reduced_2), ..., tanh(reduced_L)], plus h_1^2 when quadratic.
  Eigen::MatrixXd design(bool quadratic) const;
  std::vector<Eigen::Index> block_widths(bool quadratic) const;
};

// Runs layer L on the embedded rows, then reduces and feeds downwards to
// layer 1. Reduction maps are fitted on the first n_fit_rows rows.
LayerStack run_deep_stack(const DeepEsnConfig& config, const EmbeddedInputs& embedded, Eigen::Index n_fit_rows,
                          std::uint64_t member);

struct OutputFit {
  RidgeFit ridge;
  std::vector<Eigen::Index> block_widths;
  double sigma2_eta = 0.0;  // residual mean square, divisor T_train * n_b

  // Rows of the coefficient matrix belonging to design block i.
  Eigen::MatrixXd block(std::size_t i) const;
  Eigen::MatrixXd predict(const Eigen::MatrixXd& design) const { return ridge.predict(design); }
};

OutputFit fit_output(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets, double r_v,
                     std::vector<Eigen::Index> block_widths = {});

// Uses the first n_fit_rows rows of the stack design.
OutputFit fit_output(const LayerStack& stack, Eigen::Index n_fit_rows, const Eigen::MatrixXd& targets, double r_v,
                     bool quadratic);

struct MemberForecast {
  Eigen::MatrixXd coeffs;  // n_f x n_b
  Eigen::MatrixXd data;    // n_f x n_z
  double sigma2_eta = 0.0;
};

struct EnsembleForecast {
  ForecastCube data;    // per member, n_f x n_z on the data scale
  ForecastCube coeffs;  // per member, n_f x n_b
  std::vector<double> sigma2_eta;
  Eigen::Index lead = 1;
  Eigen::Index first_time = 0;  // time index of forecast row 0
};

MemberForecast forecast_member(const DeepEsnConfig& config, const Alignment& alignment,
                               const ForecastProblem& problem, const DataStage& stage, std::uint64_t member);

// Algorithm: for each member draw all layers, run the stack over training and
// forecast rows, ridge-fit on training rows, forecast the rest.
EnsembleForecast forecast_ensemble(const DeepEsnConfig& config, const ForecastProblem& problem,
                                   const DataStage& stage);

}  // namespace deesn
