#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstdint>
#include <iosfwd>

namespace deesn {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Lagged-input rows [x_t, x_{t-tau}, ..., x_{t-m*tau}] for every time t with
// t >= m*tau (0-based). Row r of `matrix` belongs to time first_time() + r.
struct EmbeddedInputs {
  Eigen::Index tau = 1;
  Eigen::Index m = 0;
  Eigen::Index n_x = 0;
  Eigen::MatrixXd matrix;

  Eigen::Index first_time() const { return m * tau; }
  Eigen::Index n_rows() const { return matrix.rows(); }
  Eigen::Index width() const { return matrix.cols(); }
};

EmbeddedInputs build_embeddings(const Eigen::MatrixXd& inputs, Eigen::Index tau, Eigen::Index m);

enum class Activation { kTanh };

struct ReservoirSpec {
  Eigen::Index n_h = 50;
  double nu = 0.5;
  double pi_w = 0.10;
  double pi_u = 0.10;
  double a_w = 0.10;
  double a_u = 0.10;
  Activation activation = Activation::kTanh;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ReservoirWeights {
  SparseMatrix W;  // n_h x n_h
  SparseMatrix U;  // n_h x n_in
  double lambda_w = 0.0;
  // Number of times an identically-zero W forced a redraw.
  int resample_count = 0;
};

// Draws W and U from the sparse spike-at-zero / uniform mixtures using the
// stream keyed by (spec.seed, member, layer).
ReservoirWeights sample_weights(const ReservoirSpec& spec, Eigen::Index n_in, std::uint64_t member = 0,
                                std::uint64_t layer = 0);

struct SpectralRadiusOptions {
  int max_iterations = 10000;
  double tolerance = 1e-10;
  // Matrices up to this order use a dense eigensolver.
  Eigen::Index dense_limit = 200;
};

double spectral_radius(const SparseMatrix& w, const SpectralRadiusOptions& options = {});
double spectral_radius(const Eigen::MatrixXd& w, const SpectralRadiusOptions& options = {});

// Block power iteration; exposed so it can be checked against the dense path.
double spectral_radius_iterative(const SparseMatrix& w, const SpectralRadiusOptions& options = {});

struct HiddenStates {
  Eigen::MatrixXd states;  // rows align with the input rows
  Eigen::VectorXd h0;
};

// h_t = tanh((nu / |lambda_w|) W h_{t-1} + U x_t); the recurrent term is
// dropped when lambda_w == 0.
HiddenStates run_reservoir(const ReservoirWeights& weights, const ReservoirSpec& spec, const Eigen::MatrixXd& inputs,
                           const Eigen::VectorXd& h0);
HiddenStates run_reservoir(const ReservoirWeights& weights, const ReservoirSpec& spec, const EmbeddedInputs& embedded,
                           const Eigen::VectorXd& h0);

struct RidgeFit {
  Eigen::MatrixXd coef;           // p x n_b
  Eigen::RowVectorXd intercept;   // 1 x n_b, zero when fitted without one

  Eigen::MatrixXd predict(const Eigen::MatrixXd& design) const;
};

enum class Intercept { kNone, kUnpenalized };

// argmin ||Y - 1 c - X B||^2 + r_v ||B||^2.
RidgeFit ridge_fit(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets, double r_v,
                   Intercept intercept = Intercept::kUnpenalized);

// Coordinate-list dump: "row col value" per nonzero, preceded by "rows cols nnz".
void write_coo(std::ostream& out, const SparseMatrix& m);

}  // namespace deesn
