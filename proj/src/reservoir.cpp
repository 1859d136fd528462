#include "deesn/reservoir.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <mutex>
#include <ostream>
#include <tuple>
#include <string>
#include <vector>

#include "deesn/errors.hpp"
#include "deesn/rng.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

EmbeddedInputs build_embeddings(const MatrixXd& inputs, Index tau, Index m) {
  if (tau < 1) throw ConfigError("embedding lag tau must be >= 1");
  if (m < 0) throw ConfigError("embedding count m must be >= 0");
  const Index t = inputs.rows();
  if (t <= m * tau) {
    throw DataError("series of length " + std::to_string(t) + " is too short for m=" + std::to_string(m) +
                    ", tau=" + std::to_string(tau));
  }
  EmbeddedInputs e;
  e.tau = tau;
  e.m = m;
  e.n_x = inputs.cols();
  const Index first = m * tau;
  const Index rows = t - first;
  e.matrix.resize(rows, inputs.cols() * (m + 1));
  for (Index lag = 0; lag <= m; ++lag) {
    e.matrix.middleCols(lag * inputs.cols(), inputs.cols()) = inputs.middleRows(first - lag * tau, rows);
  }
  return e;
}

void ReservoirSpec::validate() const {
  if (n_h < 1) throw ConfigError("n_h must be >= 1");
  if (!(nu >= 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in [0, 1]");
  if (!(pi_w > 0.0 && pi_w <= 1.0) || !(pi_u > 0.0 && pi_u <= 1.0)) {
    throw ConfigError("inclusion probabilities must lie in (0, 1]");
  }
  if (!(a_w > 0.0) || !(a_u > 0.0)) throw ConfigError("uniform half-widths must be positive");
}

namespace {

SparseMatrix sample_sparse(Index rows, Index cols, double pi, double a, Rng& rng) {
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(static_cast<double>(rows * cols) * pi * 1.2) + 8);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const bool include = uniform01(rng) < pi;
      const double value = (2.0 * uniform01(rng) - 1.0) * a;
      if (include && value != 0.0) entries.emplace_back(i, j, value);
    }
  }
  SparseMatrix m(rows, cols);
  m.setFromTriplets(entries.begin(), entries.end());
  m.makeCompressed();
  return m;
}

}  // namespace

namespace {

struct RecurrentDraw {
  SparseMatrix W;
  double lambda_w = 0.0;
  int resample_count = 0;
};

RecurrentDraw draw_recurrent(const ReservoirSpec& spec, std::uint64_t member, std::uint64_t layer) {
  RecurrentDraw d;
  for (int attempt = 0;; ++attempt) {
    Rng rng = keyed_stream(spec.seed, member, layer, StreamTag::kRecurrent, static_cast<std::uint64_t>(attempt));
    d.W = sample_sparse(spec.n_h, spec.n_h, spec.pi_w, spec.a_w, rng);
    if (d.W.nonZeros() > 0) break;
    ++d.resample_count;
    if (attempt > 1000) throw NumericError("recurrent matrix stayed identically zero after 1000 redraws");
  }
  d.lambda_w = spectral_radius(d.W);
  return d;
}

// W and its spectral radius depend only on the key below, never on nu or the
// input width, so repeated fits (tuning, depth sweeps) reuse them. Entries are
// exact copies of a fresh draw; the cache only saves the eigensolve.
class RecurrentCache {
 public:
  using Key = std::tuple<std::uint64_t, std::uint64_t, std::uint64_t, Index, double, double>;

  RecurrentDraw get(const ReservoirSpec& spec, std::uint64_t member, std::uint64_t layer) {
    const Key key{spec.seed, member, layer, spec.n_h, spec.pi_w, spec.a_w};
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = entries_.find(key);
      if (it != entries_.end()) return it->second;
    }
    RecurrentDraw d = draw_recurrent(spec, member, layer);
    std::lock_guard<std::mutex> lock(mutex_);
    if (entries_.size() >= kCapacity) entries_.clear();
    entries_.emplace(key, d);
    return d;
  }

 private:
  static constexpr std::size_t kCapacity = 4096;
  std::mutex mutex_;
  std::map<Key, RecurrentDraw> entries_;
};

RecurrentCache& recurrent_cache() {
  static RecurrentCache cache;
  return cache;
}

}  // namespace

ReservoirWeights sample_weights(const ReservoirSpec& spec, Index n_in, std::uint64_t member, std::uint64_t layer) {
  spec.validate();
  if (n_in < 1) throw ConfigError("reservoir input width must be >= 1");
  RecurrentDraw d = recurrent_cache().get(spec, member, layer);
  ReservoirWeights w;
  w.W = std::move(d.W);
  w.lambda_w = d.lambda_w;
  w.resample_count = d.resample_count;
  Rng rng_u = keyed_stream(spec.seed, member, layer, StreamTag::kInput);
  w.U = sample_sparse(spec.n_h, n_in, spec.pi_u, spec.a_u, rng_u);
  return w;
}

double spectral_radius(const MatrixXd& w, const SpectralRadiusOptions& options) {
  if (w.rows() != w.cols()) throw DimensionError("spectral radius needs a square matrix");
  if (!w.allFinite()) throw DataError("spectral radius needs finite entries");
  if (w.rows() == 0 || w.isZero(0.0)) return 0.0;
  if (w.rows() <= options.dense_limit) {
    Eigen::EigenSolver<MatrixXd> es(w, false);
    if (es.info() != Eigen::Success) throw ConvergenceError("dense eigensolver failed");
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  return spectral_radius_iterative(w.sparseView(), options);
}

double spectral_radius(const SparseMatrix& w, const SpectralRadiusOptions& options) {
  if (w.rows() != w.cols()) throw DimensionError("spectral radius needs a square matrix");
  if (w.nonZeros() == 0) return 0.0;
  if (w.rows() <= options.dense_limit) return spectral_radius(MatrixXd(w), options);
  return spectral_radius_iterative(w, options);
}

double spectral_radius_iterative(const SparseMatrix& w, const SpectralRadiusOptions& options) {
  const Index n = w.rows();
  if (n != w.cols()) throw DimensionError("spectral radius needs a square matrix");
  if (w.nonZeros() == 0) return 0.0;
  const Index k = std::min<Index>(n, 6);

  // Orthogonal (subspace) iteration with Rayleigh-Ritz on a k-dimensional
  // block, so complex-conjugate dominant pairs converge as well.
  Rng rng(derive_seed(0x5eed, {static_cast<std::uint64_t>(n)}));
  MatrixXd q(n, k);
  for (Index i = 0; i < q.size(); ++i) q.data()[i] = 2.0 * uniform01(rng) - 1.0;
  q = Eigen::HouseholderQR<MatrixXd>(q).householderQ() * MatrixXd::Identity(n, k);

  double previous = -1.0;
  int stable = 0;
  for (int it = 0; it < options.max_iterations; ++it) {
    MatrixXd z = w * q;
    if (z.norm() == 0.0) return 0.0;
    const MatrixXd h = q.transpose() * z;
    Eigen::EigenSolver<MatrixXd> es(h, false);
    const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
    if (previous >= 0.0 && std::abs(rho - previous) <= options.tolerance * std::max(rho, 1e-300)) {
      if (++stable >= 5) return rho;
    } else {
      stable = 0;
    }
    previous = rho;
    q = Eigen::HouseholderQR<MatrixXd>(z).householderQ() * MatrixXd::Identity(n, k);
  }
  throw ConvergenceError("spectral radius iteration did not converge in " + std::to_string(options.max_iterations) +
                         " iterations");
}

HiddenStates run_reservoir(const ReservoirWeights& weights, const ReservoirSpec& spec, const MatrixXd& inputs,
                           const VectorXd& h0) {
  const Index n_h = weights.W.rows();
  if (weights.W.cols() != n_h || weights.U.rows() != n_h) throw DimensionError("reservoir weight shapes disagree");
  if (inputs.cols() != weights.U.cols()) {
    throw DimensionError("reservoir expects inputs of width " + std::to_string(weights.U.cols()) + ", got " +
                         std::to_string(inputs.cols()));
  }
  if (h0.size() != n_h) throw DimensionError("initial state has the wrong length");

  const double scale = weights.lambda_w > 0.0 ? spec.nu / std::abs(weights.lambda_w) : 0.0;
  const SparseMatrix recurrent = weights.W * scale;
  // Input drive for every row at once; the recursion is then cheap.
  const MatrixXd drive = inputs * SparseMatrix(weights.U.transpose());

  HiddenStates out;
  out.h0 = h0;
  out.states.resize(inputs.rows(), n_h);
  VectorXd h = h0;
  VectorXd pre(n_h);
  for (Index t = 0; t < inputs.rows(); ++t) {
    pre.noalias() = drive.row(t).transpose();
    if (scale != 0.0) pre.noalias() += recurrent * h;
    h = pre.array().tanh();
    out.states.row(t) = h.transpose();
  }
  return out;
}

HiddenStates run_reservoir(const ReservoirWeights& weights, const ReservoirSpec& spec, const EmbeddedInputs& embedded,
                           const VectorXd& h0) {
  return run_reservoir(weights, spec, embedded.matrix, h0);
}

MatrixXd RidgeFit::predict(const MatrixXd& design) const {
  MatrixXd out = design * coef;
  out.rowwise() += intercept;
  return out;
}

RidgeFit ridge_fit(const MatrixXd& design, const MatrixXd& targets, double r_v, Intercept intercept) {
  if (!(r_v > 0.0)) throw ConfigError("ridge penalty r_v must be positive");
  if (design.rows() != targets.rows()) throw DimensionError("design and targets have different row counts");
  if (design.rows() == 0) throw DataError("ridge regression needs at least one row");
  if (!design.allFinite() || !targets.allFinite()) throw DataError("ridge regression needs finite inputs");

  const Index p = design.cols();
  RidgeFit fit;
  MatrixXd gram = MatrixXd::Zero(p, p);
  MatrixXd rhs;
  Eigen::RowVectorXd x_mean;
  Eigen::RowVectorXd y_mean;
  if (intercept == Intercept::kUnpenalized) {
    x_mean = design.colwise().mean();
    y_mean = targets.colwise().mean();
    const MatrixXd xc = design.rowwise() - x_mean;
    gram.selfadjointView<Eigen::Lower>().rankUpdate(xc.transpose());
    rhs = xc.transpose() * (targets.rowwise() - y_mean);
  } else {
    gram.selfadjointView<Eigen::Lower>().rankUpdate(design.transpose());
    rhs = design.transpose() * targets;
  }
  gram.diagonal().array() += r_v;
  Eigen::LLT<MatrixXd, Eigen::Lower> llt(gram);
  if (llt.info() != Eigen::Success) throw NumericError("ridge normal equations are numerically singular");
  fit.coef = llt.solve(rhs);
  if (intercept == Intercept::kUnpenalized) {
    fit.intercept = y_mean - x_mean * fit.coef;
  } else {
    fit.intercept = Eigen::RowVectorXd::Zero(targets.cols());
  }
  return fit;
}

void write_coo(std::ostream& out, const SparseMatrix& m) {
  out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  out.precision(17);
  for (Index r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  }
}

}  // namespace deesn
