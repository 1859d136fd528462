#include "deesn/basis.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

#include "deesn/errors.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

BasisDecomposition BasisDecomposition::identity(const GridSpec& grid) {
  BasisDecomposition d;
  d.grid = grid;
  d.phi = MatrixXd::Identity(grid.n_z(), grid.n_z());
  d.eigenvalues = VectorXd::Ones(grid.n_z());
  d.mean = Eigen::RowVectorXd::Zero(grid.n_z());
  d.explained_fraction = 1.0;
  return d;
}

namespace {

// Largest-magnitude component of each column made positive.
void fix_signs(MatrixXd& vectors) {
  for (Index c = 0; c < vectors.cols(); ++c) {
    Index arg = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, c) < 0.0) vectors.col(c) *= -1.0;
  }
}

}  // namespace

BasisDecomposition fit_eof(const SpatioTemporalField& train, const EofOptions& options) {
  const Index t = train.n_times();
  const Index n_z = train.n_z();
  if (t < 2) throw DataError("EOF fitting needs at least two time rows");
  if (options.n_b.has_value() == options.target_fraction.has_value()) {
    throw ConfigError("specify exactly one of n_b or target_fraction");
  }
  if (options.target_fraction && (*options.target_fraction <= 0.0 || *options.target_fraction > 1.0)) {
    throw ConfigError("target_fraction must lie in (0, 1]");
  }

  BasisDecomposition d;
  d.grid = train.grid();
  d.mean = train.values().colwise().mean();
  const MatrixXd centered = train.values().rowwise() - d.mean;
  const double denom = static_cast<double>(t - 1);

  VectorXd values(n_z);
  MatrixXd vectors(n_z, n_z);
  if (n_z <= options.dense_limit) {
    MatrixXd cov = MatrixXd::Zero(n_z, n_z);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / denom);
    cov.triangularView<Eigen::Upper>() = cov.transpose();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw ConvergenceError("covariance eigendecomposition failed");
    values = es.eigenvalues().reverse();
    vectors = es.eigenvectors().rowwise().reverse();
  } else {
    // Gram route: eigenvectors of X X' map to spatial EOFs through X'.
    MatrixXd gram = centered * centered.transpose() / denom;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw ConvergenceError("Gram eigendecomposition failed");
    const VectorXd gv = es.eigenvalues().reverse();
    const MatrixXd gu = es.eigenvectors().rowwise().reverse();
    values.setZero();
    vectors.setZero();
    const Index k = std::min(t, n_z);
    for (Index i = 0; i < k; ++i) {
      values(i) = std::max(gv(i), 0.0);
      if (gv(i) > 1e-12 * std::max(gv(0), 1e-300)) {
        vectors.col(i) = centered.transpose() * gu.col(i) / std::sqrt(denom * gv(i));
      }
    }
  }
  values = values.cwiseMax(0.0);
  fix_signs(vectors);

  const double total = values.sum();
  const double tol = 1e-10 * std::max(values(0), 1e-300) * static_cast<double>(std::max(t, n_z));
  Index rank = 0;
  while (rank < values.size() && values(rank) > tol) ++rank;

  Index n_b = 0;
  if (options.n_b) {
    n_b = *options.n_b;
    if (n_b < 1 || n_b > std::min(t, n_z)) {
      throw ConfigError("n_b=" + std::to_string(n_b) + " must lie in [1, min(T, n_z)]");
    }
    if (n_b > rank) {
      throw RankError("requested " + std::to_string(n_b) + " EOFs but the field has numerical rank " +
                      std::to_string(rank));
    }
  } else {
    const double target = *options.target_fraction * total;
    double acc = 0.0;
    while (n_b < values.size() && acc < target * (1.0 - 1e-12)) acc += values(n_b++);
    n_b = std::max<Index>(n_b, 1);
  }

  d.eigenvalues = values;
  d.phi = vectors.leftCols(n_b);
  if (options.retain_tail && n_b < n_z) d.tail_phi = vectors.rightCols(n_z - n_b);
  d.explained_fraction = total > 0.0 ? values.head(n_b).sum() / total : 1.0;
  d.coeffs = train.values() * d.phi;
  return d;
}

MatrixXd project(const BasisDecomposition& decomp, const MatrixXd& rows) {
  if (rows.cols() != decomp.n_z()) {
    throw DimensionError("projection rows have length " + std::to_string(rows.cols()) + ", expected n_z=" +
                         std::to_string(decomp.n_z()));
  }
  return rows * decomp.phi;
}

MatrixXd reconstruct(const BasisDecomposition& decomp, const MatrixXd& coeff_rows) {
  if (coeff_rows.cols() != decomp.n_b()) {
    throw DimensionError("coefficient rows have length " + std::to_string(coeff_rows.cols()) + ", expected n_b=" +
                         std::to_string(decomp.n_b()));
  }
  return coeff_rows * decomp.phi.transpose();
}

TruncationCovariance TruncationCovariance::scaled_identity(Index n_z, double sigma2) {
  if (sigma2 < 0.0) throw ConfigError("sigma2_z must be non-negative");
  TruncationCovariance c;
  c.n_z_ = n_z;
  c.nugget_ = sigma2;
  return c;
}

TruncationCovariance TruncationCovariance::low_rank(VectorXd tail_values, MatrixXd tail_vectors, double nugget) {
  if (nugget <= 0.0) throw ConfigError("nugget must be positive in the low-rank form");
  if (tail_values.size() != tail_vectors.cols()) throw DimensionError("tail eigenpairs disagree in count");
  TruncationCovariance c;
  c.n_z_ = tail_vectors.rows();
  c.low_rank_ = true;
  c.nugget_ = nugget;
  c.tail_values_ = tail_values.cwiseMax(0.0);
  c.tail_vectors_ = std::move(tail_vectors);
  return c;
}

MatrixXd TruncationCovariance::dense() const {
  MatrixXd out = MatrixXd::Identity(n_z_, n_z_) * nugget_;
  if (tail_vectors_.cols() > 0) {
    out.noalias() += tail_vectors_ * tail_values_.asDiagonal() * tail_vectors_.transpose();
  }
  return out;
}

VectorXd TruncationCovariance::diagonal() const {
  VectorXd d = VectorXd::Constant(n_z_, nugget_);
  if (tail_vectors_.cols() > 0) d += tail_vectors_.array().square().matrix() * tail_values_;
  return d;
}

TruncationCovariance truncation_covariance(const BasisDecomposition& decomp, const TruncationMode& mode) {
  if (const auto* s = std::get_if<IdentityScaled>(&mode)) {
    return TruncationCovariance::scaled_identity(decomp.n_z(), s->sigma2);
  }
  const auto& lr = std::get<LowRankPlusNugget>(mode);
  const Index n_tail = decomp.n_z() - decomp.n_b();
  if (n_tail > 0 && decomp.tail_phi.cols() != n_tail) {
    throw DataError("decomposition did not retain the eigenpairs beyond n_b");
  }
  if (n_tail == 0) return TruncationCovariance::low_rank(VectorXd(0), MatrixXd(decomp.n_z(), 0), lr.nugget);
  return TruncationCovariance::low_rank(decomp.eigenvalues.tail(n_tail), decomp.tail_phi, lr.nugget);
}

void save_decomposition(const std::filesystem::path& path, const BasisDecomposition& decomp) {
  std::vector<std::string> labels;
  for (Index b = 0; b < decomp.n_b(); ++b) labels.push_back("eof" + std::to_string(b + 1));
  SpatioTemporalField rows(decomp.grid, std::move(labels), decomp.phi.transpose());
  FieldMetadata meta;
  meta.extra["n_b"] = decomp.n_b();
  meta.extra["eigenvalues"] = std::vector<double>(decomp.eigenvalues.data(),
                                                  decomp.eigenvalues.data() + decomp.eigenvalues.size());
  meta.extra["explained_fraction"] = decomp.explained_fraction;
  save_field(path, rows, meta);
}

}  // namespace deesn
