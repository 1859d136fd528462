#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <variant>

#include "deesn/stfield.hpp"

namespace deesn {

// Z_t ~ Phi alpha_t with Phi holding orthonormal EOFs as columns.
struct BasisDecomposition {
  GridSpec grid;
  Eigen::MatrixXd phi;          // n_z x n_b
  Eigen::VectorXd eigenvalues;  // all n_z variance eigenvalues, descending
  Eigen::MatrixXd coeffs;       // T x n_b, train rows times phi
  Eigen::RowVectorXd mean;      // training column means used for centering
  double explained_fraction = 1.0;
  // Eigenvectors n_b+1..n_z; empty when not retained.
  Eigen::MatrixXd tail_phi;

  Eigen::Index n_b() const { return phi.cols(); }
  Eigen::Index n_z() const { return phi.rows(); }
  bool has_tail() const { return tail_phi.cols() > 0 || n_b() == n_z(); }

  // Phi = I: the coefficients are the data themselves.
  static BasisDecomposition identity(const GridSpec& grid);
};

struct EofOptions {
  std::optional<Eigen::Index> n_b;
  std::optional<double> target_fraction;
  bool retain_tail = true;
  // Above this grid size the T x T Gram matrix is decomposed instead.
  Eigen::Index dense_limit = 4000;
};

BasisDecomposition fit_eof(const SpatioTemporalField& train, const EofOptions& options);

Eigen::MatrixXd project(const BasisDecomposition& decomp, const Eigen::MatrixXd& rows);
Eigen::MatrixXd reconstruct(const BasisDecomposition& decomp, const Eigen::MatrixXd& coeff_rows);

struct IdentityScaled {
  double sigma2 = 0.0;
};

struct LowRankPlusNugget {
  double nugget = 0.01;
};

using TruncationMode = std::variant<IdentityScaled, LowRankPlusNugget>;

// Data-stage covariance: sigma2 I, or sum_{l > n_b} lambda_l phi_l phi_l' + c I.
class TruncationCovariance {
 public:
  static TruncationCovariance scaled_identity(Eigen::Index n_z, double sigma2);
  static TruncationCovariance low_rank(Eigen::VectorXd tail_values, Eigen::MatrixXd tail_vectors, double nugget);

  Eigen::Index n_z() const { return n_z_; }
  bool is_scaled_identity() const { return tail_vectors_.cols() == 0 && !low_rank_; }
  double nugget() const { return nugget_; }
  const Eigen::VectorXd& tail_values() const { return tail_values_; }
  const Eigen::MatrixXd& tail_vectors() const { return tail_vectors_; }

  Eigen::MatrixXd dense() const;
  Eigen::VectorXd diagonal() const;

 private:
  Eigen::Index n_z_ = 0;
  bool low_rank_ = false;
  double nugget_ = 0.0;  // sigma2 in the scaled-identity form
  Eigen::VectorXd tail_values_;
  Eigen::MatrixXd tail_vectors_;
};

TruncationCovariance truncation_covariance(const BasisDecomposition& decomp, const TruncationMode& mode);

// phi' as n_b rows on the decomposition grid, metadata {n_b, eigenvalues, explained_fraction}.
void save_decomposition(const std::filesystem::path& path, const BasisDecomposition& decomp);

}  // namespace deesn
