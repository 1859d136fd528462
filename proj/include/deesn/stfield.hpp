#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace deesn {

// Half-open row interval [begin, end).
struct RowRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;

  Eigen::Index size() const { return end - begin; }
  bool empty() const { return end <= begin; }
};

struct Location {
  std::string id;
  std::optional<double> lat;
  std::optional<double> lon;
};

// Ordered set of observation sites; the order is the column order of every
// field defined on the grid.
class GridSpec {
 public:
  GridSpec() = default;
  explicit GridSpec(std::vector<Location> locations);

  // Sites named "s0", "s1", ... with no coordinates.
  static GridSpec abstract(Eigen::Index n);

  Eigen::Index n_z() const { return static_cast<Eigen::Index>(locations_.size()); }
  const std::vector<Location>& locations() const { return locations_; }
  bool has_coordinates() const;

  bool operator==(const GridSpec& other) const;

 private:
  std::vector<Location> locations_;
};

// T x n_z matrix of observations. Rows follow `times`, columns follow the grid.
// Calendar months (1..12) are optional; only anomaly computation reads them.
class SpatioTemporalField {
 public:
  SpatioTemporalField() = default;
  SpatioTemporalField(GridSpec grid, std::vector<std::string> times, Eigen::MatrixXd values,
                      std::vector<int> months = {});

  // Abstract grid, times "0".."T-1", no calendar.
  static SpatioTemporalField from_matrix(Eigen::MatrixXd values);

  const GridSpec& grid() const { return grid_; }
  const std::vector<std::string>& times() const { return times_; }
  const std::vector<int>& months() const { return months_; }
  const Eigen::MatrixXd& values() const { return values_; }

  Eigen::Index n_times() const { return values_.rows(); }
  Eigen::Index n_z() const { return values_.cols(); }
  bool seasonal() const { return !months_.empty(); }

  SpatioTemporalField rows(RowRange range) const;
  SpatioTemporalField with_values(Eigen::MatrixXd values) const;

  bool operator==(const SpatioTemporalField& other) const;

 private:
  GridSpec grid_;
  std::vector<std::string> times_;
  std::vector<int> months_;
  Eigen::MatrixXd values_;
};

// Training-period means: one row per calendar month (seasonal) or a single row.
struct Climatology {
  Eigen::MatrixXd means;  // 12 x n_z or 1 x n_z
  bool seasonal = false;
  std::string source;  // e.g. "rows [0, 435)"

  // Mean vector that applies to a row with the given calendar month.
  Eigen::RowVectorXd mean_for_month(int month) const;
  // Mean field aligned with the rows of `field` (uses its months when seasonal).
  Eigen::MatrixXd expand(const SpatioTemporalField& field) const;

  SpatioTemporalField remove_from(const SpatioTemporalField& field) const;
  SpatioTemporalField add_to(const SpatioTemporalField& anomalies) const;
};

struct FieldMetadata {
  nlohmann::json extra = nlohmann::json::object();
};

// grid-csv: first line "#" + one-line JSON {n_z, T, ids, times, seasonal_months?},
// then T lines of n_z comma-separated values.
SpatioTemporalField read_field(std::istream& in, const std::string& source = "<stream>",
                               FieldMetadata* metadata = nullptr);
SpatioTemporalField load_field(const std::filesystem::path& path, FieldMetadata* metadata = nullptr);

void write_field(std::ostream& out, const SpatioTemporalField& field, const FieldMetadata& metadata = {});
void save_field(const std::filesystem::path& path, const SpatioTemporalField& field,
                const FieldMetadata& metadata = {});

// Anomalies relative to training-row means. Every row of `field` is
// transformed, but only `training_rows` feed the means.
std::pair<SpatioTemporalField, Climatology> compute_anomalies(const SpatioTemporalField& field, RowRange training_rows,
                                                              bool seasonal);

// First T - n_holdout rows and the final n_holdout rows.
std::pair<SpatioTemporalField, SpatioTemporalField> split_train_test(const SpatioTemporalField& field,
                                                                     Eigen::Index n_holdout);

SpatioTemporalField concat_rows(const SpatioTemporalField& head, const SpatioTemporalField& tail);

// Writes `contents` next to `path` and renames it into place.
void write_file_atomically(const std::filesystem::path& path, const std::string& contents);

}  // namespace deesn
