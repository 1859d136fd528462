#include "deesn/stfield.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "deesn/errors.hpp"

namespace deesn {

using Eigen::Index;

GridSpec::GridSpec(std::vector<Location> locations) : locations_(std::move(locations)) {
  if (locations_.empty()) throw DataError("grid must contain at least one location");
  std::set<std::string> seen;
  for (const auto& loc : locations_) {
    if (!seen.insert(loc.id).second) throw DataError("duplicate location id '" + loc.id + "'");
  }
}

GridSpec GridSpec::abstract(Index n) {
  std::vector<Location> locs;
  locs.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) locs.push_back({"s" + std::to_string(i), std::nullopt, std::nullopt});
  return GridSpec(std::move(locs));
}

bool GridSpec::has_coordinates() const {
  for (const auto& loc : locations_) {
    if (!loc.lat || !loc.lon) return false;
  }
  return true;
}

bool GridSpec::operator==(const GridSpec& other) const {
  if (locations_.size() != other.locations_.size()) return false;
  for (std::size_t i = 0; i < locations_.size(); ++i) {
    const auto& a = locations_[i];
    const auto& b = other.locations_[i];
    if (a.id != b.id || a.lat != b.lat || a.lon != b.lon) return false;
  }
  return true;
}

SpatioTemporalField::SpatioTemporalField(GridSpec grid, std::vector<std::string> times, Eigen::MatrixXd values,
                                         std::vector<int> months)
    : grid_(std::move(grid)), times_(std::move(times)), months_(std::move(months)), values_(std::move(values)) {
  if (values_.cols() != grid_.n_z()) {
    throw DimensionError("field has " + std::to_string(values_.cols()) + " columns but grid has " +
                         std::to_string(grid_.n_z()) + " locations");
  }
  if (static_cast<Index>(times_.size()) != values_.rows()) {
    throw DimensionError("field has " + std::to_string(values_.rows()) + " rows but " +
                         std::to_string(times_.size()) + " time labels");
  }
  if (!months_.empty()) {
    if (static_cast<Index>(months_.size()) != values_.rows()) {
      throw DimensionError("seasonal_months length does not match the number of rows");
    }
    for (int m : months_) {
      if (m < 1 || m > 12) throw DataError("calendar month out of range: " + std::to_string(m));
    }
  }
  std::ostringstream bad;
  int n_bad = 0;
  for (Index t = 0; t < values_.rows(); ++t) {
    for (Index j = 0; j < values_.cols(); ++j) {
      if (!std::isfinite(values_(t, j))) {
        if (n_bad < 20) bad << (n_bad ? ", " : "") << "(time " << t << ", location " << j << ")";
        ++n_bad;
      }
    }
  }
  if (n_bad > 0) {
    throw NonFiniteError("non-finite values in " + std::to_string(n_bad) + " cell(s): " + bad.str());
  }
}

SpatioTemporalField SpatioTemporalField::from_matrix(Eigen::MatrixXd values) {
  std::vector<std::string> times;
  times.reserve(static_cast<std::size_t>(values.rows()));
  for (Index t = 0; t < values.rows(); ++t) times.push_back(std::to_string(t));
  GridSpec grid = GridSpec::abstract(values.cols());
  return SpatioTemporalField(std::move(grid), std::move(times), std::move(values));
}

SpatioTemporalField SpatioTemporalField::rows(RowRange range) const {
  if (range.begin < 0 || range.end > n_times() || range.begin > range.end) {
    throw DimensionError("row range out of bounds");
  }
  std::vector<std::string> t(times_.begin() + range.begin, times_.begin() + range.end);
  std::vector<int> m;
  if (!months_.empty()) m.assign(months_.begin() + range.begin, months_.begin() + range.end);
  return SpatioTemporalField(grid_, std::move(t), values_.middleRows(range.begin, range.size()), std::move(m));
}

SpatioTemporalField SpatioTemporalField::with_values(Eigen::MatrixXd values) const {
  return SpatioTemporalField(grid_, times_, std::move(values), months_);
}

bool SpatioTemporalField::operator==(const SpatioTemporalField& other) const {
  return grid_ == other.grid_ && times_ == other.times_ && months_ == other.months_ &&
         values_.rows() == other.values_.rows() && values_.cols() == other.values_.cols() &&
         values_ == other.values_;
}

Eigen::RowVectorXd Climatology::mean_for_month(int month) const {
  if (!seasonal) return means.row(0);
  if (month < 1 || month > 12) throw DataError("calendar month out of range");
  return means.row(month - 1);
}

Eigen::MatrixXd Climatology::expand(const SpatioTemporalField& field) const {
  if (field.n_z() != means.cols()) throw DimensionError("climatology and field disagree on n_z");
  if (seasonal && !field.seasonal()) throw DataError("seasonal climatology needs calendar months on the field");
  Eigen::MatrixXd out(field.n_times(), field.n_z());
  for (Index t = 0; t < field.n_times(); ++t) {
    out.row(t) = seasonal ? mean_for_month(field.months()[static_cast<std::size_t>(t)]) : means.row(0);
  }
  return out;
}

SpatioTemporalField Climatology::remove_from(const SpatioTemporalField& field) const {
  return field.with_values(field.values() - expand(field));
}

SpatioTemporalField Climatology::add_to(const SpatioTemporalField& anomalies) const {
  return anomalies.with_values(anomalies.values() + expand(anomalies));
}

std::pair<SpatioTemporalField, Climatology> compute_anomalies(const SpatioTemporalField& field, RowRange training_rows,
                                                              bool seasonal) {
  if (training_rows.empty()) throw DataError("training period is empty");
  if (training_rows.begin < 0 || training_rows.end > field.n_times()) {
    throw DimensionError("training rows exceed the field length");
  }
  Climatology clim;
  clim.seasonal = seasonal;
  clim.source = "rows [" + std::to_string(training_rows.begin) + ", " + std::to_string(training_rows.end) + ")";
  const auto& values = field.values();
  if (!seasonal) {
    clim.means = values.middleRows(training_rows.begin, training_rows.size()).colwise().mean();
  } else {
    if (!field.seasonal()) throw DataError("seasonal anomalies need calendar months on the field");
    clim.means = Eigen::MatrixXd::Zero(12, field.n_z());
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(12);
    for (Index t = training_rows.begin; t < training_rows.end; ++t) {
      const int m = field.months()[static_cast<std::size_t>(t)] - 1;
      clim.means.row(m) += values.row(t);
      ++counts(m);
    }
    for (int m = 0; m < 12; ++m) {
      if (counts(m) == 0) throw DataError("calendar month " + std::to_string(m + 1) + " missing from training rows");
      clim.means.row(m) /= static_cast<double>(counts(m));
    }
  }
  return {clim.remove_from(field), std::move(clim)};
}

std::pair<SpatioTemporalField, SpatioTemporalField> split_train_test(const SpatioTemporalField& field,
                                                                     Index n_holdout) {
  const Index t = field.n_times();
  if (n_holdout <= 0 || n_holdout >= t) {
    throw DimensionError("holdout count " + std::to_string(n_holdout) + " must lie in (0, " + std::to_string(t) + ")");
  }
  return {field.rows({0, t - n_holdout}), field.rows({t - n_holdout, t})};
}

SpatioTemporalField concat_rows(const SpatioTemporalField& head, const SpatioTemporalField& tail) {
  if (!(head.grid() == tail.grid())) throw DimensionError("cannot concatenate fields on different grids");
  if (head.seasonal() != tail.seasonal()) throw DataError("cannot concatenate seasonal and non-seasonal fields");
  Eigen::MatrixXd v(head.n_times() + tail.n_times(), head.n_z());
  v << head.values(), tail.values();
  std::vector<std::string> times = head.times();
  times.insert(times.end(), tail.times().begin(), tail.times().end());
  std::vector<int> months = head.months();
  months.insert(months.end(), tail.months().begin(), tail.months().end());
  return SpatioTemporalField(head.grid(), std::move(times), std::move(v), std::move(months));
}

namespace {

std::string time_label(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  return j.dump();
}

double parse_cell(std::string_view token, const std::string& source, Index row, Index col) {
  while (!token.empty() && (token.front() == ' ' || token.front() == '\t')) token.remove_prefix(1);
  while (!token.empty() && (token.back() == ' ' || token.back() == '\t' || token.back() == '\r')) {
    token.remove_suffix(1);
  }
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double v = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (token.empty() || ec != std::errc() || ptr != last) {
    throw ParseError(source + ": cannot parse value '" + std::string(token) + "' at time " + std::to_string(row) +
                     ", location " + std::to_string(col));
  }
  return v;
}

}  // namespace

SpatioTemporalField read_field(std::istream& in, const std::string& source, FieldMetadata* metadata) {
  std::string header;
  if (!std::getline(in, header) || header.empty() || header.front() != '#') {
    throw ParseError(source + ": first line must be '#' followed by a JSON metadata object");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header.substr(1));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": malformed metadata JSON: " + e.what());
  }
  if (!meta.is_object() || !meta.contains("n_z") || !meta.contains("T")) {
    throw ParseError(source + ": metadata must contain n_z and T");
  }
  Index n_z = 0;
  Index n_t = 0;
  try {
    n_z = meta.at("n_z").get<Index>();
    n_t = meta.at("T").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": n_z and T must be integers");
  }
  if (n_z <= 0 || n_t < 0) throw ParseError(source + ": n_z must be positive and T non-negative");

  std::vector<Location> locs;
  if (meta.contains("ids")) {
    const auto& ids = meta["ids"];
    if (!ids.is_array() || static_cast<Index>(ids.size()) != n_z) {
      throw DimensionError(source + ": ids has " + std::to_string(ids.size()) + " entries, header says n_z=" +
                           std::to_string(n_z));
    }
    for (const auto& id : ids) locs.push_back({time_label(id), std::nullopt, std::nullopt});
  } else {
    for (Index i = 0; i < n_z; ++i) locs.push_back({"s" + std::to_string(i), std::nullopt, std::nullopt});
  }
  for (const char* key : {"lat", "lon"}) {
    if (!meta.contains(key)) continue;
    const auto& arr = meta[key];
    if (!arr.is_array() || static_cast<Index>(arr.size()) != n_z) {
      throw DimensionError(source + ": '" + key + "' must have n_z entries");
    }
    for (Index i = 0; i < n_z; ++i) {
      auto& slot = std::string(key) == "lat" ? locs[static_cast<std::size_t>(i)].lat : locs[static_cast<std::size_t>(i)].lon;
      slot = arr[static_cast<std::size_t>(i)].get<double>();
    }
  }

  std::vector<std::string> times;
  if (meta.contains("times")) {
    const auto& ts = meta["times"];
    if (!ts.is_array() || static_cast<Index>(ts.size()) != n_t) {
      throw DimensionError(source + ": times has " + std::to_string(ts.size()) + " entries, header says T=" +
                           std::to_string(n_t));
    }
    for (const auto& t : ts) times.push_back(time_label(t));
  } else {
    for (Index t = 0; t < n_t; ++t) times.push_back(std::to_string(t));
  }
  std::vector<int> months;
  if (meta.contains("seasonal_months") && !meta["seasonal_months"].is_null()) {
    const auto& ms = meta["seasonal_months"];
    if (!ms.is_array() || static_cast<Index>(ms.size()) != n_t) {
      throw DimensionError(source + ": seasonal_months must have T entries");
    }
    for (const auto& m : ms) months.push_back(m.get<int>());
  }

  Eigen::MatrixXd values(n_t, n_z);
  std::string line;
  Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (row >= n_t) throw DimensionError(source + ": more data rows than header T=" + std::to_string(n_t));
    Index col = 0;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      const auto token = rest.substr(0, comma);
      if (col >= n_z) {
        throw DimensionError(source + ": row " + std::to_string(row) + " has more than n_z=" + std::to_string(n_z) +
                             " values");
      }
      values(row, col) = parse_cell(token, source, row, col);
      ++col;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (col != n_z) {
      throw DimensionError(source + ": row " + std::to_string(row) + " has " + std::to_string(col) +
                           " values, header says n_z=" + std::to_string(n_z));
    }
    ++row;
  }
  if (row != n_t) {
    throw DimensionError(source + ": found " + std::to_string(row) + " data rows, header says T=" + std::to_string(n_t));
  }
  if (metadata) {
    metadata->extra = meta;
    for (const char* key : {"n_z", "T", "ids", "times", "seasonal_months", "lat", "lon"}) metadata->extra.erase(key);
  }
  return SpatioTemporalField(GridSpec(std::move(locs)), std::move(times), std::move(values), std::move(months));
}

SpatioTemporalField load_field(const std::filesystem::path& path, FieldMetadata* metadata) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_field(in, path.string(), metadata);
}

void write_field(std::ostream& out, const SpatioTemporalField& field, const FieldMetadata& metadata) {
  nlohmann::json meta = metadata.extra.is_object() ? metadata.extra : nlohmann::json::object();
  meta["n_z"] = field.n_z();
  meta["T"] = field.n_times();
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& loc : field.grid().locations()) ids.push_back(loc.id);
  meta["ids"] = std::move(ids);
  meta["times"] = field.times();
  if (field.seasonal()) meta["seasonal_months"] = field.months();
  if (field.grid().has_coordinates()) {
    nlohmann::json lat = nlohmann::json::array();
    nlohmann::json lon = nlohmann::json::array();
    for (const auto& loc : field.grid().locations()) {
      lat.push_back(*loc.lat);
      lon.push_back(*loc.lon);
    }
    meta["lat"] = std::move(lat);
    meta["lon"] = std::move(lon);
  }
  out << '#' << meta.dump() << '\n';
  char buf[32];
  const auto& v = field.values();
  for (Index t = 0; t < v.rows(); ++t) {
    for (Index j = 0; j < v.cols(); ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v(t, j));
      if (j) out << ',';
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
}

void save_field(const std::filesystem::path& path, const SpatioTemporalField& field, const FieldMetadata& metadata) {
  std::ostringstream os;
  write_field(os, field, metadata);
  write_file_atomically(path, os.str());
}

void write_file_atomically(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace deesn
