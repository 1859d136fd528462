#include "deesn/forecast.hpp"

#include <algorithm>
#include <cmath>

#include "deesn/errors.hpp"
#include "deesn/manifest.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;

namespace {

void check_cube(const ForecastCube& cube) {
  if (cube.empty()) throw DataError("forecast cube is empty");
  for (const auto& s : cube) {
    if (s.rows() != cube.front().rows() || s.cols() != cube.front().cols()) {
      throw DimensionError("forecast cube slices differ in shape");
    }
  }
}

}  // namespace

MatrixXd cube_mean(const ForecastCube& cube) {
  check_cube(cube);
  MatrixXd m = MatrixXd::Zero(cube.front().rows(), cube.front().cols());
  for (const auto& s : cube) m += s;
  return m / static_cast<double>(cube.size());
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return sorted[lo] + w * (sorted[hi] - sorted[lo]);
}

CubeSummary summarize(const ForecastCube& cube) {
  check_cube(cube);
  const Index rows = cube.front().rows();
  const Index cols = cube.front().cols();
  const double n = static_cast<double>(cube.size());
  CubeSummary s;
  s.mean = cube_mean(cube);
  s.sd = MatrixXd::Zero(rows, cols);
  if (cube.size() > 1) {
    for (const auto& slice : cube) s.sd.array() += (slice - s.mean).array().square();
    s.sd = (s.sd / (n - 1.0)).cwiseSqrt();
  }
  s.q025.resize(rows, cols);
  s.q975.resize(rows, cols);
  std::vector<double> buf(cube.size());
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < cube.size(); ++i) buf[i] = cube[i](r, c);
      std::sort(buf.begin(), buf.end());
      s.q025(r, c) = quantile_sorted(buf, 0.025);
      s.q975(r, c) = quantile_sorted(buf, 0.975);
    }
  }
  return s;
}

void save_summary(const std::filesystem::path& dir, const CubeSummary& summary, const GridSpec& grid,
                  const std::vector<std::string>& times, const nlohmann::json& manifest) {
  const std::pair<const char*, const MatrixXd*> parts[] = {
      {"mean", &summary.mean}, {"sd", &summary.sd}, {"q025", &summary.q025}, {"q975", &summary.q975}};
  for (const auto& [name, m] : parts) {
    FieldMetadata meta;
    meta.extra["statistic"] = name;
    save_field(dir / (std::string(name) + ".csv"), SpatioTemporalField(grid, times, *m), meta);
  }
  save_json(dir / "manifest.json", manifest);
}

}  // namespace deesn
