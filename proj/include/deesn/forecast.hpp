#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "deesn/stfield.hpp"

namespace deesn {

// One n_f x n_z slice per ensemble member or posterior draw.
using ForecastCube = std::vector<Eigen::MatrixXd>;

struct CubeSummary {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd sd;  // divisor n - 1; zero for a single slice
  Eigen::MatrixXd q025;
  Eigen::MatrixXd q975;
};

Eigen::MatrixXd cube_mean(const ForecastCube& cube);
CubeSummary summarize(const ForecastCube& cube);

// Linear interpolation between order statistics (type-7 quantile).
double quantile_sorted(const std::vector<double>& sorted, double p);

// mean.csv, sd.csv, q025.csv, q975.csv on `grid` with row labels `times`,
// plus manifest.json built from `manifest`.
void save_summary(const std::filesystem::path& dir, const CubeSummary& summary, const GridSpec& grid,
                  const std::vector<std::string>& times, const nlohmann::json& manifest);

}  // namespace deesn
