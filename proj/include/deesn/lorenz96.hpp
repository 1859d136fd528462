#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "deesn/rng.hpp"
#include "deesn/stfield.hpp"

namespace deesn {

enum class Integrator { kEuler, kRk4 };

struct Lorenz96Config {
  int K = 18;
  int J = 20;
  double F = 10.0;
  double h_x = -1.90;
  double h_y = 1.0;
  double eps_L = 0.045;
  double c = 2.0;
  double sigma2_eta = 0.25;
  // Time between retained periods.
  double delta = 0.10;
  // Integrator steps per period; each step advances delta / substeps.
  int substeps = 500;
  Integrator integrator = Integrator::kEuler;
  long burn_in = 500;  // periods discarded before recording
  long length = 510;   // periods retained
  std::uint64_t seed = 0;
  bool keep_latents = false;

  void validate() const;
  nlohmann::json to_json() const;
  static Lorenz96Config from_json(const nlohmann::json& j);
};

// y(k, j) is small-scale variable j attached to large-scale site k.
struct Lorenz96State {
  Eigen::VectorXd x;
  Eigen::MatrixXd y;  // K x J
};

struct Lorenz96Drift {
  Eigen::VectorXd dx;
  Eigen::MatrixXd dy;
};

// The small-scale variables form one ring of length K*J ordered by (k, j),
// so y_{J+1,k} is y_{1,k+1}.
Lorenz96Drift drift(const Lorenz96State& state, const Lorenz96Config& config);

// state + dt * drift(state). Throws BlowUpError when a component leaves
// [-1e6, 1e6] or turns non-finite; `step` is reported in the error.
Lorenz96State euler_step(const Lorenz96State& state, const Lorenz96Config& config, double dt, long step = 0);
inline Lorenz96State euler_step(const Lorenz96State& state, const Lorenz96Config& config) {
  return euler_step(state, config, config.delta);
}
Lorenz96State rk4_step(const Lorenz96State& state, const Lorenz96Config& config, double dt, long step = 0);

// One retained period: `substeps` integrator steps of delta / substeps.
Lorenz96State advance_period(const Lorenz96State& state, const Lorenz96Config& config, long period = 0);

// x ~ F + U(-1, 1), y ~ U(-0.1, 0.1).
Lorenz96State initial_state(const Lorenz96Config& config, Rng& rng);

struct Lorenz96Output {
  Eigen::MatrixXd z;         // length x K, strictly positive
  Eigen::MatrixXd x_latent;  // length x K when keep_latents
  Eigen::MatrixXd y_latent;  // length x (K*J) when keep_latents
};

// Spin-up for burn_in periods, then record z_{t,k} = exp(|x_{t,k}| / c + e),
// e ~ Gau(0, sigma2_eta), for `length` periods.
Lorenz96Output simulate(const Lorenz96Config& config);

SpatioTemporalField output_field(const Lorenz96Output& out);

// Writes z.csv (plus x.csv, y.csv when latents are kept) and manifest.json.
void save_simulation(const std::filesystem::path& dir, const Lorenz96Config& config, const Lorenz96Output& out);

}  // namespace deesn
