#include "deesn/lorenz96.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "deesn/errors.hpp"
#include "deesn/manifest.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void Lorenz96Config::validate() const {
  if (K < 4) throw ConfigError("K must be >= 4");
  if (J < 1) throw ConfigError("J must be >= 1");
  if (!(eps_L > 0.0)) throw ConfigError("eps_L must be positive");
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
  if (!(c > 0.0)) throw ConfigError("c must be positive");
  if (!(sigma2_eta >= 0.0)) throw ConfigError("sigma2_eta must be non-negative");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (burn_in < 0) throw ConfigError("burn_in must be >= 0");
  if (length < 1) throw ConfigError("length must be >= 1");
}

nlohmann::json Lorenz96Config::to_json() const {
  return {{"K", K},
          {"J", J},
          {"F", F},
          {"h_x", h_x},
          {"h_y", h_y},
          {"eps_L", eps_L},
          {"c", c},
          {"sigma2_eta", sigma2_eta},
          {"delta", delta},
          {"substeps", substeps},
          {"integrator", integrator == Integrator::kEuler ? "euler" : "rk4"},
          {"burn_in", burn_in},
          {"length", length},
          {"seed", seed},
          {"keep_latents", keep_latents}};
}

Lorenz96Config Lorenz96Config::from_json(const nlohmann::json& j) {
  Lorenz96Config c;
  try {
    c.K = j.value("K", c.K);
    c.J = j.value("J", c.J);
    c.F = j.value("F", c.F);
    c.h_x = j.value("h_x", c.h_x);
    c.h_y = j.value("h_y", c.h_y);
    c.eps_L = j.value("eps_L", c.eps_L);
    c.c = j.value("c", c.c);
    c.sigma2_eta = j.value("sigma2_eta", c.sigma2_eta);
    c.delta = j.value("delta", c.delta);
    c.substeps = j.value("substeps", c.substeps);
    const std::string integ = j.value("integrator", std::string("euler"));
    if (integ == "euler") {
      c.integrator = Integrator::kEuler;
    } else if (integ == "rk4") {
      c.integrator = Integrator::kRk4;
    } else {
      throw ConfigError("lorenz96.integrator must be \"euler\" or \"rk4\", got \"" + integ + "\"");
    }
    c.burn_in = j.value("burn_in", c.burn_in);
    c.length = j.value("length", c.length);
    c.seed = j.value("seed", c.seed);
    c.keep_latents = j.value("keep_latents", c.keep_latents);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("lorenz96 block: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

// Flat layout: x[0..K), then the y ring [0..K*J) with index k*J + j.
struct FlatDrift {
  int K;
  int J;
  double F, h_x, h_y, inv_eps;

  void operator()(const double* x, const double* y, double* dx, double* dy) const {
    const int n = K * J;
    for (int k = 0; k < K; ++k) {
      const double xm1 = x[(k + K - 1) % K];
      const double xm2 = x[(k + K - 2) % K];
      const double xp1 = x[(k + 1) % K];
      double ysum = 0.0;
      for (int j = 0; j < J; ++j) ysum += y[k * J + j];
      dx[k] = xm1 * (xp1 - xm2) - x[k] + F + (h_x / J) * ysum;
    }
    for (int i = 0; i < n; ++i) {
      const double yp1 = y[(i + 1) % n];
      const double yp2 = y[(i + 2) % n];
      const double ym1 = y[(i + n - 1) % n];
      dy[i] = inv_eps * (yp1 * (ym1 - yp2) - y[i] + h_y * x[i / J]);
    }
  }
};

FlatDrift make_drift(const Lorenz96Config& c) {
  return FlatDrift{c.K, c.J, c.F, c.h_x, c.h_y, 1.0 / c.eps_L};
}

// Packs the K x J matrix into ring order.
std::vector<double> ring_of(const MatrixXd& y) {
  std::vector<double> r(static_cast<std::size_t>(y.size()));
  for (Index k = 0; k < y.rows(); ++k) {
    for (Index j = 0; j < y.cols(); ++j) r[static_cast<std::size_t>(k * y.cols() + j)] = y(k, j);
  }
  return r;
}

MatrixXd matrix_of(const std::vector<double>& r, int K, int J) {
  MatrixXd y(K, J);
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < J; ++j) y(k, j) = r[static_cast<std::size_t>(k * J + j)];
  }
  return y;
}

void check_state(const double* v, std::size_t n, long step) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(std::abs(v[i]) <= 1e6)) {
      throw BlowUpError("Lorenz-96 state blew up (|component| > 1e6) at integrator step " + std::to_string(step),
                        step);
    }
  }
}

void check_shape(const Lorenz96State& s, const Lorenz96Config& c) {
  if (s.x.size() != c.K || s.y.rows() != c.K || s.y.cols() != c.J) {
    throw DimensionError("Lorenz-96 state does not match K=" + std::to_string(c.K) + ", J=" + std::to_string(c.J));
  }
}

// In-place integrator over flat buffers so the hot loop does not allocate.
class Stepper {
 public:
  explicit Stepper(const Lorenz96Config& c)
      : f_(make_drift(c)), K_(c.K), n_(static_cast<std::size_t>(c.K * c.J)), rk4_(c.integrator == Integrator::kRk4) {
    dx_.resize(K_);
    dy_.resize(n_);
    if (rk4_) {
      for (auto* v : {&kx_, &tx_}) v->resize(K_);
      for (auto* v : {&ky_, &ty_}) v->resize(n_);
    }
  }

  void step(std::vector<double>& x, std::vector<double>& y, double dt, long step) {
    if (!rk4_) {
      f_(x.data(), y.data(), dx_.data(), dy_.data());
      for (std::size_t i = 0; i < K_; ++i) x[i] += dt * dx_[i];
      for (std::size_t i = 0; i < n_; ++i) y[i] += dt * dy_[i];
    } else {
      // Classic four-stage scheme; kx/ky accumulate the weighted stages.
      f_(x.data(), y.data(), dx_.data(), dy_.data());
      accumulate(x, y, dt / 2.0, 1.0, true);
      f_(tx_.data(), ty_.data(), dx_.data(), dy_.data());
      accumulate(x, y, dt / 2.0, 2.0, false);
      f_(tx_.data(), ty_.data(), dx_.data(), dy_.data());
      accumulate(x, y, dt, 2.0, false);
      f_(tx_.data(), ty_.data(), dx_.data(), dy_.data());
      for (std::size_t i = 0; i < K_; ++i) x[i] += dt / 6.0 * (kx_[i] + dx_[i]);
      for (std::size_t i = 0; i < n_; ++i) y[i] += dt / 6.0 * (ky_[i] + dy_[i]);
    }
    check_state(x.data(), K_, step);
    check_state(y.data(), n_, step);
  }

 private:
  void accumulate(const std::vector<double>& x, const std::vector<double>& y, double h, double w, bool first) {
    for (std::size_t i = 0; i < K_; ++i) {
      kx_[i] = first ? dx_[i] : kx_[i] + w * dx_[i];
      tx_[i] = x[i] + h * dx_[i];
    }
    for (std::size_t i = 0; i < n_; ++i) {
      ky_[i] = first ? dy_[i] : ky_[i] + w * dy_[i];
      ty_[i] = y[i] + h * dy_[i];
    }
  }

  FlatDrift f_;
  std::size_t K_;
  std::size_t n_;
  bool rk4_;
  std::vector<double> dx_, dy_, kx_, ky_, tx_, ty_;
};

}  // namespace

Lorenz96Drift drift(const Lorenz96State& state, const Lorenz96Config& config) {
  check_shape(state, config);
  const std::vector<double> y = ring_of(state.y);
  std::vector<double> dy(y.size());
  Lorenz96Drift d;
  d.dx.resize(config.K);
  make_drift(config)(state.x.data(), y.data(), d.dx.data(), dy.data());
  d.dy = matrix_of(dy, config.K, config.J);
  return d;
}

Lorenz96State euler_step(const Lorenz96State& state, const Lorenz96Config& config, double dt, long step) {
  const Lorenz96Drift d = drift(state, config);
  Lorenz96State next{state.x + dt * d.dx, state.y + dt * d.dy};
  check_state(next.x.data(), static_cast<std::size_t>(next.x.size()), step);
  check_state(next.y.data(), static_cast<std::size_t>(next.y.size()), step);
  return next;
}

Lorenz96State rk4_step(const Lorenz96State& state, const Lorenz96Config& config, double dt, long step) {
  check_shape(state, config);
  Lorenz96Config c = config;
  c.integrator = Integrator::kRk4;
  Stepper stepper(c);
  std::vector<double> x(state.x.data(), state.x.data() + state.x.size());
  std::vector<double> y = ring_of(state.y);
  stepper.step(x, y, dt, step);
  return {Eigen::Map<VectorXd>(x.data(), config.K), matrix_of(y, config.K, config.J)};
}

Lorenz96State advance_period(const Lorenz96State& state, const Lorenz96Config& config, long period) {
  check_shape(state, config);
  Stepper stepper(config);
  std::vector<double> x(state.x.data(), state.x.data() + state.x.size());
  std::vector<double> y = ring_of(state.y);
  const double dt = config.delta / config.substeps;
  for (int s = 0; s < config.substeps; ++s) stepper.step(x, y, dt, period * config.substeps + s);
  return {Eigen::Map<VectorXd>(x.data(), config.K), matrix_of(y, config.K, config.J)};
}

Lorenz96State initial_state(const Lorenz96Config& config, Rng& rng) {
  Lorenz96State s;
  s.x.resize(config.K);
  s.y.resize(config.K, config.J);
  for (Index k = 0; k < config.K; ++k) s.x(k) = config.F + (2.0 * uniform01(rng) - 1.0);
  for (Index k = 0; k < config.K; ++k) {
    for (Index j = 0; j < config.J; ++j) s.y(k, j) = 0.1 * (2.0 * uniform01(rng) - 1.0);
  }
  return s;
}

Lorenz96Output simulate(const Lorenz96Config& config) {
  config.validate();
  Rng init_rng = keyed_stream(config.seed, 0, 0, StreamTag::kSimulator, 0);
  Rng obs_rng = keyed_stream(config.seed, 0, 0, StreamTag::kSimulator, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const Lorenz96State start = initial_state(config, init_rng);
  std::vector<double> x(start.x.data(), start.x.data() + start.x.size());
  std::vector<double> y = ring_of(start.y);
  Stepper stepper(config);
  const double dt = config.delta / config.substeps;
  const double sd = std::sqrt(config.sigma2_eta);

  Lorenz96Output out;
  out.z.resize(config.length, config.K);
  if (config.keep_latents) {
    out.x_latent.resize(config.length, config.K);
    out.y_latent.resize(config.length, static_cast<Index>(y.size()));
  }
  long step = 0;
  for (long p = 0; p < config.burn_in + config.length; ++p) {
    for (int s = 0; s < config.substeps; ++s) stepper.step(x, y, dt, step++);
    if (p < config.burn_in) continue;
    const Index t = p - config.burn_in;
    for (Index k = 0; k < config.K; ++k) {
      const double noise = sd > 0.0 ? sd * gauss(obs_rng) : 0.0;
      out.z(t, k) = std::exp(std::abs(x[static_cast<std::size_t>(k)]) / config.c + noise);
    }
    if (config.keep_latents) {
      out.x_latent.row(t) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), config.K);
      out.y_latent.row(t) = Eigen::Map<const Eigen::RowVectorXd>(y.data(), static_cast<Index>(y.size()));
    }
  }
  return out;
}

SpatioTemporalField output_field(const Lorenz96Output& out) {
  std::vector<Location> locs;
  for (Index k = 0; k < out.z.cols(); ++k) locs.push_back({"x" + std::to_string(k + 1), std::nullopt, std::nullopt});
  std::vector<std::string> times;
  for (Index t = 0; t < out.z.rows(); ++t) times.push_back(std::to_string(t + 1));
  return SpatioTemporalField(GridSpec(std::move(locs)), std::move(times), out.z);
}

void save_simulation(const std::filesystem::path& dir, const Lorenz96Config& config, const Lorenz96Output& out) {
  FieldMetadata meta;
  meta.extra["kind"] = "lorenz96-observations";
  save_field(dir / "z.csv", output_field(out), meta);
  if (out.x_latent.size() > 0) {
    save_field(dir / "x.csv", SpatioTemporalField::from_matrix(out.x_latent));
    save_field(dir / "y.csv", SpatioTemporalField::from_matrix(out.y_latent));
  }
  nlohmann::json manifest = make_manifest({{"lorenz96", config.to_json()}});
  manifest["seed"] = config.seed;
  manifest["files"] = out.x_latent.size() > 0 ? nlohmann::json{"z.csv", "x.csv", "y.csv"} : nlohmann::json{"z.csv"};
  save_json(dir / "manifest.json", manifest);
}

}  // namespace deesn
