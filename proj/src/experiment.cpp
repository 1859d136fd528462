#include "deesn/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "deesn/errors.hpp"
#include "deesn/forecast.hpp"
#include "deesn/rng.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

std::string model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kQeesn: return "qeesn";
    case ModelKind::kBqeesn: return "bqeesn";
    case ModelKind::kDeesn: return "deesn";
    case ModelKind::kBdeesn: return "bdeesn";
    case ModelKind::kLinDstm: return "lin-dstm";
    case ModelKind::kClimatology: return "climatology";
  }
  return "unknown";
}

ModelKind parse_model(const std::string& name) {
  for (ModelKind k : {ModelKind::kQeesn, ModelKind::kBqeesn, ModelKind::kDeesn, ModelKind::kBdeesn,
                      ModelKind::kLinDstm, ModelKind::kClimatology}) {
    if (model_name(k) == name) return k;
  }
  throw ConfigError("unknown model '" + name + "' (qeesn, bqeesn, deesn, bdeesn, lin-dstm, climatology)");
}

bool is_bayesian(ModelKind kind) { return kind == ModelKind::kBqeesn || kind == ModelKind::kBdeesn; }

bool is_reservoir(ModelKind kind) {
  return kind == ModelKind::kQeesn || kind == ModelKind::kDeesn || is_bayesian(kind);
}

PreparedData ExperimentData::prepare() const {
  return prepare_data(response.values(), input, n_train, response.grid(), options);
}

TuneData ExperimentData::tune_data() const { return TuneData{response.values(), input, n_train, response.grid(), options}; }

MatrixXd ExperimentData::truth() const { return response.values().bottomRows(n_test()); }

std::vector<std::string> ExperimentData::test_times() const {
  return {response.times().begin() + n_train, response.times().end()};
}

std::vector<Index> ExperimentData::score_rows() const {
  std::vector<Index> rows;
  for (Index i = 0; i < n_test(); ++i) {
    if (score_months.empty()) {
      rows.push_back(i);
      continue;
    }
    if (!response.seasonal()) throw ConfigError("score_months needs calendar months on the response");
    const int month = response.months()[static_cast<std::size_t>(n_train + i)];
    for (int m : score_months) {
      if (m == month) rows.push_back(i);
    }
  }
  if (rows.empty()) throw ConfigError("no test rows fall in the scored months");
  return rows;
}

ExperimentData lorenz_experiment(const SpatioTemporalField& z, const LorenzExperimentOptions& options) {
  if (options.holdout < 1 || options.holdout >= z.n_times()) throw ConfigError("holdout must lie in [1, T)");
  ExperimentData d;
  d.kind = "lorenz96";
  d.response = z;
  d.input = z.values();
  d.n_train = z.n_times() - options.holdout;
  d.options.response_transform = Transform::kLog;
  d.options.sigma_z = IdentityScaled{options.sigma2_z};
  d.options.input_log = true;
  d.options.lead = options.lead;
  d.options.tau = options.tau;
  return d;
}

ExperimentData field_experiment(const SpatioTemporalField& response, const SpatioTemporalField& input,
                                const FieldExperimentOptions& options) {
  if (response.n_times() != input.n_times()) throw DimensionError("response and input differ in length");
  if (options.holdout < 1 || options.holdout >= response.n_times()) throw ConfigError("holdout must lie in [1, T)");
  if (!(options.nugget > 0.0)) throw ConfigError("nugget must be positive");
  ExperimentData d;
  d.kind = "field-forecast";
  d.n_train = response.n_times() - options.holdout;
  const RowRange train{0, d.n_train};
  d.response = compute_anomalies(response, train, options.seasonal).first;
  d.input = compute_anomalies(input, train, options.seasonal).first.values();
  d.options.response_transform = Transform::kIdentity;
  d.options.response_eofs = options.response_eofs;
  d.options.response_eof_fraction = options.response_eof_fraction;
  if (!options.response_eofs && !options.response_eof_fraction) d.options.response_eofs = 15;
  d.options.sigma_z = LowRankPlusNugget{options.nugget};
  if (options.input_eofs > 0) d.options.input_eofs = options.input_eofs;
  d.options.lead = options.lead;
  d.options.tau = options.tau;
  d.score_months = options.score_months;
  return d;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

DeepEsnConfig reservoir_config(ModelKind kind, DeepEsnConfig c) {
  if (kind == ModelKind::kQeesn || kind == ModelKind::kBqeesn) {
    c.L = 1;
    c.quadratic = true;
    if (c.nu.size() > 1) c.nu = {c.nu.front()};
  } else {
    c.quadratic = false;
  }
  c.validate();
  return c;
}

ModelForecast run_model(const ModelSpec& spec, const ExperimentData& data, const PreparedData& prepared) {
  const auto start = std::chrono::steady_clock::now();
  const DataStage& stage = prepared.stage;
  const ForecastProblem& problem = prepared.problem;
  const bool log_scale = stage.transform == Transform::kLog;
  const Index n_f = data.n_test();
  ModelForecast out;
  out.model = model_name(spec.kind);
  out.family = log_scale ? CrpsFamily::kLogGaussian : CrpsFamily::kGaussian;

  switch (spec.kind) {
    case ModelKind::kQeesn:
    case ModelKind::kDeesn: {
      const DeepEsnConfig config = reservoir_config(spec.kind, spec.esn);
      EnsembleForecast f = forecast_ensemble(config, problem, stage);
      out.mean = cube_mean(f.data);
      out.dist = ensemble_to_distribution(f.data, log_scale);
      out.draws = std::move(f.data);
      out.info["config"] = config.to_json();
      break;
    }
    case ModelKind::kBqeesn:
    case ModelKind::kBdeesn: {
      const DeepEsnConfig config = reservoir_config(spec.kind, spec.esn);
      const SsvsPrior prior = spec.prior.value_or(SsvsPrior::defaults_for_layers(config.L));
      const Alignment alignment = align(problem, config.m);
      const ReservoirCovariates cov = precompute_reservoir_covariates(config, alignment);
      const MatrixXd train = problem.truth.middleRows(alignment.first_target, alignment.n_fit);
      const BayesRun run = run_chains(cov, stage, prior, spec.gibbs, train);
      out.draws = posterior_forecast(run.chains, stage, spec.gibbs.seed, spec.max_draws);
      out.mean = posterior_mean_forecast(run.chains, stage);
      out.dist = ensemble_to_distribution(out.draws, log_scale);
      out.inclusion = inclusion_csv(run.chains);
      out.info["config"] = config.to_json();
      out.info["prior"] = prior.to_json();
      out.info["gibbs"] = spec.gibbs.to_json();
      out.info["rhat"] = run.rhat;
      double s2 = 0.0;
      for (const auto& c : run.chains) s2 += c.sigma2_eta.mean();
      out.info["sigma2_eta_mean"] = s2 / static_cast<double>(run.chains.size());
      break;
    }
    case ModelKind::kLinDstm: {
      const MatrixXd alphas = problem.targets.topRows(problem.n_train);
      const MatrixXd train = stage.centered(problem.truth.topRows(problem.n_train));
      const LinearDstm model = fit_linear_dstm(alphas, problem.lead, stage.phi(), train, spec.linear_mode);
      const MatrixXd origins = problem.targets.middleRows(problem.n_train - problem.lead, n_f);
      const LinearForecast f = forecast_linear_dstm(model, origins);
      MatrixXd mu = f.mean.rowwise() + stage.offset;
      const MatrixXd sigma = f.sd.transpose().replicate(n_f, 1);
      if (log_scale) {
        out.mean = (mu.array() + 0.5 * sigma.array().square()).exp().matrix();
      } else {
        out.mean = mu;
      }
      out.dist.mu = std::move(mu);
      out.dist.sigma = sigma;
      out.info["mode"] = spec.linear_mode == LinearMode::kDirect ? "direct" : "iterated";
      break;
    }
    case ModelKind::kClimatology: {
      const ClimatologyForecast c = climatology_forecast(problem.truth.topRows(problem.n_train), n_f, log_scale);
      out.mean = c.mean;
      out.dist.mu = c.mu;
      out.dist.sigma = c.sigma;
      break;
    }
  }
  if (out.mean.rows() != n_f || out.mean.cols() != data.response.n_z()) {
    throw DimensionError(out.model + ": forecast rows do not cover the test period");
  }
  out.info["seconds"] = seconds_since(start);
  return out;
}

namespace {

MatrixXd pick_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

std::vector<ScoredModel> score_models(const std::vector<ModelForecast>& models, const ModelForecast& reference,
                                      const ExperimentData& data) {
  const std::vector<Index> rows = data.score_rows();
  const MatrixXd truth = pick_rows(data.truth(), rows);
  const MatrixXd ref = pick_rows(reference.mean, rows);
  std::vector<ScoredModel> out;
  for (const auto& m : models) {
    ScoredModel s;
    const MatrixXd mean = pick_rows(m.mean, rows);
    s.row.model = m.model;
    s.row.mspe = mspe(mean, truth);
    const CrpsTotals crps = crps_field(pick_rows(m.dist.mu, rows), pick_rows(m.dist.sigma, rows), truth, m.family);
    s.row.crps_mean = crps.mean;
    s.row.crps_sum = crps.sum;
    s.skill = skill_map(mean, ref, truth);
    s.row.pct_ss_positive = percent_positive(s.skill);
    out.push_back(std::move(s));
  }
  return out;
}

std::string band_csv(const ModelForecast& model, const ExperimentData& data) {
  const MatrixXd truth = data.truth();
  MatrixXd lower;
  MatrixXd upper;
  if (model.draws.size() >= 2) {
    const CubeSummary s = summarize(model.draws);
    lower = s.q025;
    upper = s.q975;
  } else {
    const double z = 1.959963984540054;
    lower = model.dist.mu - z * model.dist.sigma;
    upper = model.dist.mu + z * model.dist.sigma;
    if (model.family == CrpsFamily::kLogGaussian) {
      lower = lower.array().exp().matrix();
      upper = upper.array().exp().matrix();
    }
  }
  const auto times = data.test_times();
  const auto& locs = data.response.grid().locations();
  std::ostringstream out;
  out.precision(10);
  out << "time,location,truth,mean,lower,upper\n";
  for (Index t = 0; t < truth.rows(); ++t) {
    for (Index c = 0; c < truth.cols(); ++c) {
      out << times[static_cast<std::size_t>(t)] << ',' << locs[static_cast<std::size_t>(c)].id << ',' << truth(t, c)
          << ',' << model.mean(t, c) << ',' << lower(t, c) << ',' << upper(t, c) << '\n';
    }
  }
  return out.str();
}

namespace {

// Smooth bump on a ny x nx grid, scaled to peak 1.
VectorXd bump(Index ny, Index nx, double cy, double cx, double width) {
  VectorXd v(ny * nx);
  for (Index i = 0; i < ny; ++i) {
    for (Index j = 0; j < nx; ++j) {
      const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
      v(i * nx + j) = std::exp(-0.5 * d2 / (width * width));
    }
  }
  return v;
}

GridSpec lat_lon_grid(Index ny, Index nx, double lat0, double lat1, double lon0, double lon1, const std::string& prefix) {
  std::vector<Location> locs;
  for (Index i = 0; i < ny; ++i) {
    for (Index j = 0; j < nx; ++j) {
      Location l;
      l.id = prefix + std::to_string(i) + "_" + std::to_string(j);
      l.lat = ny > 1 ? lat0 + (lat1 - lat0) * static_cast<double>(i) / static_cast<double>(ny - 1) : lat0;
      l.lon = nx > 1 ? lon0 + (lon1 - lon0) * static_cast<double>(j) / static_cast<double>(nx - 1) : lon0;
      locs.push_back(l);
    }
  }
  return GridSpec(std::move(locs));
}

}  // namespace

SyntheticField synthetic_seasonal_field(const SyntheticFieldConfig& config) {
  const Index t_len = config.n_times;
  if (t_len < 24 || config.lead < 0) throw ConfigError("synthetic field needs at least 24 months and lead >= 0");
  if (config.ny < 1 || config.nx < 1 || config.input_ny < 1 || config.input_nx < 1) {
    throw ConfigError("synthetic grids must be non-empty");
  }
  Rng rng = keyed_stream(config.seed, 0, 0, StreamTag::kSynthetic);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };

  // Damped AR(2) oscillators with ENSO-like periods (months).
  const std::vector<double> periods{44.0, 27.0, 64.0, 17.0};
  const auto n_osc = static_cast<Index>(periods.size());
  const Index burn = 240;
  MatrixXd osc(t_len, n_osc);
  for (Index k = 0; k < n_osc; ++k) {
    const double r = 0.97;
    const double a1 = 2.0 * r * std::cos(2.0 * M_PI / periods[static_cast<std::size_t>(k)]);
    const double a2 = -r * r;
    double c1 = 0.0;
    double c2 = 0.0;
    for (Index t = -burn; t < t_len; ++t) {
      const double c = a1 * c1 + a2 * c2 + gauss(rng);
      c2 = c1;
      c1 = c;
      if (t >= 0) osc(t, k) = c;
    }
    const double mean = osc.col(k).mean();
    const double sd = std::sqrt((osc.col(k).array() - mean).square().mean());
    osc.col(k) = (osc.col(k).array() - mean) / sd;
  }

  std::vector<std::string> times;
  std::vector<int> months;
  for (Index t = 0; t < t_len; ++t) {
    const int year = config.first_year + static_cast<int>(t / 12);
    const int month = static_cast<int>(t % 12) + 1;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
    times.emplace_back(buf);
    months.push_back(month);
  }

  // Input: oscillator patterns over a basin-sized grid.
  const Index n_x = config.input_ny * config.input_nx;
  MatrixXd in_patterns(n_x, n_osc);
  for (Index k = 0; k < n_osc; ++k) {
    in_patterns.col(k) = bump(config.input_ny, config.input_nx, uni(0, config.input_ny - 1),
                              uni(0, config.input_nx - 1), uni(2.0, 4.0)) *
                         (k % 2 == 0 ? 1.0 : -1.0);
  }
  VectorXd in_phase(n_x);
  for (Index s = 0; s < n_x; ++s) in_phase(s) = uni(0.0, 2.0 * M_PI);
  MatrixXd input(t_len, n_x);
  for (Index t = 0; t < t_len; ++t) {
    const double angle = 2.0 * M_PI * (months[static_cast<std::size_t>(t)] - 1) / 12.0;
    for (Index s = 0; s < n_x; ++s) {
      input(t, s) = config.seasonal_amplitude * std::cos(angle + in_phase(s)) + 1.5 * osc.row(t).dot(in_patterns.row(s)) +
                    config.input_noise_sd * gauss(rng);
    }
  }

  // Response: nonlinear functions of lagged oscillators on smooth patterns,
  // plus AR(1) nuisance modes that carry no lead information.
  const Index n_z = config.ny * config.nx;
  const Index n_signal = 4;
  const Index n_nuisance = 4;
  MatrixXd patterns(n_z, n_signal + n_nuisance);
  for (Index k = 0; k < patterns.cols(); ++k) {
    patterns.col(k) = bump(config.ny, config.nx, uni(0, config.ny - 1), uni(0, config.nx - 1), uni(3.0, 6.0));
  }
  MatrixXd nuisance(t_len, n_nuisance);
  for (Index k = 0; k < n_nuisance; ++k) {
    double u = 0.0;
    for (Index t = -burn; t < t_len; ++t) {
      u = 0.6 * u + 0.8 * gauss(rng);
      if (t >= 0) nuisance(t, k) = 0.7 * u;
    }
  }
  VectorXd phase(n_z);
  for (Index s = 0; s < n_z; ++s) phase(s) = uni(0.0, 2.0 * M_PI);
  MatrixXd response(t_len, n_z);
  for (Index t = 0; t < t_len; ++t) {
    const Index src = std::max<Index>(t - config.lead, 0);
    const auto c = osc.row(src);
    VectorXd signal(n_signal);
    signal(0) = 1.2 * c(0);
    signal(1) = 1.5 * std::tanh(1.5 * c(1));
    signal(2) = 0.7 * (c(0) * c(0) - 1.0);
    signal(3) = c(2) * c(3);
    const double angle = 2.0 * M_PI * (months[static_cast<std::size_t>(t)] - 1) / 12.0;
    for (Index s = 0; s < n_z; ++s) {
      response(t, s) = config.seasonal_amplitude * std::cos(angle + phase(s)) +
                       patterns.row(s).head(n_signal).dot(signal) +
                       patterns.row(s).tail(n_nuisance).dot(nuisance.row(t)) + config.noise_sd * gauss(rng);
    }
  }

  SyntheticField out;
  out.response = SpatioTemporalField(lat_lon_grid(config.ny, config.nx, 35.75, 48.75, -101.75, -80.25, "sm"), times,
                                     std::move(response), months);
  out.input = SpatioTemporalField(lat_lon_grid(config.input_ny, config.input_nx, -29.0, 29.0, 124.0, 290.0, "sst"),
                                  times, std::move(input), months);
  return out;
}

}  // namespace deesn
