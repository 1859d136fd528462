#include "deesn/deepesn.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

#include "deesn/errors.hpp"
#include "deesn/parallel.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void DeepEsnConfig::validate() const {
  if (L < 1) throw ConfigError("L must be >= 1");
  if (quadratic && L != 1) throw ConfigError("quadratic output terms require L = 1");
  if (n_h1 < 1 || n_h_deep < 1) throw ConfigError("hidden sizes must be >= 1");
  if (L > 1 && (n_h_tilde < 1 || n_h_tilde > n_h_deep)) throw ConfigError("n_h_tilde must lie in [1, n_h_deep]");
  if (nu.size() != 1 && nu.size() != static_cast<std::size_t>(L)) {
    throw ConfigError("nu must hold one shared value or L=" + std::to_string(L) + " values");
  }
  for (double v : nu) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("nu values must lie in [0, 1]");
  }
  if (!(r_v > 0.0)) throw ConfigError("r_v must be positive");
  if (m < 0) throw ConfigError("m must be >= 0");
  if (n_res < 1) throw ConfigError("n_res must be >= 1");
  layer_spec(1).validate();
}

double DeepEsnConfig::nu_at(int layer) const {
  return nu.size() == 1 ? nu.front() : nu.at(static_cast<std::size_t>(layer - 1));
}

Index DeepEsnConfig::hidden_size(int layer) const { return layer == 1 ? n_h1 : n_h_deep; }

ReservoirSpec DeepEsnConfig::layer_spec(int layer) const {
  ReservoirSpec s;
  s.n_h = hidden_size(layer);
  s.nu = nu_at(layer);
  s.pi_w = pi_w;
  s.pi_u = pi_u;
  s.a_w = a_w;
  s.a_u = a_u;
  s.seed = master_seed;
  return s;
}

nlohmann::json DeepEsnConfig::to_json() const {
  return {{"L", L},         {"n_h1", n_h1}, {"n_h_deep", n_h_deep}, {"n_h_tilde", n_h_tilde},
          {"nu", nu},       {"pi_w", pi_w}, {"pi_u", pi_u},         {"a_w", a_w},
          {"a_u", a_u},     {"r_v", r_v},   {"m", m},               {"n_res", n_res},
          {"quadratic", quadratic}, {"master_seed", master_seed}};
}

DeepEsnConfig DeepEsnConfig::from_json(const nlohmann::json& j) {
  DeepEsnConfig c;
  try {
    c.L = j.value("L", c.L);
    c.n_h1 = j.value("n_h1", c.n_h1);
    c.n_h_deep = j.value("n_h_deep", c.n_h_deep);
    c.n_h_tilde = j.value("n_h_tilde", c.n_h_tilde);
    if (j.contains("nu")) {
      c.nu = j.at("nu").is_array() ? j.at("nu").get<std::vector<double>>() : std::vector<double>{j.at("nu").get<double>()};
    }
    c.pi_w = j.value("pi_w", c.pi_w);
    c.pi_u = j.value("pi_u", c.pi_u);
    c.a_w = j.value("a_w", c.a_w);
    c.a_u = j.value("a_u", c.a_u);
    c.r_v = j.value("r_v", c.r_v);
    c.m = j.value("m", c.m);
    c.n_res = j.value("n_res", c.n_res);
    c.quadratic = j.value("quadratic", c.quadratic);
    c.master_seed = j.value("master_seed", c.master_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model block: ") + e.what());
  }
  c.validate();
  return c;
}

MatrixXd ReductionMap::apply(const MatrixXd& states) const {
  if (states.cols() != components.rows()) throw DimensionError("reduction map applied to states of the wrong width");
  return (states.rowwise() - mean) * components;
}

Reduction reduce_states(const MatrixXd& states, Index n_fit_rows, Index n_h_tilde) {
  const Index n_h = states.cols();
  if (n_h_tilde < 1 || n_h_tilde > n_h) throw ConfigError("n_h_tilde must lie in [1, n_h]");
  if (n_fit_rows < 2 || n_fit_rows > states.rows()) throw DataError("reduction needs at least two training rows");
  const auto fit_rows = states.topRows(n_fit_rows);
  Reduction r;
  r.map.mean = fit_rows.colwise().mean();
  const MatrixXd centered = fit_rows.rowwise() - r.map.mean;
  MatrixXd cov = MatrixXd::Zero(n_h, n_h);
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / static_cast<double>(n_fit_rows - 1));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw ConvergenceError("state covariance eigendecomposition failed");
  const VectorXd values = es.eigenvalues().reverse();
  const double tol = 1e-10 * std::max(values(0), 1e-300) * static_cast<double>(std::max(n_fit_rows, n_h));
  if (!(values(n_h_tilde - 1) > tol)) {
    throw RankError("n_h_tilde=" + std::to_string(n_h_tilde) + " exceeds the numerical rank of the reservoir states");
  }
  r.map.components = es.eigenvectors().rowwise().reverse().leftCols(n_h_tilde);
  for (Index c = 0; c < n_h_tilde; ++c) {
    Index arg = 0;
    r.map.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (r.map.components(arg, c) < 0.0) r.map.components.col(c) *= -1.0;
  }
  r.reduced = r.map.apply(states);
  return r;
}

MatrixXd LayerStack::design(bool quadratic) const {
  const auto widths = block_widths(quadratic);
  Index p = 0;
  for (Index w : widths) p += w;
  const Index rows = states.front().rows();
  MatrixXd d(rows, p);
  d.leftCols(states[0].cols()) = states[0];
  Index col = states[0].cols();
  for (std::size_t l = 1; l < states.size(); ++l) {
    d.middleCols(col, reduced[l].cols()) = reduced[l].array().tanh().matrix();
    col += reduced[l].cols();
  }
  if (quadratic) d.rightCols(states[0].cols()) = states[0].array().square().matrix();
  return d;
}

std::vector<Index> LayerStack::block_widths(bool quadratic) const {
  std::vector<Index> w{states.at(0).cols()};
  for (std::size_t l = 1; l < states.size(); ++l) w.push_back(reduced[l].cols());
  if (quadratic) w.push_back(states[0].cols());
  return w;
}

LayerStack run_deep_stack(const DeepEsnConfig& config, const EmbeddedInputs& embedded, Index n_fit_rows,
                          std::uint64_t member) {
  config.validate();
  if (embedded.n_rows() < 1) throw DataError("embedded inputs have no usable rows");
  const auto L = static_cast<std::size_t>(config.L);
  LayerStack stack;
  stack.weights.resize(L);
  stack.states.resize(L);
  stack.reduced.resize(L);
  stack.maps.resize(L);
  const MatrixXd* layer_input = &embedded.matrix;
  for (int layer = config.L; layer >= 1; --layer) {
    const auto i = static_cast<std::size_t>(layer - 1);
    const ReservoirSpec spec = config.layer_spec(layer);
    stack.weights[i] = sample_weights(spec, layer_input->cols(), member, static_cast<std::uint64_t>(layer));
    stack.states[i] = run_reservoir(stack.weights[i], spec, *layer_input, VectorXd::Zero(spec.n_h)).states;
    if (layer > 1) {
      Reduction red = reduce_states(stack.states[i], n_fit_rows, config.n_h_tilde);
      stack.reduced[i] = std::move(red.reduced);
      stack.maps[i] = std::move(red.map);
      layer_input = &stack.reduced[i];
    }
  }
  return stack;
}

MatrixXd OutputFit::block(std::size_t i) const {
  Index start = 0;
  for (std::size_t b = 0; b < i; ++b) start += block_widths.at(b);
  return ridge.coef.middleRows(start, block_widths.at(i));
}

OutputFit fit_output(const MatrixXd& design, const MatrixXd& targets, double r_v, std::vector<Index> block_widths) {
  OutputFit fit;
  fit.ridge = ridge_fit(design, targets, r_v);
  if (block_widths.empty()) block_widths.push_back(design.cols());
  Index total = 0;
  for (Index w : block_widths) total += w;
  if (total != design.cols()) throw DimensionError("design block widths do not sum to the design width");
  fit.block_widths = std::move(block_widths);
  const MatrixXd resid = targets - fit.ridge.predict(design);
  fit.sigma2_eta = std::max(resid.squaredNorm() / static_cast<double>(resid.size()), 1e-300);
  return fit;
}

OutputFit fit_output(const LayerStack& stack, Index n_fit_rows, const MatrixXd& targets, double r_v, bool quadratic) {
  if (quadratic && stack.L() != 1) throw ConfigError("quadratic output terms require L = 1");
  if (targets.rows() != n_fit_rows) throw DimensionError("targets must have one row per training design row");
  return fit_output(stack.design(quadratic).topRows(n_fit_rows), targets, r_v, stack.block_widths(quadratic));
}

MemberForecast forecast_member(const DeepEsnConfig& config, const Alignment& alignment,
                               const ForecastProblem& problem, const DataStage& stage, std::uint64_t member) {
  const LayerStack stack = run_deep_stack(config, alignment.embedded, alignment.n_fit, member);
  const MatrixXd design = stack.design(config.quadratic);
  const MatrixXd train_targets = problem.targets.middleRows(alignment.first_target, alignment.n_fit);
  const OutputFit fit =
      fit_output(design.topRows(alignment.n_fit), train_targets, config.r_v, stack.block_widths(config.quadratic));
  MemberForecast f;
  f.coeffs = fit.predict(design.bottomRows(alignment.n_forecast));
  f.sigma2_eta = fit.sigma2_eta;
  f.data = stage.to_data(f.coeffs, fit.sigma2_eta);
  return f;
}

EnsembleForecast forecast_ensemble(const DeepEsnConfig& config, const ForecastProblem& problem,
                                   const DataStage& stage) {
  config.validate();
  const Alignment alignment = align(problem, config.m);
  if (alignment.n_forecast < 1) throw DataError("no forecast rows after alignment");
  const auto n = static_cast<std::size_t>(config.n_res);
  EnsembleForecast out;
  out.data.resize(n);
  out.coeffs.resize(n);
  out.sigma2_eta.resize(n);
  out.lead = problem.lead;
  out.first_time = alignment.first_target + alignment.n_fit;
  parallel_for(n, [&](std::size_t j) {
    try {
      MemberForecast f = forecast_member(config, alignment, problem, stage, j);
      out.data[j] = std::move(f.data);
      out.coeffs[j] = std::move(f.coeffs);
      out.sigma2_eta[j] = f.sigma2_eta;
    } catch (const NumericError& e) {
      throw NumericError("ensemble member " + std::to_string(j) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("ensemble member " + std::to_string(j) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace deesn
