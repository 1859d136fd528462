#include "deesn/bayes.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "deesn/errors.hpp"
#include "deesn/parallel.hpp"
#include "deesn/stfield.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

double per_layer(const std::vector<double>& v, int layer) {
  return v.size() == 1 ? v.front() : v.at(static_cast<std::size_t>(layer - 1));
}

void check_layers(const std::vector<double>& v, int L, const char* name) {
  if (v.empty() || (v.size() != 1 && v.size() != static_cast<std::size_t>(L))) {
    throw ConfigError(std::string("prior.") + name + " must hold one value or one per layer");
  }
}

std::vector<double> json_layers(const nlohmann::json& j, const char* key, std::vector<double> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  return v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
}

}  // namespace

SsvsPrior SsvsPrior::defaults_for_layers(int L) {
  SsvsPrior p;
  if (L != 2) {
    p.pi_beta = {0.10};
    p.sigma2_beta0 = {4.0};
  }
  return p;
}

void SsvsPrior::validate(int L) const {
  check_layers(pi_beta, L, "pi_beta");
  check_layers(sigma2_beta0, L, "sigma2_beta0");
  check_layers(sigma2_beta1, L, "sigma2_beta1");
  for (int l = 1; l <= L; ++l) {
    if (!(pi_at(l) > 0.0 && pi_at(l) < 1.0)) throw ConfigError("prior.pi_beta must lie in (0, 1)");
    if (!(spike_at(l) > 0.0)) throw ConfigError("prior.sigma2_beta1 (spike) must be positive");
    if (!(slab_at(l) > spike_at(l))) throw ConfigError("prior slab variance must exceed the spike variance");
  }
  if (!(alpha_eta > 0.0) || !(beta_eta > 0.0)) throw ConfigError("prior.alpha_eta and prior.beta_eta must be positive");
}

double SsvsPrior::pi_at(int layer) const { return per_layer(pi_beta, layer); }
double SsvsPrior::slab_at(int layer) const { return per_layer(sigma2_beta0, layer); }
double SsvsPrior::spike_at(int layer) const { return per_layer(sigma2_beta1, layer); }

nlohmann::json SsvsPrior::to_json() const {
  return {{"pi_beta", pi_beta},
          {"sigma2_beta0", sigma2_beta0},
          {"sigma2_beta1", sigma2_beta1},
          {"alpha_eta", alpha_eta},
          {"beta_eta", beta_eta}};
}

SsvsPrior SsvsPrior::from_json(const nlohmann::json& j) { return from_json(j, SsvsPrior{}); }

SsvsPrior SsvsPrior::from_json(const nlohmann::json& j, const SsvsPrior& base) {
  SsvsPrior p = base;
  try {
    p.pi_beta = json_layers(j, "pi_beta", p.pi_beta);
    p.sigma2_beta0 = json_layers(j, "sigma2_beta0", p.sigma2_beta0);
    p.sigma2_beta1 = json_layers(j, "sigma2_beta1", p.sigma2_beta1);
    p.alpha_eta = j.value("alpha_eta", p.alpha_eta);
    p.beta_eta = j.value("beta_eta", p.beta_eta);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("prior block: ") + e.what());
  }
  return p;
}

void GibbsConfig::validate() const {
  if (n_iter < 1) throw ConfigError("gibbs.n_iter must be >= 1");
  if (n_burn < 0 || n_burn >= n_iter) throw ConfigError("gibbs.n_burn must lie in [0, n_iter)");
  if (thinning < 1) throw ConfigError("gibbs.thinning must be >= 1");
  if (n_chains < 1) throw ConfigError("gibbs.n_chains must be >= 1");
  if (!(init_ridge > 0.0)) throw ConfigError("gibbs.init_ridge must be positive");
}

nlohmann::json GibbsConfig::to_json() const {
  return {{"n_iter", n_iter},         {"n_burn", n_burn},       {"n_chains", n_chains},
          {"thinning", thinning},     {"seed", seed},           {"store_beta", store_beta},
          {"intercept", intercept},   {"standardize", standardize},   {"block_limit", block_limit}, {"init_ridge", init_ridge}};
}

GibbsConfig GibbsConfig::from_json(const nlohmann::json& j) {
  GibbsConfig g;
  try {
    g.n_iter = j.value("n_iter", g.n_iter);
    g.n_burn = j.value("n_burn", g.n_burn);
    g.n_chains = j.value("n_chains", g.n_chains);
    g.thinning = j.value("thinning", g.thinning);
    g.seed = j.value("seed", g.seed);
    g.store_beta = j.value("store_beta", g.store_beta);
    g.intercept = j.value("intercept", g.intercept);
    g.standardize = j.value("standardize", g.standardize);
    g.block_limit = j.value("block_limit", g.block_limit);
    g.init_ridge = j.value("init_ridge", g.init_ridge);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gibbs block: ") + e.what());
  }
  g.validate();
  return g;
}

ReservoirCovariates precompute_reservoir_covariates(const DeepEsnConfig& config, const Alignment& alignment) {
  config.validate();
  ReservoirCovariates cov;
  cov.n_fit = alignment.n_fit;
  cov.n_forecast = alignment.n_forecast;
  cov.first_target = alignment.first_target;
  cov.designs.resize(static_cast<std::size_t>(config.n_res));
  std::vector<std::vector<Index>> widths(static_cast<std::size_t>(config.n_res));
  parallel_for(cov.designs.size(), [&](std::size_t j) {
    const LayerStack stack = run_deep_stack(config, alignment.embedded, alignment.n_fit, j);
    cov.designs[j] = stack.design(config.quadratic);
    widths[j] = stack.block_widths(config.quadratic);
  });
  // Block order: layer 1, layers 2..L, then squared layer-1 states.
  const auto& w = widths.front();
  for (std::size_t b = 0; b < w.size(); ++b) {
    const int layer = b == 0 || b >= static_cast<std::size_t>(config.L) ? 1 : static_cast<int>(b) + 1;
    for (Index u = 0; u < w[b]; ++u) {
      cov.column_layer.push_back(layer);
      cov.column_unit.push_back(u);
    }
  }
  return cov;
}

namespace {

constexpr char kCovMagic[8] = {'D', 'E', 'E', 'S', 'N', 'C', 'O', 'V'};

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& source) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError(source + ": truncated covariate cache");
  return v;
}

}  // namespace

void save_covariates(const std::filesystem::path& path, const ReservoirCovariates& cov) {
  std::string buf(kCovMagic, sizeof kCovMagic);
  put<std::uint32_t>(buf, 1);
  put<std::int64_t>(buf, cov.n_members());
  put<std::int64_t>(buf, cov.n_fit);
  put<std::int64_t>(buf, cov.n_forecast);
  put<std::int64_t>(buf, cov.first_target);
  put<std::int64_t>(buf, cov.width());
  for (std::size_t c = 0; c < cov.column_layer.size(); ++c) {
    put<std::int32_t>(buf, cov.column_layer[c]);
    put<std::int64_t>(buf, cov.column_unit[c]);
  }
  for (const auto& d : cov.designs) {
    buf.append(reinterpret_cast<const char*>(d.data()), static_cast<std::size_t>(d.size()) * sizeof(double));
  }
  write_file_atomically(path, buf);
}

ReservoirCovariates load_covariates(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string source = path.string();
  char magic[sizeof kCovMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCovMagic, sizeof magic) != 0) {
    throw ParseError(source + ": not a covariate cache");
  }
  if (take<std::uint32_t>(in, source) != 1) throw ParseError(source + ": unsupported covariate cache version");
  ReservoirCovariates cov;
  const auto members = take<std::int64_t>(in, source);
  cov.n_fit = take<std::int64_t>(in, source);
  cov.n_forecast = take<std::int64_t>(in, source);
  cov.first_target = take<std::int64_t>(in, source);
  const auto width = take<std::int64_t>(in, source);
  if (members < 0 || width < 0 || cov.n_fit < 0 || cov.n_forecast < 0) throw ParseError(source + ": bad header");
  for (Index c = 0; c < width; ++c) {
    cov.column_layer.push_back(take<std::int32_t>(in, source));
    cov.column_unit.push_back(take<std::int64_t>(in, source));
  }
  const Index rows = cov.n_fit + cov.n_forecast;
  for (Index j = 0; j < members; ++j) {
    MatrixXd d(rows, width);
    if (!in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)))) {
      throw ParseError(source + ": truncated covariate cache");
    }
    cov.designs.push_back(std::move(d));
  }
  return cov;
}

GibbsSampler::GibbsSampler(const ReservoirCovariates& cov, const DataStage& stage, const SsvsPrior& prior,
                           const GibbsConfig& config, const MatrixXd& data, std::uint64_t chain)
    : cov_(cov), prior_(prior), config_(config), rng_(keyed_stream(config.seed, chain, 0, StreamTag::kGibbs)) {
  config_.validate();
  if (cov.designs.empty()) throw DataError("no reservoir covariates");
  int max_layer = 1;
  for (int l : cov.column_layer) max_layer = std::max(max_layer, l);
  prior_.validate(max_layer);
  n_b_ = stage.n_b();
  n_z_ = stage.n_z();
  n_fit_ = cov.n_fit;
  width_ = cov.width();
  members_ = cov.n_members();
  total_width_ = cov.total_width();
  if (static_cast<Index>(cov.column_layer.size()) != width_) throw DimensionError("covariate column labels disagree");

  const double scale = 1.0 / members_;
  for (const auto& d : cov.designs) {
    if (d.rows() != cov.n_fit + cov.n_forecast || d.cols() != width_) {
      throw DimensionError("covariate designs differ in shape");
    }
    RowVectorXd mean = RowVectorXd::Zero(width_);
    if (config_.intercept) mean = d.topRows(n_fit_).colwise().mean();
    RowVectorXd col_scale = RowVectorXd::Constant(width_, scale);
    if (config_.standardize) {
      const RowVectorXd m = d.topRows(n_fit_).colwise().mean();
      for (Index k = 0; k < width_; ++k) {
        const double sd = std::sqrt((d.col(k).head(n_fit_).array() - m(k)).square().sum() /
                                    static_cast<double>(std::max<Index>(n_fit_ - 1, 1)));
        if (sd > 1e-12) col_scale(k) = scale / sd;
      }
    }
    x_fit_.push_back((d.topRows(n_fit_).rowwise() - mean).array().rowwise() * col_scale.array());
    x_fore_.push_back((d.bottomRows(cov.n_forecast).rowwise() - mean).array().rowwise() * col_scale.array());
    gram_.push_back(x_fit_.back().transpose() * x_fit_.back());
  }
  layer_pi_.resize(width_);
  layer_slab_.resize(width_);
  layer_spike_.resize(width_);
  for (Index k = 0; k < width_; ++k) {
    const int l = cov.column_layer[static_cast<std::size_t>(k)];
    layer_pi_(k) = prior_.pi_at(l);
    layer_slab_(k) = prior_.slab_at(l);
    layer_spike_(k) = prior_.spike_at(l);
  }

  phi_ = stage.phi();
  const MatrixXd sz = stage.sigma_z.dense();
  Eigen::LLT<MatrixXd> llt(sz);
  if (llt.info() != Eigen::Success) {
    throw NumericError("data-stage covariance is not positive definite; the alpha conditional is undefined");
  }
  sigma_z_chol_ = llt.matrixL();
  s_mat_ = llt.solve(phi_);
  a_mat_ = phi_.transpose() * s_mat_;
  a_mat_ = 0.5 * (a_mat_ + a_mat_.transpose());

  state_.beta = MatrixXd::Zero(total_width_, n_b_);
  state_.gamma = Eigen::MatrixXi::Ones(total_width_, n_b_);
  state_.intercept = RowVectorXd::Zero(n_b_);
  state_.alpha = MatrixXd::Zero(n_fit_, n_b_);
  set_data(data);
}

void GibbsSampler::set_data(const MatrixXd& data) {
  if (data.rows() != n_fit_ || data.cols() != n_z_) {
    throw DimensionError("Gibbs data must be n_fit x n_z (" + std::to_string(n_fit_) + " x " + std::to_string(n_z_) +
                         ")");
  }
  data_proj_ = data * s_mat_;
}

MatrixXd GibbsSampler::fitted_mean() const {
  MatrixXd mu = MatrixXd::Zero(n_fit_, n_b_);
  mu.rowwise() += state_.intercept;
  for (int j = 0; j < members_; ++j) mu.noalias() += x_fit_[j] * state_.beta.middleRows(j * width_, width_);
  return mu;
}

MatrixXd GibbsSampler::forecast_mean() const {
  const Index n_f = cov_.n_forecast;
  MatrixXd mu = MatrixXd::Zero(n_f, n_b_);
  mu.rowwise() += state_.intercept;
  for (int j = 0; j < members_; ++j) mu.noalias() += x_fore_[j] * state_.beta.middleRows(j * width_, width_);
  return mu;
}

MatrixXd GibbsSampler::prior_precision() const {
  MatrixXd d(total_width_, n_b_);
  for (int j = 0; j < members_; ++j) {
    for (Index k = 0; k < width_; ++k) {
      const Index i = j * width_ + k;
      for (Index b = 0; b < n_b_; ++b) d(i, b) = state_.gamma(i, b) ? 1.0 / layer_slab_(k) : 1.0 / layer_spike_(k);
    }
  }
  return d;
}

void GibbsSampler::initialize() {
  // alpha from the data, coefficients from one ridge fit per member.
  const MatrixXd a_inv = a_mat_.ldlt().solve(MatrixXd::Identity(n_b_, n_b_));
  state_.alpha = data_proj_ * a_inv;
  state_.intercept = config_.intercept ? RowVectorXd(state_.alpha.colwise().mean()) : RowVectorXd::Zero(n_b_);
  const MatrixXd target = state_.alpha.rowwise() - state_.intercept;
  for (int j = 0; j < members_; ++j) {
    // Each member's fit alone explains the target, so their 1/n_res average does too.
    const RidgeFit fit = ridge_fit(x_fit_[j] * members_, target, config_.init_ridge, Intercept::kNone);
    state_.beta.middleRows(j * width_, width_) = fit.coef;
  }
  resid_ = state_.alpha - fitted_mean();
  state_.sigma2_eta = std::max(resid_.squaredNorm() / static_cast<double>(resid_.size()), 1e-6);
  update_gamma();
}

void GibbsSampler::draw_from_prior() {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int j = 0; j < members_; ++j) {
    for (Index k = 0; k < width_; ++k) {
      const Index i = j * width_ + k;
      for (Index b = 0; b < n_b_; ++b) {
        const bool slab = uniform01(rng_) < layer_pi_(k);
        state_.gamma(i, b) = slab ? 1 : 0;
        state_.beta(i, b) = std::sqrt(slab ? layer_slab_(k) : layer_spike_(k)) * gauss(rng_);
      }
    }
  }
  state_.intercept.setZero();
  std::gamma_distribution<double> gam(prior_.alpha_eta, 1.0);
  state_.sigma2_eta = prior_.beta_eta / gam(rng_);
  const MatrixXd mu = fitted_mean();
  state_.alpha = mu;
  const double sd = std::sqrt(state_.sigma2_eta);
  for (Index i = 0; i < state_.alpha.size(); ++i) state_.alpha.data()[i] += sd * gauss(rng_);
  resid_ = state_.alpha - mu;
}

MatrixXd GibbsSampler::simulate_data() {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd noise(n_fit_, n_z_);
  for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = gauss(rng_);
  return state_.alpha * phi_.transpose() + noise * sigma_z_chol_.transpose();
}

std::pair<VectorXd, MatrixXd> GibbsSampler::beta_conditional(Index b) const {
  MatrixXd x(n_fit_, total_width_);
  for (int j = 0; j < members_; ++j) x.middleCols(j * width_, width_) = x_fit_[j];
  const MatrixXd d = prior_precision();
  MatrixXd prec = x.transpose() * x / state_.sigma2_eta;
  prec.diagonal() += d.col(b);
  const VectorXd rhs = x.transpose() * (state_.alpha.col(b).array() - state_.intercept(b)).matrix() / state_.sigma2_eta;
  Eigen::LLT<MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw NumericError("coefficient precision lost positive definiteness");
  MatrixXd cov = llt.solve(MatrixXd::Identity(total_width_, total_width_));
  return {llt.solve(rhs), cov};
}

void GibbsSampler::update_beta_block() {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd x(n_fit_, total_width_);
  for (int j = 0; j < members_; ++j) x.middleCols(j * width_, width_) = x_fit_[j];
  const MatrixXd gram = x.transpose() * x;
  const MatrixXd d = prior_precision();
  const double inv_s2 = 1.0 / state_.sigma2_eta;
  const MatrixXd rhs_all = x.transpose() * (state_.alpha.rowwise() - state_.intercept) * inv_s2;
  for (Index b = 0; b < n_b_; ++b) {
    MatrixXd prec = gram * inv_s2;
    prec.diagonal() += d.col(b);
    Eigen::LLT<MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) throw NumericError("coefficient precision lost positive definiteness");
    VectorXd z(total_width_);
    for (Index i = 0; i < z.size(); ++i) z(i) = gauss(rng_);
    state_.beta.col(b) = llt.solve(rhs_all.col(b)) + llt.matrixU().solve(z);
  }
  resid_ = state_.alpha - fitted_mean();
}

void GibbsSampler::update_beta_single_site() {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double inv_s2 = 1.0 / state_.sigma2_eta;
  RowVectorXd delta(n_b_);
  for (int j = 0; j < members_; ++j) {
    const Index off = j * width_;
    const MatrixXd& g = gram_[static_cast<std::size_t>(j)];
    const MatrixXd old = state_.beta.middleRows(off, width_);
    // c = x' resid for the current coefficients of this member.
    MatrixXd c = x_fit_[static_cast<std::size_t>(j)].transpose() * resid_;
    for (Index k = 0; k < width_; ++k) {
      const Index i = off + k;
      const double gkk = g(k, k);
      for (Index b = 0; b < n_b_; ++b) {
        const double d = state_.gamma(i, b) ? 1.0 / layer_slab_(k) : 1.0 / layer_spike_(k);
        const double prec = gkk * inv_s2 + d;
        const double mean = (c(k, b) + gkk * state_.beta(i, b)) * inv_s2 / prec;
        const double draw = mean + gauss(rng_) / std::sqrt(prec);
        delta(b) = draw - state_.beta(i, b);
        state_.beta(i, b) = draw;
      }
      c.noalias() -= g.col(k) * delta;
    }
    resid_.noalias() -= x_fit_[static_cast<std::size_t>(j)] * (state_.beta.middleRows(off, width_) - old);
  }
}

void GibbsSampler::update_gamma() {
  for (int j = 0; j < members_; ++j) {
    for (Index k = 0; k < width_; ++k) {
      const double slab = layer_slab_(k);
      const double spike = layer_spike_(k);
      const double base = std::log(layer_pi_(k) / (1.0 - layer_pi_(k))) - 0.5 * std::log(slab / spike);
      const double curv = 0.5 * (1.0 / spike - 1.0 / slab);
      const Index i = j * width_ + k;
      for (Index b = 0; b < n_b_; ++b) {
        const double beta = state_.beta(i, b);
        const double logit = base + curv * beta * beta;
        const double p = 1.0 / (1.0 + std::exp(-logit));
        state_.gamma(i, b) = uniform01(rng_) < p ? 1 : 0;
      }
    }
  }
}

void GibbsSampler::update_intercept() {
  if (!config_.intercept) return;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sd = std::sqrt(state_.sigma2_eta / static_cast<double>(n_fit_));
  for (Index b = 0; b < n_b_; ++b) {
    const double mean = resid_.col(b).mean() + state_.intercept(b);
    const double draw = mean + sd * gauss(rng_);
    resid_.col(b).array() -= draw - state_.intercept(b);
    state_.intercept(b) = draw;
  }
}

void GibbsSampler::update_sigma2() {
  const double shape = prior_.alpha_eta + 0.5 * static_cast<double>(n_fit_ * n_b_);
  const double rate = prior_.beta_eta + 0.5 * resid_.squaredNorm();
  std::gamma_distribution<double> gam(shape, 1.0);
  state_.sigma2_eta = rate / gam(rng_);
}

void GibbsSampler::update_alpha() {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double inv_s2 = 1.0 / state_.sigma2_eta;
  MatrixXd q = a_mat_;
  q.diagonal().array() += inv_s2;
  Eigen::LLT<MatrixXd> llt(q);
  if (llt.info() != Eigen::Success) throw NumericError("alpha precision lost positive definiteness");
  const MatrixXd mu = state_.alpha - resid_;
  const MatrixXd rhs = data_proj_ + mu * inv_s2;
  MatrixXd noise(n_b_, n_fit_);
  for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = gauss(rng_);
  state_.alpha = llt.solve(rhs.transpose()).transpose() + llt.matrixU().solve(noise).transpose();
  resid_ = state_.alpha - mu;
}

void GibbsSampler::step() {
  if (total_width_ <= config_.block_limit) {
    update_beta_block();
  } else {
    update_beta_single_site();
  }
  update_gamma();
  update_intercept();
  update_sigma2();
  update_alpha();
}

PosteriorSamples gibbs_run(const ReservoirCovariates& cov, const DataStage& stage, const SsvsPrior& prior,
                           const GibbsConfig& config, const MatrixXd& train_data, std::uint64_t chain) {
  const auto start = std::chrono::steady_clock::now();
  GibbsSampler sampler(cov, stage, prior, config, stage.centered(train_data), chain);
  sampler.initialize();
  const int kept = config.n_kept();
  PosteriorSamples out;
  out.sigma2_eta.resize(kept);
  out.forecast_level.resize(kept);
  out.forecast_mean.reserve(static_cast<std::size_t>(kept));
  out.beta_mean = MatrixXd::Zero(sampler.total_width(), sampler.n_b());
  out.inclusion = MatrixXd::Zero(sampler.total_width(), sampler.n_b());
  out.alpha_mean = MatrixXd::Zero(cov.n_fit, sampler.n_b());
  out.fitted_mean = MatrixXd::Zero(cov.n_fit, sampler.n_b());
  out.column_layer = cov.column_layer;
  out.column_unit = cov.column_unit;
  out.n_members = cov.n_members();
  int d = 0;
  for (int it = 0; it < config.n_iter; ++it) {
    sampler.step();
    if (it < config.n_burn || (it - config.n_burn) % config.thinning != 0) continue;
    const GibbsState& s = sampler.state();
    out.sigma2_eta(d) = s.sigma2_eta;
    out.forecast_mean.push_back(sampler.forecast_mean());
    out.forecast_level(d) = out.forecast_mean.back().size() > 0 ? out.forecast_mean.back().mean() : 0.0;
    if (config.store_beta) out.beta.push_back(s.beta);
    out.beta_mean += s.beta;
    out.inclusion += s.gamma.cast<double>();
    out.alpha_mean += s.alpha;
    out.fitted_mean += sampler.fitted_mean();
    ++d;
  }
  out.beta_mean /= kept;
  out.inclusion /= kept;
  out.alpha_mean /= kept;
  out.fitted_mean /= kept;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> pick_draws(const std::vector<PosteriorSamples>& chains,
                                                            int max_draws) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t d = 0; d < chains[c].forecast_mean.size(); ++d) all.emplace_back(c, d);
  }
  if (all.empty()) throw DataError("no posterior draws");
  if (max_draws < 1 || all.size() <= static_cast<std::size_t>(max_draws)) return all;
  std::vector<std::pair<std::size_t, std::size_t>> picked;
  const double stride = static_cast<double>(all.size()) / max_draws;
  for (int i = 0; i < max_draws; ++i) picked.push_back(all[static_cast<std::size_t>(i * stride)]);
  return picked;
}

}  // namespace

ForecastCube posterior_forecast(const std::vector<PosteriorSamples>& chains, const DataStage& stage,
                                std::uint64_t seed, int max_draws) {
  const auto picked = pick_draws(chains, max_draws);
  MatrixXd chol;
  if (stage.sigma_z.is_scaled_identity()) {
    chol = MatrixXd::Identity(stage.n_z(), stage.n_z()) * std::sqrt(stage.sigma_z.nugget());
  } else {
    Eigen::LLT<MatrixXd> llt(stage.sigma_z.dense());
    if (llt.info() != Eigen::Success) throw NumericError("data-stage covariance is not positive definite");
    chol = llt.matrixL();
  }
  Rng rng = keyed_stream(seed, 0, 0, StreamTag::kPredictive);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ForecastCube cube;
  cube.reserve(picked.size());
  for (const auto& [c, d] : picked) {
    const MatrixXd& mu = chains[c].forecast_mean[d];
    const double sd = std::sqrt(chains[c].sigma2_eta(d));
    MatrixXd alpha = mu;
    for (Index i = 0; i < alpha.size(); ++i) alpha.data()[i] += sd * gauss(rng);
    MatrixXd noise(mu.rows(), stage.n_z());
    for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = gauss(rng);
    cube.push_back(stage.uncenter(alpha * stage.phi().transpose() + noise * chol.transpose()));
  }
  return cube;
}

MatrixXd posterior_mean_forecast(const std::vector<PosteriorSamples>& chains, const DataStage& stage) {
  const auto picked = pick_draws(chains, 0);
  const RowVectorXd phi_sq = stage.phi().rowwise().squaredNorm().transpose();
  const RowVectorXd sz_diag = stage.sigma_z.diagonal().transpose();
  MatrixXd acc;
  for (const auto& [c, d] : picked) {
    MatrixXd m = chains[c].forecast_mean[d] * stage.phi().transpose();
    if (stage.transform == Transform::kLog) {
      const RowVectorXd half = 0.5 * (chains[c].sigma2_eta(d) * phi_sq + sz_diag);
      m.rowwise() += half;
    }
    m = stage.uncenter(m);
    if (acc.size() == 0) {
      acc = m;
    } else {
      acc += m;
    }
  }
  return acc / static_cast<double>(picked.size());
}

double gelman_rubin(const std::vector<VectorXd>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw DataError("Gelman-Rubin needs at least two chains");
  const Index n = chains.front().size();
  if (n < 10) throw DataError("Gelman-Rubin needs chains of length >= 10");
  for (const auto& c : chains) {
    if (c.size() != n) throw DimensionError("Gelman-Rubin chains differ in length");
  }
  VectorXd means(static_cast<Index>(m));
  double w = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    means(static_cast<Index>(j)) = chains[j].mean();
    w += (chains[j].array() - means(static_cast<Index>(j))).square().sum() / static_cast<double>(n - 1);
  }
  w /= static_cast<double>(m);
  const double grand = means.mean();
  const double b = static_cast<double>(n) / static_cast<double>(m - 1) * (means.array() - grand).square().sum();
  const double dn = static_cast<double>(n);
  const double v = (dn - 1.0) / dn * w + b / dn;
  if (w <= 0.0) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return std::sqrt(v / w);
}

BayesRun run_chains(const ReservoirCovariates& cov, const DataStage& stage, const SsvsPrior& prior,
                    const GibbsConfig& config, const MatrixXd& train_data) {
  config.validate();
  BayesRun run;
  run.chains.resize(static_cast<std::size_t>(config.n_chains));
  parallel_for(run.chains.size(), [&](std::size_t c) {
    run.chains[c] = gibbs_run(cov, stage, prior, config, train_data, c);
  });
  if (run.chains.size() >= 2 && config.n_kept() >= 10) {
    std::vector<VectorXd> s2;
    std::vector<VectorXd> level;
    for (const auto& c : run.chains) {
      s2.push_back(c.sigma2_eta);
      level.push_back(c.forecast_level);
    }
    run.rhat["sigma2_eta"] = gelman_rubin(s2);
    if (cov.n_forecast > 0) run.rhat["forecast_level"] = gelman_rubin(level);
  }
  return run;
}

std::string inclusion_csv(const std::vector<PosteriorSamples>& chains) {
  if (chains.empty()) throw DataError("no chains");
  MatrixXd freq = MatrixXd::Zero(chains.front().inclusion.rows(), chains.front().inclusion.cols());
  for (const auto& c : chains) freq += c.inclusion;
  freq /= static_cast<double>(chains.size());
  const auto& first = chains.front();
  const auto width = static_cast<Index>(first.column_layer.size());
  std::ostringstream out;
  out.precision(6);
  out << "member,layer,unit,output,frequency\n";
  for (Index i = 0; i < freq.rows(); ++i) {
    const Index k = i % width;
    for (Index b = 0; b < freq.cols(); ++b) {
      out << i / width << ',' << first.column_layer[static_cast<std::size_t>(k)] << ','
          << first.column_unit[static_cast<std::size_t>(k)] << ',' << b << ',' << freq(i, b) << '\n';
    }
  }
  return out.str();
}

}  // namespace deesn
