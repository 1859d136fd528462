#include "deesn/tune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "deesn/errors.hpp"
#include "deesn/eval.hpp"
#include "deesn/parallel.hpp"
#include "deesn/rng.hpp"

namespace deesn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double unit(double g) { return std::clamp(std::isfinite(g) ? g : 0.0, 0.0, 1.0); }

Index decode_int(double g, Index lo, Index hi) {
  const auto v = lo + static_cast<Index>(std::floor(unit(g) * static_cast<double>(hi - lo + 1)));
  return std::min(v, hi);
}

}  // namespace

SearchSpace SearchSpace::for_layers(int L, bool per_layer_nu) {
  if (L < 1) throw ConfigError("L must be >= 1");
  SearchSpace s;
  s.n_nu = (L <= 3 || per_layer_nu) ? L : 1;
  return s;
}

DeepEsnConfig Candidate::apply(DeepEsnConfig base) const {
  base.m = m;
  base.nu = nu.size() == 1 || static_cast<int>(nu.size()) == base.L ? nu : std::vector<double>{nu.front()};
  base.n_h_tilde = n_h_tilde;
  base.n_h1 = n_h1;
  base.r_v = r_v;
  return base;
}

std::string Candidate::key() const { return to_json().dump(); }

nlohmann::json Candidate::to_json() const {
  return {{"m", m}, {"nu", nu}, {"n_h_tilde", n_h_tilde}, {"n_h1", n_h1}, {"r_v", r_v}};
}

Candidate Candidate::from_json(const nlohmann::json& j) {
  Candidate c;
  try {
    c.m = j.at("m").get<Index>();
    c.nu = j.at("nu").is_array() ? j.at("nu").get<std::vector<double>>() : std::vector<double>{j.at("nu").get<double>()};
    c.n_h_tilde = j.at("n_h_tilde").get<Index>();
    c.n_h1 = j.at("n_h1").get<Index>();
    c.r_v = j.at("r_v").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("tuned candidate: ") + e.what());
  }
  if (c.nu.empty()) throw ConfigError("tuned candidate: nu is empty");
  return c;
}

Candidate decode_chromosome(const VectorXd& genes, const SearchSpace& space) {
  if (genes.size() != space.n_genes()) {
    throw DimensionError("chromosome needs " + std::to_string(space.n_genes()) + " genes, got " +
                         std::to_string(genes.size()));
  }
  Candidate c;
  Index g = 0;
  c.m = decode_int(genes(g++), space.m_min, space.m_max);
  c.nu.clear();
  for (int i = 0; i < space.n_nu; ++i) c.nu.push_back(space.nu_min + unit(genes(g++)) * (space.nu_max - space.nu_min));
  c.n_h_tilde = decode_int(genes(g++), space.n_h_tilde_min, space.n_h_tilde_max);
  c.n_h1 = decode_int(genes(g++), space.n_h1_min, space.n_h1_max);
  const double lo = std::log10(space.r_v_min);
  const double hi = std::log10(space.r_v_max);
  c.r_v = std::pow(10.0, lo + unit(genes(g)) * (hi - lo));
  return c;
}

void GaConfig::validate() const {
  if (generations < 1) throw ConfigError("ga.generations must be >= 1");
  if (population < 4) throw ConfigError("ga.population must be >= 4");
  if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0)) throw ConfigError("ga.crossover_rate must lie in [0, 1]");
  if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw ConfigError("ga.mutation_rate must lie in [0, 1]");
  if (!(mutation_sd >= 0.0)) throw ConfigError("ga.mutation_sd must be >= 0");
  if (tournament < 1) throw ConfigError("ga.tournament must be >= 1");
  if (elitism < 0 || elitism > population) throw ConfigError("ga.elitism must lie in [0, population]");
}

nlohmann::json GaConfig::to_json() const {
  return {{"generations", generations}, {"population", population},   {"crossover_rate", crossover_rate},
          {"mutation_rate", mutation_rate}, {"mutation_sd", mutation_sd}, {"tournament", tournament},
          {"elitism", elitism},           {"seed", seed}};
}

GaConfig GaConfig::from_json(const nlohmann::json& j) {
  GaConfig g;
  try {
    g.generations = j.value("generations", g.generations);
    g.population = j.value("population", g.population);
    g.crossover_rate = j.value("crossover_rate", g.crossover_rate);
    g.mutation_rate = j.value("mutation_rate", g.mutation_rate);
    g.mutation_sd = j.value("mutation_sd", g.mutation_sd);
    g.tournament = j.value("tournament", g.tournament);
    g.elitism = j.value("elitism", g.elitism);
    g.seed = j.value("seed", g.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ga block: ") + e.what());
  }
  g.validate();
  return g;
}

GaResult ga_search(int n_genes, const GaConfig& config, const FitnessFn& fitness) {
  config.validate();
  if (n_genes < 1) throw ConfigError("ga_search needs at least one gene");
  Rng rng = keyed_stream(config.seed, 0, 0, StreamTag::kGenetic);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto pop_size = static_cast<std::size_t>(config.population);

  std::map<std::vector<double>, double> seen;
  auto score = [&](const std::vector<VectorXd>& pop) {
    std::vector<double> out(pop.size(), kNegInf);
    std::vector<std::size_t> todo;
    std::map<std::vector<double>, std::size_t> first;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      std::vector<double> key(pop[i].data(), pop[i].data() + pop[i].size());
      if (seen.count(key) == 0 && first.emplace(key, i).second) todo.push_back(i);
    }
    std::vector<double> fresh(todo.size(), kNegInf);
    parallel_for(todo.size(), [&](std::size_t k) {
      double f = kNegInf;
      try {
        f = fitness(pop[todo[k]]);
      } catch (const Error&) {
        f = kNegInf;
      }
      fresh[k] = std::isnan(f) ? kNegInf : f;
    });
    for (std::size_t k = 0; k < todo.size(); ++k) {
      const VectorXd& g = pop[todo[k]];
      seen[std::vector<double>(g.data(), g.data() + g.size())] = fresh[k];
    }
    for (std::size_t i = 0; i < pop.size(); ++i) out[i] = seen.at(std::vector<double>(pop[i].data(), pop[i].data() + pop[i].size()));
    return out;
  };

  std::vector<VectorXd> pop(pop_size, VectorXd(n_genes));
  for (auto& g : pop) {
    for (Index k = 0; k < n_genes; ++k) g(k) = uniform01(rng);
  }
  std::vector<double> fit = score(pop);

  GaResult result;
  result.best_fitness = kNegInf;
  result.best_genes = pop.front();
  auto record = [&](int generation) {
    GenerationStats s;
    s.generation = generation;
    s.best = kNegInf;
    double sum = 0.0;
    int finite = 0;
    for (std::size_t i = 0; i < pop_size; ++i) {
      if (fit[i] > s.best) s.best = fit[i];
      if (fit[i] > result.best_fitness) {
        result.best_fitness = fit[i];
        result.best_genes = pop[i];
      }
      if (std::isfinite(fit[i])) {
        sum += fit[i];
        ++finite;
      }
    }
    s.mean = finite > 0 ? sum / finite : std::numeric_limits<double>::quiet_NaN();
    s.best_ever = result.best_fitness;
    s.best_genes = result.best_genes;
    result.history.push_back(s);
  };
  record(1);

  auto pick = [&]() -> std::size_t {
    std::size_t best = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pop_size));
    for (int t = 1; t < config.tournament; ++t) {
      const auto c = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pop_size));
      if (fit[c] > fit[best]) best = c;
    }
    return best;
  };

  for (int gen = 2; gen <= config.generations; ++gen) {
    std::vector<std::size_t> order(pop_size);
    for (std::size_t i = 0; i < pop_size; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fit[a] > fit[b]; });
    std::vector<VectorXd> next;
    next.reserve(pop_size);
    for (int e = 0; e < config.elitism; ++e) next.push_back(pop[order[static_cast<std::size_t>(e)]]);
    while (next.size() < pop_size) {
      const VectorXd& a = pop[pick()];
      const VectorXd& b = pop[pick()];
      VectorXd child = a;
      if (uniform01(rng) < config.crossover_rate) {
        for (Index k = 0; k < n_genes; ++k) {
          if (uniform01(rng) < 0.5) child(k) = b(k);
        }
      }
      for (Index k = 0; k < n_genes; ++k) {
        if (uniform01(rng) < config.mutation_rate) child(k) = std::clamp(child(k) + config.mutation_sd * gauss(rng), 0.0, 1.0);
      }
      next.push_back(std::move(child));
    }
    pop = std::move(next);
    fit = score(pop);
    record(gen);
  }
  result.evaluations = static_cast<int>(seen.size());
  return result;
}

Index CvScheme::fit_rows(Index n_train) const {
  Index val = validation_rows;
  if (val <= 0) {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("cv.validation_fraction must lie in (0, 1)");
    }
    val = static_cast<Index>(std::llround(validation_fraction * static_cast<double>(n_train)));
  }
  if (val < 1) throw ConfigError("validation block is empty");
  if (val >= n_train - 1) throw ConfigError("validation block leaves no fitting rows");
  return n_train - val;
}

namespace {

PreparedData prepare_cv(const TuneData& data, const CvScheme& cv) {
  if (data.n_train < 2 || data.n_train > data.response.rows()) throw ConfigError("tuning n_train out of range");
  const Index fit = cv.fit_rows(data.n_train);
  return prepare_data(data.response.topRows(data.n_train), data.input.topRows(data.n_train), fit, data.grid,
                      data.options);
}

double score_config(const DeepEsnConfig& config, const PreparedData& prepared, const MatrixXd& truth) {
  const EnsembleForecast f = forecast_ensemble(config, prepared.problem, prepared.stage);
  const double loss = mspe(cube_mean(f.data), truth);
  return std::isfinite(loss) ? -loss : kNegInf;
}

}  // namespace

double evaluate_candidate(const Candidate& candidate, const DeepEsnConfig& base, const TuneData& data,
                          const CvScheme& cv, int reduced_n_res) {
  const PreparedData prepared = prepare_cv(data, cv);
  DeepEsnConfig config = candidate.apply(base);
  config.n_res = reduced_n_res;
  try {
    return score_config(config, prepared, forecast_truth(prepared.problem));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error&) {
    return kNegInf;
  }
}

CvObjective::CvObjective(const TuneData& data, const CvScheme& cv, DeepEsnConfig base, int reduced_n_res)
    : prepared_(prepare_cv(data, cv)), base_(std::move(base)) {
  truth_ = forecast_truth(prepared_.problem);
  base_.n_res = reduced_n_res;
}

double CvObjective::operator()(const Candidate& candidate) const {
  const std::string key = candidate.key();
  {
    std::lock_guard lock(mutex_);
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  double f = kNegInf;
  try {
    f = score_config(candidate.apply(base_), prepared_, truth_);
  } catch (const Error&) {
    f = kNegInf;
  }
  std::lock_guard lock(mutex_);
  cache_.emplace(key, f);
  return f;
}

std::size_t CvObjective::cache_size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

TuneResult tune_model(const TuneData& data, const DeepEsnConfig& base, const SearchSpace& space, const GaConfig& ga,
                      const CvScheme& cv, int reduced_n_res) {
  const CvObjective objective(data, cv, base, reduced_n_res);
  TuneResult out;
  out.ga = ga_search(space.n_genes(), ga,
                     [&](const VectorXd& genes) { return objective(decode_chromosome(genes, space)); });
  out.best = decode_chromosome(out.ga.best_genes, space);
  out.fitness = out.ga.best_fitness;
  out.config = out.best.apply(base);
  return out;
}

std::string search_log_csv(const GaResult& result, const SearchSpace& space) {
  std::ostringstream out;
  out.precision(10);
  out << "generation,best_fitness,mean_fitness,best_ever,m,nu,n_h_tilde,n_h1,r_v\n";
  for (const auto& s : result.history) {
    const Candidate c = decode_chromosome(s.best_genes, space);
    std::string nu;
    for (std::size_t i = 0; i < c.nu.size(); ++i) nu += (i ? ";" : "") + std::to_string(c.nu[i]);
    out << s.generation << ',' << s.best << ',' << s.mean << ',' << s.best_ever << ',' << c.m << ',' << nu << ','
        << c.n_h_tilde << ',' << c.n_h1 << ',' << c.r_v << '\n';
  }
  return out.str();
}

}  // namespace deesn
