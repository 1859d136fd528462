#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deesn/deepesn.hpp"
#include "deesn/problem.hpp"
#include "deesn/stfield.hpp"

namespace deesn {

// Gene order: m, nu (one gene, or one per layer), n_h_tilde, n_h1, r_v.
struct SearchSpace {
  Eigen::Index m_min = 0, m_max = 5;
  double nu_min = 0.0, nu_max = 1.0;
  Eigen::Index n_h_tilde_min = 6, n_h_tilde_max = 20;
  Eigen::Index n_h1_min = 25, n_h1_max = 75;
  double r_v_min = 1e-4, r_v_max = 1e-2;  // searched on a log scale
  int n_nu = 1;

  // One nu per layer up to three layers, a shared nu above (unless per_layer_nu).
  static SearchSpace for_layers(int L, bool per_layer_nu = false);
  int n_genes() const { return 4 + n_nu; }
};

struct Candidate {
  Eigen::Index m = 0;
  std::vector<double> nu{0.5};
  Eigen::Index n_h_tilde = 10;
  Eigen::Index n_h1 = 50;
  double r_v = 1e-3;

  // Copies the searched fields onto base; other fields are kept.
  DeepEsnConfig apply(DeepEsnConfig base) const;
  std::string key() const;
  nlohmann::json to_json() const;
  static Candidate from_json(const nlohmann::json& j);
};

// Genes outside [0, 1] are clamped. Integers use floor over the inclusive range.
Candidate decode_chromosome(const Eigen::VectorXd& genes, const SearchSpace& space);

struct GaConfig {
  int generations = 40;
  int population = 20;
  double crossover_rate = 0.8;
  double mutation_rate = 0.1;
  double mutation_sd = 0.1;
  int tournament = 3;
  int elitism = 2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GaConfig from_json(const nlohmann::json& j);
};

struct GenerationStats {
  int generation = 0;   // 1-based; generation 1 is the initial population
  double best = 0.0;    // best fitness in this generation
  double mean = 0.0;    // mean over finite fitness values
  double best_ever = 0.0;
  Eigen::VectorXd best_genes;  // best-ever genes after this generation
};

struct GaResult {
  Eigen::VectorXd best_genes;
  double best_fitness = 0.0;
  std::vector<GenerationStats> history;
  int evaluations = 0;  // distinct gene vectors scored
};

using FitnessFn = std::function<double(const Eigen::VectorXd&)>;

// Maximizes fitness over [0, 1]^n_genes: tournament selection, uniform
// crossover, Gaussian mutation with clamping, elitism. Population members are
// scored in parallel; exceptions and NaN become -inf.
GaResult ga_search(int n_genes, const GaConfig& config, const FitnessFn& fitness);

// Temporal tail block of the training period held out for validation.
struct CvScheme {
  double validation_fraction = 0.2;
  Eigen::Index validation_rows = 0;  // overrides the fraction when > 0

  // Number of leading training rows used for fitting.
  Eigen::Index fit_rows(Eigen::Index n_train) const;
};

// Raw series and preparation options; only rows [0, n_train) are ever used
// while tuning.
struct TuneData {
  Eigen::MatrixXd response;
  Eigen::MatrixXd input;
  Eigen::Index n_train = 0;
  GridSpec grid;
  PrepareOptions options;
};

// Negative validation MSPE of the ensemble mean (data scale).
double evaluate_candidate(const Candidate& candidate, const DeepEsnConfig& base, const TuneData& data,
                          const CvScheme& cv, int reduced_n_res = 30);

// Caches the validation split and scores per candidate. Thread safe.
class CvObjective {
 public:
  CvObjective(const TuneData& data, const CvScheme& cv, DeepEsnConfig base, int reduced_n_res = 30);

  double operator()(const Candidate& candidate) const;
  std::size_t cache_size() const;

 private:
  PreparedData prepared_;
  Eigen::MatrixXd truth_;
  DeepEsnConfig base_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, double> cache_;
};

struct TuneResult {
  Candidate best;
  double fitness = 0.0;
  DeepEsnConfig config;  // best candidate on the base config (full n_res)
  GaResult ga;
};

TuneResult tune_model(const TuneData& data, const DeepEsnConfig& base, const SearchSpace& space,
                      const GaConfig& ga, const CvScheme& cv, int reduced_n_res = 30);

// generation,best_fitness,mean_fitness,best_ever,m,nu,n_h_tilde,n_h1,r_v
std::string search_log_csv(const GaResult& result, const SearchSpace& space);

}  // namespace deesn
