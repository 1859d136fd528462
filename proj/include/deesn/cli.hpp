#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deesn/bayes.hpp"
#include "deesn/deepesn.hpp"
#include "deesn/eval.hpp"
#include "deesn/experiment.hpp"
#include "deesn/lorenz96.hpp"
#include "deesn/tune.hpp"

namespace deesn {

// Values given on the command line; each one beats the config document.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::filesystem::path> out;
};

struct RunConfig {
  std::string experiment = "lorenz96";  // or "field-forecast"
  std::vector<ModelKind> models{ModelKind::kDeesn};
  ModelKind reference = ModelKind::kClimatology;
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  std::size_t threads = 0;

  Lorenz96Config simulation;
  SyntheticFieldConfig synthetic;
  LorenzExperimentOptions lorenz;
  FieldExperimentOptions field;

  // Empty paths mean "generate the data from the simulation/synthetic block".
  std::filesystem::path z_path;
  std::filesystem::path response_path;
  std::filesystem::path input_path;

  DeepEsnConfig esn;
  // Tuned hyperparameter files keyed by reservoir family ("qeesn" or "deesn").
  std::map<std::string, std::filesystem::path> tuned;
  std::optional<nlohmann::json> prior;
  GibbsConfig gibbs;
  GaConfig ga;
  CvScheme cv;
  int reduced_n_res = 30;
  bool per_layer_nu = false;
  LinearMode linear_mode = LinearMode::kDirect;
  int max_draws = 1000;

  // Effective settings after defaults, seeds and overrides; recorded in manifests.
  nlohmann::json to_json() const;
};

// Relative paths in the document resolve against base_dir. Unknown keys and
// invalid values raise ConfigError naming the offending field.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                           const CliOverrides& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const CliOverrides& overrides = {});

// "qeesn" for the single-layer quadratic kinds, "deesn" for the deep kinds.
std::string reservoir_family(ModelKind kind);

// Model settings for one kind, with tuned hyperparameters applied when a
// tuned file covers its family.
ModelSpec model_spec(const RunConfig& config, ModelKind kind);

ExperimentData load_experiment(const RunConfig& config);

// Each command writes into <out>/<verb>/ (fit: <out>/fit/<model>/) and leaves
// a manifest.json beside its outputs.
void cmd_simulate(const RunConfig& config);
void cmd_tune(const RunConfig& config);
void cmd_fit(const RunConfig& config);
void cmd_evaluate(const RunConfig& config);
void cmd_report(const RunConfig& config);

// 2 config or input data, 3 numeric failure, 4 I/O or unreadable file, 1 other.
int exit_code_for(const std::exception& e);

}  // namespace deesn
