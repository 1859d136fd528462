#include <CLI11.hpp>

#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "deesn/cli.hpp"
#include "deesn/errors.hpp"
#include "deesn/manifest.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble echo state network forecasting toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", deesn::kVersionString);

  Flags flags;
  const std::map<std::string, std::pair<std::string, std::function<void(const deesn::RunConfig&)>>> verbs = {
      {"simulate", {"Write a Lorenz-96 dataset or the synthetic seasonal fields", deesn::cmd_simulate}},
      {"tune", {"Genetic search over reservoir hyperparameters", deesn::cmd_tune}},
      {"fit", {"Fit models and write forecast summaries", deesn::cmd_fit}},
      {"evaluate", {"Score models and write skill maps", deesn::cmd_evaluate}},
      {"report", {"Write forecast-vs-truth bands for plotting", deesn::cmd_report}},
  };
  for (const auto& [name, verb] : verbs) {
    CLI::App* sub = app.add_subcommand(name, verb.first);
    sub->add_option("--config", flags.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Seed for every random stream (beats the config)");
    sub->add_option("--threads", flags.threads, "Worker thread cap (0: all cores)");
    sub->add_option("--out", flags.out, "Output directory (beats the config)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    deesn::CliOverrides overrides;
    overrides.seed = flags.seed;
    overrides.threads = flags.threads;
    if (flags.out) overrides.out = *flags.out;
    const deesn::RunConfig config = deesn::load_run_config(flags.config, overrides);
    for (const auto& [name, verb] : verbs) {
      if (app.got_subcommand(name)) verb.second(config);
    }
  } catch (const std::exception& e) {
    std::cerr << "deesn: " << e.what() << '\n';
    return deesn::exit_code_for(e);
  }
  return 0;
}
