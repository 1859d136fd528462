#include "deesn/cli.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "deesn/errors.hpp"
#include "deesn/forecast.hpp"
#include "deesn/manifest.hpp"
#include "deesn/parallel.hpp"
#include "deesn/stfield.hpp"

namespace deesn {

namespace fs = std::filesystem;
using nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) out.insert(it.key());
  return out;
}

const json& block_object(const json& doc, const std::string& name) {
  static const json empty = json::object();
  if (!doc.contains(name)) return empty;
  const json& b = doc.at(name);
  if (!b.is_object()) throw ConfigError(name + ": expected an object");
  return b;
}

void check_keys(const json& block, const std::string& name, const std::set<std::string>& allowed) {
  for (auto it = block.begin(); it != block.end(); ++it) {
    if (allowed.count(it.key()) == 0) throw ConfigError(name + "." + it.key() + ": unknown field");
  }
}

template <class T>
T field(const json& block, const std::string& name, const std::string& key, T fallback) {
  if (!block.contains(key)) return fallback;
  try {
    return block.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(name + "." + key + ": wrong type (got " + block.at(key).dump() + ")");
  }
}

// Parses a block through its own from_json, rejecting keys the type does not know.
template <class T>
T typed_block(const json& doc, const std::string& name, json extra_allowed = json::array()) {
  const json& b = block_object(doc, name);
  std::set<std::string> allowed = keys_of(T{}.to_json());
  for (const auto& k : extra_allowed) allowed.insert(k.get<std::string>());
  check_keys(b, name, allowed);
  try {
    return T::from_json(b);
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

json synthetic_json(const SyntheticFieldConfig& c) {
  return {{"n_times", c.n_times},       {"ny", c.ny},
          {"nx", c.nx},                 {"input_ny", c.input_ny},
          {"input_nx", c.input_nx},     {"lead", c.lead},
          {"first_year", c.first_year}, {"noise_sd", c.noise_sd},
          {"input_noise_sd", c.input_noise_sd}, {"seasonal_amplitude", c.seasonal_amplitude},
          {"seed", c.seed}};
}

SyntheticFieldConfig parse_synthetic(const json& b) {
  const std::string n = "synthetic";
  SyntheticFieldConfig c;
  check_keys(b, n, keys_of(synthetic_json(c)));
  c.n_times = field(b, n, "n_times", c.n_times);
  c.ny = field(b, n, "ny", c.ny);
  c.nx = field(b, n, "nx", c.nx);
  c.input_ny = field(b, n, "input_ny", c.input_ny);
  c.input_nx = field(b, n, "input_nx", c.input_nx);
  c.lead = field(b, n, "lead", c.lead);
  c.first_year = field(b, n, "first_year", c.first_year);
  c.noise_sd = field(b, n, "noise_sd", c.noise_sd);
  c.input_noise_sd = field(b, n, "input_noise_sd", c.input_noise_sd);
  c.seasonal_amplitude = field(b, n, "seasonal_amplitude", c.seasonal_amplitude);
  c.seed = field(b, n, "seed", c.seed);
  if (c.n_times < 24) throw ConfigError("synthetic.n_times must be >= 24");
  if (c.ny < 1 || c.nx < 1 || c.input_ny < 1 || c.input_nx < 1) throw ConfigError("synthetic: grid sizes must be >= 1");
  if (c.lead < 0) throw ConfigError("synthetic.lead must be >= 0");
  if (!(c.noise_sd >= 0.0) || !(c.input_noise_sd >= 0.0)) throw ConfigError("synthetic: noise SDs must be >= 0");
  return c;
}

void parse_split(const json& b, RunConfig& c) {
  const std::string n = "split";
  if (c.experiment == "lorenz96") {
    check_keys(b, n, {"holdout", "lead", "tau", "sigma2_z"});
    auto& o = c.lorenz;
    o.holdout = field(b, n, "holdout", o.holdout);
    o.lead = field(b, n, "lead", o.lead);
    o.tau = field(b, n, "tau", o.tau);
    o.sigma2_z = field(b, n, "sigma2_z", o.sigma2_z);
    if (o.holdout < 1) throw ConfigError("split.holdout must be >= 1");
    if (o.lead < 1) throw ConfigError("split.lead must be >= 1");
    if (o.tau < 1) throw ConfigError("split.tau must be >= 1");
    if (!(o.sigma2_z > 0.0)) throw ConfigError("split.sigma2_z must be > 0");
    return;
  }
  check_keys(b, n,
             {"holdout", "lead", "tau", "response_eofs", "response_eof_fraction", "nugget", "input_eofs", "seasonal",
              "score_months"});
  auto& o = c.field;
  o.holdout = field(b, n, "holdout", o.holdout);
  o.lead = field(b, n, "lead", o.lead);
  o.tau = field(b, n, "tau", o.tau);
  if (b.contains("response_eof_fraction") && !b.at("response_eof_fraction").is_null()) {
    o.response_eof_fraction = field(b, n, "response_eof_fraction", 0.0);
    if (!(*o.response_eof_fraction > 0.0 && *o.response_eof_fraction <= 1.0)) {
      throw ConfigError("split.response_eof_fraction must lie in (0, 1]");
    }
    if (!b.contains("response_eofs")) o.response_eofs.reset();
  }
  if (b.contains("response_eofs")) {
    if (b.at("response_eofs").is_null()) {
      o.response_eofs.reset();
    } else {
      o.response_eofs = field(b, n, "response_eofs", Index{0});
      if (*o.response_eofs < 1) throw ConfigError("split.response_eofs must be >= 1");
    }
  }
  if (!o.response_eofs && !o.response_eof_fraction) {
    throw ConfigError("split: one of response_eofs or response_eof_fraction is required");
  }
  o.nugget = field(b, n, "nugget", o.nugget);
  o.input_eofs = field(b, n, "input_eofs", o.input_eofs);
  o.seasonal = field(b, n, "seasonal", o.seasonal);
  o.score_months = field(b, n, "score_months", o.score_months);
  if (o.holdout < 1) throw ConfigError("split.holdout must be >= 1");
  if (o.lead < 1) throw ConfigError("split.lead must be >= 1");
  if (o.tau < 1) throw ConfigError("split.tau must be >= 1");
  if (!(o.nugget >= 0.0)) throw ConfigError("split.nugget must be >= 0");
  if (o.input_eofs < 1) throw ConfigError("split.input_eofs must be >= 1");
  for (int m : o.score_months) {
    if (m < 1 || m > 12) throw ConfigError("split.score_months entries must lie in 1..12");
  }
}

json split_json(const RunConfig& c) {
  if (c.experiment == "lorenz96") {
    const auto& o = c.lorenz;
    return {{"holdout", o.holdout}, {"lead", o.lead}, {"tau", o.tau}, {"sigma2_z", o.sigma2_z}};
  }
  const auto& o = c.field;
  return {{"holdout", o.holdout},
          {"lead", o.lead},
          {"tau", o.tau},
          {"response_eofs", o.response_eofs ? json(*o.response_eofs) : json(nullptr)},
          {"response_eof_fraction", o.response_eof_fraction ? json(*o.response_eof_fraction) : json(nullptr)},
          {"nugget", o.nugget},
          {"input_eofs", o.input_eofs},
          {"seasonal", o.seasonal},
          {"score_months", o.score_months}};
}

ModelKind parse_model_field(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a model name");
  try {
    return parse_model(v.get<std::string>());
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void apply_threads(const RunConfig& c) { set_max_threads(c.threads); }

json base_manifest(const RunConfig& c, const std::string& command) {
  json m = make_manifest(c.to_json());
  m["command"] = command;
  m["seeds"] = {{"seed", c.seed},
                {"simulation", c.simulation.seed},
                {"synthetic", c.synthetic.seed},
                {"esn_master", c.esn.master_seed},
                {"gibbs", c.gibbs.seed},
                {"ga", c.ga.seed}};
  return m;
}

// Data-scale SD of a Gaussian or log-Gaussian cell.
MatrixXd data_scale_sd(const DistributionFit& d, CrpsFamily family) {
  if (family == CrpsFamily::kGaussian) return d.sigma;
  const auto s2 = d.sigma.array().square();
  return ((s2.exp() - 1.0) * (2.0 * d.mu.array() + s2).exp()).sqrt().matrix();
}

CubeSummary forecast_summary(const ModelForecast& f) {
  CubeSummary s;
  if (f.draws.size() >= 2) {
    s = summarize(f.draws);
  } else {
    const double z = 1.959963984540054;
    s.sd = data_scale_sd(f.dist, f.family);
    s.q025 = f.dist.mu - z * f.dist.sigma;
    s.q975 = f.dist.mu + z * f.dist.sigma;
    if (f.family == CrpsFamily::kLogGaussian) {
      s.q025 = s.q025.array().exp().matrix();
      s.q975 = s.q975.array().exp().matrix();
    }
  }
  s.mean = f.mean;
  return s;
}

std::string family_name(CrpsFamily f) { return f == CrpsFamily::kGaussian ? "gaussian" : "log-gaussian"; }

std::vector<ModelForecast> run_models(const RunConfig& config, const ExperimentData& data,
                                      const std::vector<ModelKind>& kinds) {
  const PreparedData prepared = data.prepare();
  std::vector<ModelForecast> out;
  out.reserve(kinds.size());
  for (ModelKind k : kinds) out.push_back(run_model(model_spec(config, k), data, prepared));
  return out;
}

json model_record(const ModelForecast& f) {
  json r = f.info;
  r["model"] = f.model;
  r["crps_family"] = family_name(f.family);
  r["draws"] = f.draws.size();
  return r;
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["models"] = json::array();
  for (ModelKind k : models) j["models"].push_back(model_name(k));
  j["reference"] = model_name(reference);
  j["seed"] = seed;
  j["out"] = out.generic_string();
  if (experiment == "lorenz96") {
    if (z_path.empty()) {
      j["simulation"] = simulation.to_json();
      j["simulation"]["length"] = simulation.length;
      j["simulation"]["seed"] = simulation.seed;
    } else {
      j["data"] = {{"z", z_path.generic_string()}};
    }
  } else if (response_path.empty()) {
    j["synthetic"] = synthetic_json(synthetic);
  } else {
    j["data"] = {{"response", response_path.generic_string()}, {"input", input_path.generic_string()}};
  }
  j["split"] = split_json(*this);
  j["esn"] = esn.to_json();
  json t = json::object();
  for (const auto& [fam, p] : tuned) t[fam] = p.generic_string();
  j["tuned"] = t;
  j["prior"] = prior ? *prior : json(nullptr);
  j["gibbs"] = gibbs.to_json();
  j["ga"] = ga.to_json();
  j["cv"] = {{"validation_fraction", cv.validation_fraction}, {"validation_rows", cv.validation_rows}};
  j["tune"] = {{"reduced_n_res", reduced_n_res}, {"per_layer_nu", per_layer_nu}};
  j["linear_mode"] = linear_mode == LinearMode::kDirect ? "direct" : "iterated";
  j["max_draws"] = max_draws;
  return j;
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir, const CliOverrides& overrides) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  check_keys(doc, "config",
             {"experiment", "model", "models", "reference", "seed", "out", "threads", "L", "lead", "simulation",
              "synthetic", "data", "split", "esn", "tuned", "prior", "gibbs", "ga", "cv", "tune", "linear_mode",
              "max_draws"});
  RunConfig c;
  const std::string top = "config";
  c.experiment = field(doc, top, "experiment", c.experiment);
  if (c.experiment != "lorenz96" && c.experiment != "field-forecast") {
    throw ConfigError("config.experiment: expected lorenz96 or field-forecast, got " + c.experiment);
  }

  if (doc.contains("model") && doc.contains("models")) throw ConfigError("config: give either model or models");
  if (doc.contains("model")) c.models = {parse_model_field(doc.at("model"), "config.model")};
  if (doc.contains("models")) {
    const json& ms = doc.at("models");
    if (!ms.is_array() || ms.empty()) throw ConfigError("config.models: expected a non-empty array");
    c.models.clear();
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const ModelKind k = parse_model_field(ms[i], "config.models[" + std::to_string(i) + "]");
      for (ModelKind seen : c.models) {
        if (seen == k) throw ConfigError("config.models: duplicate " + model_name(k));
      }
      c.models.push_back(k);
    }
  }
  if (doc.contains("reference")) c.reference = parse_model_field(doc.at("reference"), "config.reference");

  // Seed precedence: --seed beats every block; otherwise a block's own seed
  // beats the top-level seed.
  c.seed = overrides.seed ? *overrides.seed : field(doc, top, "seed", c.seed);
  const bool force_seed = overrides.seed.has_value();
  auto seed_for = [&](const std::string& block, const char* key) {
    const json& b = block_object(doc, block);
    return (!force_seed && b.contains(key)) ? b.at(key).get<std::uint64_t>() : c.seed;
  };

  if (overrides.out) {
    c.out = *overrides.out;
  } else {
    c.out = resolve(base_dir, field(doc, top, "out", std::string("out")));
  }
  c.threads = overrides.threads ? *overrides.threads : field(doc, top, "threads", c.threads);

  {
    const json& b = block_object(doc, "simulation");
    c.simulation = typed_block<Lorenz96Config>(doc, "simulation", json{"length", "seed", "keep_latents"});
    c.simulation.length = field(b, "simulation", "length", c.simulation.length);
    c.simulation.keep_latents = field(b, "simulation", "keep_latents", c.simulation.keep_latents);
    if (b.contains("seed")) field(b, "simulation", "seed", std::uint64_t{0});
    c.simulation.seed = seed_for("simulation", "seed");
    try {
      c.simulation.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("simulation: ") + e.what());
    }
  }
  c.synthetic = parse_synthetic(block_object(doc, "synthetic"));
  c.synthetic.seed = seed_for("synthetic", "seed");

  const json& data = block_object(doc, "data");
  check_keys(data, "data", {"z", "response", "input"});
  if (data.contains("z")) c.z_path = resolve(base_dir, field(data, "data", "z", std::string()));
  if (data.contains("response")) c.response_path = resolve(base_dir, field(data, "data", "response", std::string()));
  if (data.contains("input")) c.input_path = resolve(base_dir, field(data, "data", "input", std::string()));
  if (c.experiment == "lorenz96" && (data.contains("response") || data.contains("input"))) {
    throw ConfigError("data: lorenz96 takes data.z, not response/input");
  }
  if (c.experiment == "field-forecast") {
    if (data.contains("z")) throw ConfigError("data: field-forecast takes data.response and data.input, not z");
    if (c.response_path.empty() != c.input_path.empty()) {
      throw ConfigError("data: response and input must be given together");
    }
  }

  parse_split(block_object(doc, "split"), c);
  if (doc.contains("lead")) {
    const Index lead = field(doc, top, "lead", Index{0});
    if (lead < 1) throw ConfigError("config.lead must be >= 1");
    c.lorenz.lead = lead;
    c.field.lead = lead;
  }

  {
    // The top-level L is shorthand for esn.L and must agree with it.
    json with_depth = doc;
    if (doc.contains("L")) {
      const int L = field(doc, top, "L", 1);
      json& esn = with_depth["esn"];
      if (esn.is_null()) esn = json::object();
      if (esn.is_object() && esn.contains("L") && esn.at("L") != L) {
        throw ConfigError("config.L: disagrees with esn.L");
      }
      if (esn.is_object()) esn["L"] = L;
    }
    c.esn = typed_block<DeepEsnConfig>(with_depth, "esn");
  }
  c.esn.master_seed = seed_for("esn", "master_seed");
  try {
    c.esn.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("esn: ") + e.what());
  }

  if (doc.contains("tuned")) {
    const json& t = doc.at("tuned");
    if (t.is_string()) {
      const fs::path p = resolve(base_dir, t.get<std::string>());
      c.tuned["qeesn"] = p;
      c.tuned["deesn"] = p;
    } else if (t.is_object()) {
      check_keys(t, "tuned", {"qeesn", "deesn"});
      for (auto it = t.begin(); it != t.end(); ++it) {
        c.tuned[it.key()] = resolve(base_dir, field(t, "tuned", it.key(), std::string()));
      }
    } else {
      throw ConfigError("tuned: expected a path or an object keyed by qeesn/deesn");
    }
  }

  if (doc.contains("prior")) {
    const json& p = doc.at("prior");
    if (!p.is_object()) throw ConfigError("prior: expected an object");
    check_keys(p, "prior", keys_of(SsvsPrior{}.to_json()));
    try {
      SsvsPrior::from_json(p, SsvsPrior::defaults_for_layers(c.esn.L)).validate(c.esn.L);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("prior: ") + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(std::string("prior: ") + e.what());
    }
    c.prior = p;
  }
  for (ModelKind k : c.models) {
    if (is_bayesian(k) && !c.prior) {
      throw ConfigError("prior: required for model " + model_name(k) + " (an empty object selects the defaults)");
    }
  }

  c.gibbs = typed_block<GibbsConfig>(doc, "gibbs");
  c.gibbs.seed = seed_for("gibbs", "seed");
  c.ga = typed_block<GaConfig>(doc, "ga");
  c.ga.seed = seed_for("ga", "seed");

  const json& cv = block_object(doc, "cv");
  check_keys(cv, "cv", {"validation_fraction", "validation_rows"});
  c.cv.validation_fraction = field(cv, "cv", "validation_fraction", c.cv.validation_fraction);
  c.cv.validation_rows = field(cv, "cv", "validation_rows", c.cv.validation_rows);
  if (!(c.cv.validation_fraction > 0.0 && c.cv.validation_fraction < 1.0)) {
    throw ConfigError("cv.validation_fraction must lie in (0, 1)");
  }
  if (c.cv.validation_rows < 0) throw ConfigError("cv.validation_rows must be >= 0");

  const json& tune = block_object(doc, "tune");
  check_keys(tune, "tune", {"reduced_n_res", "per_layer_nu"});
  c.reduced_n_res = field(tune, "tune", "reduced_n_res", c.reduced_n_res);
  c.per_layer_nu = field(tune, "tune", "per_layer_nu", c.per_layer_nu);
  if (c.reduced_n_res < 1) throw ConfigError("tune.reduced_n_res must be >= 1");

  const std::string mode = field(doc, top, "linear_mode", std::string("direct"));
  if (mode == "direct") {
    c.linear_mode = LinearMode::kDirect;
  } else if (mode == "iterated") {
    c.linear_mode = LinearMode::kIterated;
  } else {
    throw ConfigError("config.linear_mode: expected direct or iterated, got " + mode);
  }
  c.max_draws = field(doc, top, "max_draws", c.max_draws);
  if (c.max_draws < 1) throw ConfigError("config.max_draws must be >= 1");
  return c;
}

RunConfig load_run_config(const fs::path& path, const CliOverrides& overrides) {
  const json doc = load_json(path);
  return parse_run_config(doc, path.parent_path(), overrides);
}

std::string reservoir_family(ModelKind kind) {
  if (!is_reservoir(kind)) throw ConfigError(model_name(kind) + " has no reservoir");
  return (kind == ModelKind::kQeesn || kind == ModelKind::kBqeesn) ? "qeesn" : "deesn";
}

ModelSpec model_spec(const RunConfig& config, ModelKind kind) {
  ModelSpec spec;
  spec.kind = kind;
  spec.esn = config.esn;
  spec.gibbs = config.gibbs;
  spec.linear_mode = config.linear_mode;
  spec.max_draws = config.max_draws;
  if (is_reservoir(kind)) {
    const std::string fam = reservoir_family(kind);
    const auto it = config.tuned.find(fam);
    if (it != config.tuned.end()) {
      const json t = load_json(it->second);
      if (t.contains(fam)) {
        spec.esn = Candidate::from_json(t.at(fam).at("candidate")).apply(spec.esn);
      } else if (t.contains("candidate")) {
        spec.esn = Candidate::from_json(t.at("candidate")).apply(spec.esn);
      } else {
        throw ConfigError("tuned: " + it->second.string() + " has no entry for " + fam);
      }
    }
    spec.esn = reservoir_config(kind, spec.esn);
  }
  if (is_bayesian(kind) && config.prior) {
    spec.prior = SsvsPrior::from_json(*config.prior, SsvsPrior::defaults_for_layers(spec.esn.L));
  }
  return spec;
}

ExperimentData load_experiment(const RunConfig& config) {
  if (config.experiment == "lorenz96") {
    const SpatioTemporalField z =
        config.z_path.empty() ? output_field(simulate(config.simulation)) : load_field(config.z_path);
    return lorenz_experiment(z, config.lorenz);
  }
  if (config.response_path.empty()) {
    const SyntheticField s = synthetic_seasonal_field(config.synthetic);
    return field_experiment(s.response, s.input, config.field);
  }
  return field_experiment(load_field(config.response_path), load_field(config.input_path), config.field);
}

void cmd_simulate(const RunConfig& config) {
  apply_threads(config);
  const fs::path dir = config.out / "simulate";
  json manifest = base_manifest(config, "simulate");
  if (config.experiment == "lorenz96") {
    const Lorenz96Output out = simulate(config.simulation);
    save_simulation(dir, config.simulation, out);
    manifest["files"] = out.x_latent.size() > 0 ? json{"z.csv", "x.csv", "y.csv"} : json{"z.csv"};
    manifest["shape"] = {out.z.rows(), out.z.cols()};
  } else {
    const SyntheticField s = synthetic_seasonal_field(config.synthetic);
    FieldMetadata meta;
    meta.extra["kind"] = "synthetic-response";
    save_field(dir / "response.csv", s.response, meta);
    meta.extra["kind"] = "synthetic-input";
    save_field(dir / "input.csv", s.input, meta);
    manifest["files"] = {"response.csv", "input.csv"};
    manifest["shape"] = {{"response", {s.response.n_times(), s.response.n_z()}},
                         {"input", {s.input.n_times(), s.input.n_z()}}};
  }
  save_json(dir / "manifest.json", manifest);
}

void cmd_tune(const RunConfig& config) {
  apply_threads(config);
  std::vector<std::string> families;
  for (ModelKind k : config.models) {
    if (!is_reservoir(k)) continue;
    const std::string f = reservoir_family(k);
    if (std::find(families.begin(), families.end(), f) == families.end()) families.push_back(f);
  }
  if (families.empty()) throw ConfigError("config.models: tune needs at least one reservoir model");

  const ExperimentData data = load_experiment(config);
  const TuneData td = data.tune_data();
  const fs::path dir = config.out / "tune";
  json tuned = json::object();
  json manifest = base_manifest(config, "tune");
  for (const std::string& fam : families) {
    const ModelKind kind = fam == "qeesn" ? ModelKind::kQeesn : ModelKind::kDeesn;
    const DeepEsnConfig base = reservoir_config(kind, config.esn);
    const SearchSpace space = SearchSpace::for_layers(base.L, config.per_layer_nu);
    const TuneResult r = tune_model(td, base, space, config.ga, config.cv, config.reduced_n_res);
    tuned[fam] = {{"candidate", r.best.to_json()},
                  {"validation_mspe", -r.fitness},
                  {"evaluations", r.ga.evaluations},
                  {"config", r.config.to_json()}};
    write_file_atomically(dir / ("search_log_" + fam + ".csv"), search_log_csv(r.ga, space));
    manifest["files"].push_back("search_log_" + fam + ".csv");
  }
  save_json(dir / "tuned.json", tuned);
  manifest["files"].push_back("tuned.json");
  manifest["validation_rows"] = td.n_train - config.cv.fit_rows(td.n_train);
  save_json(dir / "manifest.json", manifest);
}

void cmd_fit(const RunConfig& config) {
  apply_threads(config);
  const ExperimentData data = load_experiment(config);
  const std::vector<ModelForecast> fits = run_models(config, data, config.models);
  const auto times = data.test_times();
  const GridSpec& grid = data.response.grid();
  for (const ModelForecast& f : fits) {
    const fs::path dir = config.out / "fit" / f.model;
    json manifest = base_manifest(config, "fit");
    manifest["model"] = model_record(f);
    json files = {"mean.csv", "sd.csv", "q025.csv", "q975.csv", "crps_mu.csv", "crps_sigma.csv"};
    FieldMetadata meta;
    meta.extra["statistic"] = "crps_mu";
    meta.extra["family"] = family_name(f.family);
    save_field(dir / "crps_mu.csv", SpatioTemporalField(grid, times, f.dist.mu), meta);
    meta.extra["statistic"] = "crps_sigma";
    save_field(dir / "crps_sigma.csv", SpatioTemporalField(grid, times, f.dist.sigma), meta);
    if (!f.inclusion.empty()) {
      write_file_atomically(dir / "inclusion.csv", f.inclusion);
      files.push_back("inclusion.csv");
    }
    manifest["files"] = files;
    save_summary(dir, forecast_summary(f), grid, times, manifest);
  }
}

void cmd_evaluate(const RunConfig& config) {
  apply_threads(config);
  const ExperimentData data = load_experiment(config);
  std::vector<ModelKind> kinds = config.models;
  const bool ref_listed = std::find(kinds.begin(), kinds.end(), config.reference) != kinds.end();
  if (!ref_listed) kinds.push_back(config.reference);
  std::vector<ModelForecast> fits = run_models(config, data, kinds);
  const ModelForecast reference = ref_listed ? fits[static_cast<std::size_t>(
                                                   std::find(kinds.begin(), kinds.end(), config.reference) -
                                                   kinds.begin())]
                                             : fits.back();
  if (!ref_listed) fits.pop_back();

  const std::vector<ScoredModel> scored = score_models(fits, reference, data);
  const fs::path dir = config.out / "evaluate";
  std::vector<ScoreRow> rows;
  json manifest = base_manifest(config, "evaluate");
  manifest["reference"] = reference.model;
  manifest["crps_compared"] = "mean";
  manifest["scored_rows"] = data.score_rows().size();
  json files = {"scores.csv"};
  for (std::size_t i = 0; i < scored.size(); ++i) {
    rows.push_back(scored[i].row);
    const std::string name = "skill_" + scored[i].row.model + ".csv";
    FieldMetadata meta;
    meta.extra["statistic"] = "skill_score";
    meta.extra["reference"] = reference.model;
    save_field(dir / name,
               SpatioTemporalField(data.response.grid(), {"SS"}, scored[i].skill.transpose()), meta);
    files.push_back(name);
    json rec = model_record(fits[i]);
    rec["mspe"] = scored[i].row.mspe;
    rec["crps_mean"] = *scored[i].row.crps_mean;
    rec["crps_sum"] = *scored[i].row.crps_sum;
    rec["pct_ss_positive"] = *scored[i].row.pct_ss_positive;
    manifest["models"].push_back(rec);
  }
  save_scores(dir / "scores.csv", rows);
  manifest["files"] = files;
  save_json(dir / "manifest.json", manifest);
}

void cmd_report(const RunConfig& config) {
  apply_threads(config);
  const ExperimentData data = load_experiment(config);
  const std::vector<ModelForecast> fits = run_models(config, data, config.models);
  const fs::path dir = config.out / "report";
  json manifest = base_manifest(config, "report");
  json files = json::array();
  for (const ModelForecast& f : fits) {
    const std::string name = "bands_" + f.model + ".csv";
    write_file_atomically(dir / name, band_csv(f, data));
    files.push_back(name);
    manifest["models"].push_back(model_record(f));
  }
  manifest["band"] = "95% point-wise";
  manifest["files"] = files;
  save_json(dir / "manifest.json", manifest);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e) != nullptr) return 4;
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const DataError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const IoError*>(&e) != nullptr) return 4;
  return 1;
}

}  // namespace deesn
