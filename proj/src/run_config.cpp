#include "vidistill/run_config.hpp"

#include <cstdlib>
#include <fstream>

namespace vidistill {

namespace {

using nlohmann::json;

json without_seed(json j) {
  j.erase("seed");
  return j;
}

json codec_json(const CodecTrainOptions& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}};
}

json experiment_json(const ExperimentConfig& c) {
  return {{"seeds", c.seeds},
          {"workers", c.workers},
          {"codec_stride", c.codec_stride},
          {"redundancy_videos", c.redundancy_videos}};
}

json checks_json(const CheckConfig& c) {
  return {{"gumbel_vectors", c.gumbel_vectors},       {"gumbel_categories", c.gumbel_categories},
          {"gumbel_trials", c.gumbel_trials},         {"gumbel_logit_range", c.gumbel_logit_range},
          {"gap_instances", c.gap_instances},         {"gap_draws", c.gap_draws},
          {"gap_taus", c.gap_taus},                   {"grad_step", c.grad_step},
          {"grad_tolerance", c.grad_tolerance}};
}

bool same_kind(const json& want, const json& got) {
  if (want.is_number_unsigned()) return got.is_number_unsigned() || (got.is_number_integer() && got.get<std::int64_t>() >= 0);
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_number()) return got.is_number();
  return want.type() == got.type();
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Overlays `given` on `defaults`, refusing keys the defaults do not have.
void overlay(json& defaults, const json& given, const std::string& path) {
  if (!given.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "config: " + (path.empty() ? std::string("document") : path) + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const auto at = join(path, key);
    if (!defaults.contains(key)) throw ConfigError(at, "config: unknown key '" + at + "'");
    auto& slot = defaults[key];
    if (slot.is_object()) {
      overlay(slot, value, at);
    } else if (slot.is_array()) {
      if (!value.is_array()) throw ConfigError(at, "config: '" + at + "' must be an array");
      for (const auto& v : value) {
        if (!v.is_number()) throw ConfigError(at, "config: '" + at + "' must hold numbers");
      }
      slot = value;
    } else {
      if (!same_kind(slot, value)) throw ConfigError(at, "config: '" + at + "' has the wrong type");
      slot = value;
    }
  }
}

template <typename F>
void section(const std::string& name, F&& parse) {
  try {
    parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(name, e.what());
  }
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  generator.seed = s;
  codec.seed = derive_seed(s, {1});
  distill.seed = s;
  eval.seed = s;
}

void RunConfig::validate() const {
  section("generator", [&] { generator.validate(); });
  section("distill", [&] { distill.validate(); });
  section("eval", [&] { eval.validate(); });
  if (codec.batch_size < 1) throw ConfigError("codec.batch_size", "config: codec.batch_size must be at least 1");
  if (!(codec.lr > 0.0)) throw ConfigError("codec.lr", "config: codec.lr must be positive");
  if (distill.k > generator.frames) throw ConfigError("distill.k", "config: distill.k exceeds generator.frames");
  if (distill.budget_per_class > generator.train_per_class) {
    throw ConfigError("distill.budget_per_class", "config: distill.budget_per_class exceeds generator.train_per_class");
  }
  if (experiment.seeds < 1) throw ConfigError("experiment.seeds", "config: experiment.seeds must be at least 1");
  if (experiment.workers < 1) throw ConfigError("experiment.workers", "config: experiment.workers must be at least 1");
  if (experiment.codec_stride < 1) throw ConfigError("experiment.codec_stride", "config: experiment.codec_stride must be at least 1");
  if (experiment.redundancy_videos == 1) {
    throw ConfigError("experiment.redundancy_videos", "config: experiment.redundancy_videos must be 0 or at least 2");
  }
  if (checks.gumbel_categories < 2) throw ConfigError("checks.gumbel_categories", "config: checks.gumbel_categories must be at least 2");
  if (checks.gumbel_trials < 1) throw ConfigError("checks.gumbel_trials", "config: checks.gumbel_trials must be at least 1");
  if (checks.gap_draws < 1) throw ConfigError("checks.gap_draws", "config: checks.gap_draws must be at least 1");
  for (const double tau : checks.gap_taus) {
    if (!(tau > 0.0)) throw ConfigError("checks.gap_taus", "config: checks.gap_taus must be positive");
  }
  if (!(checks.grad_step > 0.0)) throw ConfigError("checks.grad_step", "config: checks.grad_step must be positive");
}

nlohmann::json RunConfig::to_json() const {
  return {{"schema_version", kSchemaVersion},
          {"seed", seed},
          {"output_dir", output_dir},
          {"generator", without_seed(json(generator))},
          {"codec", codec_json(codec)},
          {"distill", without_seed(json(distill))},
          {"eval", without_seed(json(eval))},
          {"experiment", experiment_json(experiment)},
          {"checks", checks_json(checks)}};
}

RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config: document must be an object");
  if (!j.contains("schema_version")) throw ConfigError("schema_version", "config: schema_version is required");
  if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != RunConfig::kSchemaVersion) {
    throw ConfigError("schema_version", "config: unsupported schema_version " + j.at("schema_version").dump());
  }
  json merged = RunConfig().to_json();
  overlay(merged, j, "");

  RunConfig c;
  const auto seed = merged.at("seed").get<std::uint64_t>();
  c.output_dir = merged.at("output_dir").get<std::string>();
  section("generator", [&] {
    auto g = merged.at("generator");
    g["seed"] = seed;
    c.generator = g.get<GenConfig>();
  });
  section("codec", [&] {
    const auto& s = merged.at("codec");
    c.codec.epochs = s.at("epochs");
    c.codec.batch_size = s.at("batch_size");
    c.codec.lr = s.at("lr");
  });
  section("distill", [&] {
    auto d = merged.at("distill");
    d["seed"] = seed;
    c.distill = d.get<DistillConfig>();
  });
  section("eval.arch", [&] {
    auto e = merged.at("eval");
    e["seed"] = seed;
    c.eval = e.get<EvalConfig>();
  });
  const auto& x = merged.at("experiment");
  c.experiment.seeds = x.at("seeds");
  c.experiment.workers = x.at("workers");
  c.experiment.codec_stride = x.at("codec_stride");
  c.experiment.redundancy_videos = x.at("redundancy_videos");
  const auto& k = merged.at("checks");
  c.checks.gumbel_vectors = k.at("gumbel_vectors");
  c.checks.gumbel_categories = k.at("gumbel_categories");
  c.checks.gumbel_trials = k.at("gumbel_trials");
  c.checks.gumbel_logit_range = k.at("gumbel_logit_range");
  c.checks.gap_instances = k.at("gap_instances");
  c.checks.gap_draws = k.at("gap_draws");
  c.checks.gap_taus = k.at("gap_taus").get<std::vector<double>>();
  c.checks.grad_step = k.at("grad_step");
  c.checks.grad_tolerance = k.at("grad_tolerance");
  c.apply_seed(seed);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("config: ") + e.what());
  }
  return parse_run_config(j);
}

std::filesystem::path resolve_output_dir(const RunConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("VIDISTILL_OUT"); env != nullptr && *env != '\0') return env;
  return "vidistill_out";
}

}  // namespace vidistill
