#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vidistill/checks.hpp"
#include "vidistill/digest.hpp"
#include "vidistill/experiment.hpp"
#include "vidistill/run_config.hpp"
#include "vidistill/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace vidistill;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "RunConfig JSON (defaults when omitted)");
  cmd->add_option("-o,--out", c.out, "Output root; overrides output_dir");
  cmd->add_option("-s,--seed", c.seed, "Overrides the top-level seed");
}

RunConfig resolve(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (!c.out.empty()) config.output_dir = c.out;
  if (c.seed) config.apply_seed(*c.seed);
  return config;
}

void print_error(const std::string& type, const std::string& message, const std::string& key = {}) {
  json err = {{"status", "error"}, {"type", type}, {"message", message}};
  if (!key.empty()) err["key"] = key;
  std::cerr << err.dump() << std::endl;
}

void print_ok(const std::string& command, const fs::path& dir, json extra = json::object()) {
  extra["status"] = "ok";
  extra["command"] = command;
  extra["output"] = dir.string();
  std::cout << extra.dump() << std::endl;
}

std::vector<fs::path> codec_files(const Layout& layout) {
  return {fs::path(layout.codec_stem()).concat(".vct"), fs::path(layout.codec_stem()).concat(".json")};
}

void require_dir(const fs::path& dir, const std::string& what) {
  if (!fs::exists(dir)) throw std::runtime_error("missing artifact: " + what + " at " + dir.string());
}

int cmd_gen_data(const RunConfig& config, const Layout& layout, RunLog& log) {
  ensure_dataset(config, layout, log);
  print_ok("gen-data", layout.data());
  return kExitOk;
}

int cmd_pretrain_codec(const RunConfig& config, const Layout& layout, RunLog& log) {
  require_dir(layout.data(), "dataset");
  const auto train = load_split(layout.data(), Split::Train);
  log.line("codec: pretraining");
  const auto codec = pretrain_frozen_codec(config, train);
  codec.save(layout.codec_stem());
  write_run_record(layout.codec_dir(), config, "pretrain-codec", codec_files(layout));
  print_ok("pretrain-codec", layout.codec_dir(), {{"digest", codec.digest()}, {"train_mse", codec.train_mse()}});
  return kExitOk;
}

int cmd_distill(const RunConfig& config, const Layout& layout, RunLog& log) {
  require_dir(layout.data(), "dataset");
  require_dir(layout.codec_dir(), "codec");
  const auto train = load_split(layout.data(), Split::Train);
  const auto codec = load_frozen_codec(layout);
  log.line("distill: seed " + std::to_string(config.seed));
  const auto outcome = run_distillation(train, codec, config.distill, [&](const TrainingLogEntry& e, const DistillState&) {
    if (e.iteration % 50 == 0) log.line("distill: iteration " + std::to_string(e.iteration) + " loss " + std::to_string(e.loss));
  });
  if (outcome.codec_digest_before != outcome.codec_digest_after) throw std::runtime_error("codec changed during distillation");
  const auto dir = layout.distilled(config.seed);
  outcome.dataset.save(dir);
  save_tensors(dir / "classifier.vct", outcome.state.classifier.params);
  write_text(dir / "training_log.csv", training_log_csv(outcome.log));
  const std::vector<fs::path> files{dir / "distilled.vct", dir / "scorer.vct", dir / "distilled.json",
                                    dir / "classifier.vct", dir / "training_log.csv"};
  write_run_record(dir, config, "distill", files);
  print_ok("distill", dir, {{"records", outcome.dataset.records.size()}, {"codec_digest", outcome.codec_digest_after}});
  return kExitOk;
}

DistilledDataset load_matching_distilled(const Layout& layout, const Codec& codec, std::uint64_t seed) {
  const auto dir = layout.distilled(seed);
  require_dir(dir, "distilled dataset");
  auto distilled = DistilledDataset::load(dir);
  if (distilled.codec_digest != codec.digest()) {
    throw std::runtime_error("digest mismatch: distilled dataset was made with codec " + distilled.codec_digest +
                             ", found " + codec.digest());
  }
  return distilled;
}

int write_eval(const RunConfig& config, const fs::path& dir, const std::string& command, const MethodRuns& runs) {
  const std::vector<MethodRuns> all{runs};
  write_text(dir / "results.csv", results_csv(all));
  write_json(dir / "summary.json", {{"schema_version", RunConfig::kSchemaVersion},
                                    {"seed", config.seed},
                                    {"methods", summarize_methods(all)}});
  const std::vector<fs::path> files{dir / "results.csv", dir / "summary.json"};
  write_run_record(dir, config, command, files);
  const auto s = summarize(runs.accuracies);
  print_ok(command, dir, {{"method", runs.method}, {"mean", s.mean}, {"std", s.std}});
  return kExitOk;
}

int cmd_eval(const RunConfig& config, const Layout& layout, RunLog& log) {
  require_dir(layout.data(), "dataset");
  require_dir(layout.codec_dir(), "codec");
  const auto test = load_split(layout.data(), Split::Test);
  const auto codec = load_frozen_codec(layout);
  const auto distilled = load_matching_distilled(layout, codec, config.seed);
  log.line("eval: distilled seed " + std::to_string(config.seed));
  const auto runs = evaluate_distilled(config, distilled, codec, test, config.seed);
  return write_eval(config, layout.eval_dir() / ("distilled_seed_" + std::to_string(config.seed)), "eval", runs);
}

int cmd_baseline(const RunConfig& config, const Layout& layout, RunLog& log, const std::string& method) {
  require_dir(layout.data(), "dataset");
  const auto train = load_split(layout.data(), Split::Train);
  const auto test = load_split(layout.data(), Split::Test);
  std::optional<DistilledDataset> matched;
  if (method == "uniform" || method == "pixel_diff" || method == "first_k") {
    require_dir(layout.codec_dir(), "codec");
    matched = load_matching_distilled(layout, load_frozen_codec(layout), config.seed);
  }
  log.line("baseline: " + method + " seed " + std::to_string(config.seed));
  const auto runs = evaluate_baseline(config, method, train, test, config.seed, matched ? &*matched : nullptr);
  return write_eval(config, layout.eval_dir() / (method + "_seed_" + std::to_string(config.seed)), "baseline", runs);
}

int cmd_analyze(const RunConfig& config, const Layout& layout, RunLog& log, std::optional<std::size_t> video,
                const std::string& split_name) {
  require_dir(layout.data(), "dataset");
  const auto train = load_split(layout.data(), Split::Train);
  std::vector<fs::path> files;
  log.line("analyze: redundancy");
  const auto summary = write_redundancy(train, config, layout.analysis(), files);
  json extra = {{"redundancy", summary}};
  if (video) {
    const auto split = parse_split(split_name);
    const auto scorer = DistilledDataset::load(layout.distilled(config.seed)).scorer;
    const auto set = split == Split::Train ? train : load_split(layout.data(), Split::Test);
    const auto path = layout.analysis() / ("logits_" + split_name + "_" + std::to_string(*video) + ".csv");
    write_text(path, logits_csv(scorer, set, *video));
    files.push_back(path);
    extra["logits"] = path.string();
  }
  write_run_record(layout.analysis(), config, "analyze", files);
  print_ok("analyze", layout.analysis(), extra);
  return kExitOk;
}

int cmd_gumbel_check(const RunConfig& config, const Layout& layout) {
  const auto r = gumbel_check(config.checks, config.seed);
  const auto dir = layout.checks();
  write_text(dir / "gumbel_frequency.csv", r.frequency_csv);
  write_text(dir / "gumbel_gap.csv", r.gap_csv);
  const bool fidelity = r.max_deviation <= 0.01;
  const json verdict = {{"max_abs_deviation", r.max_deviation},
                        {"frequency_within_0_01", fidelity},
                        {"gap_taus", config.checks.gap_taus},
                        {"mean_gaps", r.mean_gaps},
                        {"mean_gap_nonincreasing", r.gaps_nonincreasing()},
                        {"monotone_instances", r.monotone_instances}};
  write_json(dir / "gumbel_check.json", verdict);
  const std::vector<fs::path> files{dir / "gumbel_frequency.csv", dir / "gumbel_gap.csv", dir / "gumbel_check.json"};
  write_run_record(dir, config, "gumbel-check", files);
  print_ok("gumbel-check", dir, verdict);
  return fidelity ? kExitOk : kExitRuntime;
}

int cmd_grad_check(const RunConfig& config, const Layout& layout) {
  const auto r = stage2_grad_check(config.checks, config.seed);
  const auto dir = layout.checks();
  write_text(dir / "grad_check.csv", r.csv);
  const json verdict = {{"passed", r.passed()},
                        {"step", config.checks.grad_step},
                        {"max_rel_error", r.screened.max_rel_error},
                        {"checked", r.screened.checked()},
                        {"skipped_at_kinks", r.screened.skipped},
                        {"fine_step_max_rel_error", r.fine.max_rel_error}};
  write_json(dir / "grad_check.json", verdict);
  const std::vector<fs::path> files{dir / "grad_check.csv", dir / "grad_check.json"};
  write_run_record(dir, config, "grad-check", files);
  print_ok("grad-check", dir, verdict);
  return r.passed() ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vidistill: video dataset distillation on synthetic event-window videos"};
  app.require_subcommand(1);
  Common common;
  std::string method;
  std::optional<std::size_t> video;
  std::string split = "test";

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/test splits");
  auto* codec = app.add_subcommand("pretrain-codec", "Pretrain and freeze the frame codec");
  auto* distill = app.add_subcommand("distill", "Run latent synthesis with the learned selector");
  auto* eval = app.add_subcommand("eval", "Train from scratch on the distilled set and score the test split");
  auto* baseline = app.add_subcommand("baseline", "Evaluate a baseline selection");
  auto* analyze = app.add_subcommand("analyze", "Redundancy matrices and per-frame scorer logits");
  auto* gumbel = app.add_subcommand("gumbel-check", "Gumbel-Max frequencies and gradient gap vs temperature");
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the full distillation loss");
  auto* repro = app.add_subcommand("reproduce", "Run the whole pipeline and write summary.json");
  for (auto* cmd : {gen, codec, distill, eval, baseline, analyze, gumbel, grad, repro}) add_common(cmd, common);
  baseline->add_option("-m,--method", method, "Baseline method")
      ->required()
      ->check(CLI::IsMember(baseline_methods()));
  analyze->add_option("--video", video, "Dump scorer logits for this video index");
  analyze->add_option("--split", split, "Split for --video")->check(CLI::IsMember({"train", "test"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitConfig;
  }

  try {
    const auto config = resolve(common);
    const Layout layout{resolve_output_dir(config)};
    fs::create_directories(layout.root);
    RunLog log(layout.log_file());
    if (gen->parsed()) return cmd_gen_data(config, layout, log);
    if (codec->parsed()) return cmd_pretrain_codec(config, layout, log);
    if (distill->parsed()) return cmd_distill(config, layout, log);
    if (eval->parsed()) return cmd_eval(config, layout, log);
    if (baseline->parsed()) return cmd_baseline(config, layout, log, method);
    if (analyze->parsed()) return cmd_analyze(config, layout, log, video, split);
    if (gumbel->parsed()) return cmd_gumbel_check(config, layout);
    if (grad->parsed()) return cmd_grad_check(config, layout);
    const auto result = reproduce(config, layout, log);
    print_ok("reproduce", layout.root, {{"methods", result.summary.at("methods")}});
    return kExitOk;
  } catch (const ConfigError& e) {
    print_error("config", e.what(), e.key());
    return kExitConfig;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kExitRuntime;
  }
}
