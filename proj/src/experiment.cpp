#include "vidistill/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "vidistill/digest.hpp"
#include "vidistill/tensor_io.hpp"

namespace vidistill {

namespace fs = std::filesystem;

RunLog::RunLog(const fs::path& path, bool echo) : echo_(echo) {
  fs::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
}

void RunLog::line(const std::string& text) {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::lock_guard lock(mutex_);
  if (out_) out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << text << std::endl;
  if (echo_) std::cerr << text << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void write_run_record(const fs::path& dir, const RunConfig& config, const std::string& command,
                      std::span<const fs::path> artifacts) {
  fs::create_directories(dir);
  auto echo = config.to_json();
  echo.erase("output_dir");
  write_json(dir / "config.json", echo);
  nlohmann::json digests = nlohmann::json::object();
  for (const auto& a : artifacts) digests[fs::relative(a, dir).generic_string()] = sha256_file(a);
  write_json(dir / "run.json", {{"command", command}, {"seed", config.seed}, {"artifacts", digests}});
}

DatasetManifest ensure_dataset(const RunConfig& config, const Layout& layout, RunLog& log) {
  if (fs::exists(layout.data() / "manifest.json")) {
    auto manifest = read_manifest(layout.data());
    if (nlohmann::json(manifest.config) == nlohmann::json(config.generator)) {
      log.line("dataset: reusing " + layout.data().string());
      return manifest;
    }
    throw std::runtime_error("dataset at " + layout.data().string() + " was generated with a different config");
  }
  log.line("dataset: generating into " + layout.data().string());
  auto manifest = generate_dataset(config.generator, layout.data());
  const std::vector<fs::path> files{layout.data() / "train.vct", layout.data() / "test.vct",
                                    layout.data() / "manifest.json"};
  write_run_record(layout.data(), config, "gen-data", files);
  return manifest;
}

Codec pretrain_frozen_codec(const RunConfig& config, const VideoSet& train) {
  const auto& g = train.config;
  const std::size_t frame = 3 * g.height * g.width;
  std::vector<float> corpus;
  for (std::size_t i = 0; i < train.size(); i += config.experiment.codec_stride) {
    const auto v = train.video_data(i);
    corpus.insert(corpus.end(), v.begin(), v.end());
  }
  const std::size_t n = corpus.size() / frame;
  const auto frames = Tensor::from_data({n, 3, g.height, g.width}, std::move(corpus));
  auto codec = pretrain_codec(frames, config.codec);
  codec.freeze();
  return codec;
}

Codec load_frozen_codec(const Layout& layout) {
  auto codec = Codec::load(layout.codec_stem());
  if (!codec.frozen()) throw FrozenCodecError("codec at " + layout.codec_stem().string() + " is not frozen");
  return codec;
}

const std::vector<std::string>& baseline_methods() {
  static const std::vector<std::string> names{"random_coreset", "full_data", "uniform", "pixel_diff", "first_k"};
  return names;
}

MethodRuns evaluate_method(const std::string& method, double ratio, const ClipDataset& train_clips,
                           const ClipDataset& test_clips, const RunConfig& config, std::uint64_t experiment_seed) {
  MethodRuns out{method, ratio, experiment_seed, {}, {}};
  for (std::size_t j = 0; j < config.eval.runs; ++j) out.seeds.push_back(eval_seed(experiment_seed, j));
  out.accuracies = parallel_map<double>(config.eval.runs, config.experiment.workers, [&](std::size_t j) {
    const auto model = train_from_scratch(train_clips, config.eval, out.seeds[j]);
    return evaluate_accuracy(model, test_clips);
  });
  return out;
}

namespace {

double budget_ratio(const RunConfig& config, const VideoSet& train) {
  return static_cast<double>(config.distill.budget_per_class * config.generator.classes) /
         static_cast<double>(train.size());
}

SelectionRule matched_rule(const std::string& method) {
  if (method == "uniform") return SelectionRule::Uniform;
  if (method == "pixel_diff") return SelectionRule::PixelDiff;
  return SelectionRule::FirstK;
}

}  // namespace

MethodRuns evaluate_distilled(const RunConfig& config, const DistilledDataset& distilled, const Codec& codec,
                              const VideoSet& test, std::uint64_t experiment_seed) {
  const auto train_clips = clips_from_distilled(distilled, codec);
  const auto test_clips = select_clips(test, SelectionRule::ScorerTopK, distilled.k, &distilled.scorer);
  const double ratio = static_cast<double>(distilled.records.size()) /
                       static_cast<double>(config.generator.classes * config.generator.train_per_class);
  return evaluate_method("distilled", ratio, train_clips, test_clips, config, experiment_seed);
}

MethodRuns evaluate_baseline(const RunConfig& config, const std::string& method, const VideoSet& train,
                             const VideoSet& test, std::uint64_t experiment_seed, const DistilledDataset* matched) {
  const std::size_t k = config.distill.k;
  if (method == "random_coreset") {
    const std::vector<std::size_t> per_class(config.generator.classes, config.distill.budget_per_class);
    const auto coreset = random_coreset(train, per_class, k, derive_seed(experiment_seed, {8}));
    return evaluate_method(method, budget_ratio(config, train), coreset.clips,
                           select_clips(test, SelectionRule::Uniform, k), config, experiment_seed);
  }
  if (method == "full_data") {
    return evaluate_method(method, 1.0, select_clips(train, SelectionRule::Uniform, k),
                           select_clips(test, SelectionRule::Uniform, k), config, experiment_seed);
  }
  if (method == "uniform" || method == "pixel_diff" || method == "first_k") {
    if (matched == nullptr) throw std::invalid_argument("baseline " + method + " needs a distilled dataset to match");
    std::map<std::uint64_t, std::size_t> at;
    for (std::size_t i = 0; i < train.size(); ++i) at[train.ids[i]] = i;
    std::vector<std::size_t> videos;
    for (const auto& r : matched->records) {
      const auto it = at.find(r.source_id);
      if (it == at.end()) throw std::runtime_error("distilled record source " + std::to_string(r.source_id) + " is not in the training split");
      videos.push_back(it->second);
    }
    const auto rule = matched_rule(method);
    const double ratio = static_cast<double>(videos.size()) / static_cast<double>(train.size());
    return evaluate_method(method, ratio, select_clips(train, videos, rule, k), select_clips(test, rule, k), config,
                           experiment_seed);
  }
  throw std::invalid_argument("unknown baseline method '" + method + "'");
}

std::uint64_t eval_seed(std::uint64_t experiment_seed, std::size_t run) { return derive_seed(experiment_seed, {7, run}); }

std::string results_csv(std::span<const MethodRuns> runs) {
  std::ostringstream os;
  os << "method,ratio,seed,accuracy\n" << std::setprecision(17);
  for (const auto& m : runs) {
    for (const double acc : m.accuracies) os << m.method << ',' << m.ratio << ',' << m.experiment_seed << ',' << acc << '\n';
  }
  return os.str();
}

std::vector<MethodRuns> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "method,ratio,seed,accuracy") {
    throw std::runtime_error("results.csv: unexpected header");
  }
  std::vector<MethodRuns> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    std::vector<std::string> cells;
    std::istringstream fields(line);
    for (std::string cell; std::getline(fields, cell, ',');) cells.push_back(cell);
    if (cells.size() != 4) throw std::runtime_error("results.csv: row " + std::to_string(row) + " needs 4 columns");
    try {
      const double ratio = std::stod(cells[1]);
      const std::uint64_t seed = std::stoull(cells[2]);
      const double acc = std::stod(cells[3]);
      if (out.empty() || out.back().method != cells[0] || out.back().experiment_seed != seed) {
        out.push_back({cells[0], ratio, seed, {}, {}});
      }
      auto& m = out.back();
      m.seeds.push_back(eval_seed(seed, m.accuracies.size()));
      m.accuracies.push_back(acc);
    } catch (const std::logic_error&) {
      throw std::runtime_error("results.csv: row " + std::to_string(row) + " is malformed");
    }
  }
  return out;
}

nlohmann::json summarize_methods(std::span<const MethodRuns> runs) {
  std::map<std::string, std::vector<const MethodRuns*>> by_method;
  for (const auto& m : runs) by_method[m.method].push_back(&m);
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, group] : by_method) {
    std::vector<double> all;
    nlohmann::json per_seed = nlohmann::json::object();
    for (const auto* m : group) {
      all.insert(all.end(), m->accuracies.begin(), m->accuracies.end());
      per_seed[std::to_string(m->experiment_seed)] = m->accuracies;
    }
    const auto s = summarize(all);
    out[name] = {{"ratio", group.front()->ratio}, {"mean", s.mean}, {"std", s.std}, {"runs", all.size()},
                 {"accuracy_by_seed", per_seed}};
  }
  if (out.contains("full_data")) {
    const double full = out["full_data"]["mean"];
    for (auto& [name, entry] : out.items()) entry["gap_to_full_data"] = full - entry["mean"].get<double>();
  }
  return out;
}

nlohmann::json write_redundancy(const VideoSet& train, const RunConfig& config, const fs::path& dir,
                                std::vector<fs::path>& written) {
  fs::create_directories(dir);
  std::ostringstream table;
  table << "class,intra_adjacent,inter_off_diagonal,difference,degenerate_entries\n";
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t c = 0; c < train.config.classes; ++c) {
    const auto r = redundancy_matrices(train, static_cast<int>(c), config.experiment.redundancy_videos);
    Matrix mean{r.intra.front().rows, r.intra.front().cols, std::vector<double>(r.intra.front().values.size(), 0.0)};
    for (const auto& m : r.intra) {
      for (std::size_t i = 0; i < m.values.size(); ++i) mean.values[i] += m.values[i] / static_cast<double>(r.intra.size());
    }
    const auto intra_path = dir / ("class_" + std::to_string(c) + "_intra_mean.csv");
    const auto inter_path = dir / ("class_" + std::to_string(c) + "_inter.csv");
    write_text(intra_path, matrix_csv(mean));
    write_text(inter_path, matrix_csv(r.inter));
    written.push_back(intra_path);
    written.push_back(inter_path);
    const double intra = mean_adjacent_correlation(r);
    const double inter = mean_off_diagonal(r.inter);
    table << c << ',' << std::fixed << std::setprecision(6) << intra << ',' << inter << ',' << intra - inter
          << std::defaultfloat << ',' << r.degenerate_entries << '\n';
    out.push_back({{"class", c}, {"intra_adjacent", intra}, {"inter_off_diagonal", inter},
                   {"degenerate_entries", r.degenerate_entries}});
  }
  write_text(dir / "redundancy.csv", table.str());
  written.push_back(dir / "redundancy.csv");
  return out;
}

std::string logits_csv(const Scorer& scorer, const VideoSet& set, std::size_t video) {
  if (video >= set.size()) throw std::out_of_range("video index " + std::to_string(video) + " out of range");
  NoGradGuard no_grad;
  const auto q = score_frames(scorer, set.video(video));
  std::ostringstream os;
  os << "frame,logit\n" << std::setprecision(9);
  for (std::size_t t = 0; t < q.numel(); ++t) os << t << ',' << q.data()[t] << '\n';
  return os.str();
}

ReproduceResult reproduce(const RunConfig& config, const Layout& layout, RunLog& log) {
  ensure_dataset(config, layout, log);
  const auto train = load_split(layout.data(), Split::Train);
  const auto test = load_split(layout.data(), Split::Test);

  log.line("codec: pretraining");
  const auto codec = pretrain_frozen_codec(config, train);
  codec.save(layout.codec_stem());
  {
    const std::vector<fs::path> files{fs::path(layout.codec_stem()).concat(".vct"),
                                      fs::path(layout.codec_stem()).concat(".json")};
    write_run_record(layout.codec_dir(), config, "pretrain-codec", files);
  }
  log.line("codec: mse " + std::to_string(codec.train_mse()) + " digest " + codec.digest());

  ReproduceResult result;
  nlohmann::json distilled_digests = nlohmann::json::object();
  bool codec_unchanged = true;
  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < config.experiment.seeds; ++r) {
    const std::uint64_t s = config.seed + r;
    seeds.push_back(s);
    auto dc = config.distill;
    dc.seed = s;
    log.line("distill: seed " + std::to_string(s));
    const auto outcome = run_distillation(train, codec, dc);
    codec_unchanged = codec_unchanged && outcome.codec_digest_before == outcome.codec_digest_after;
    const auto dir = layout.distilled(s);
    outcome.dataset.save(dir);
    save_tensors(dir / "classifier.vct", outcome.state.classifier.params);
    write_text(dir / "training_log.csv", training_log_csv(outcome.log));
    auto record = config;
    record.apply_seed(s);
    const std::vector<fs::path> files{dir / "distilled.vct", dir / "scorer.vct", dir / "distilled.json",
                                      dir / "classifier.vct", dir / "training_log.csv"};
    write_run_record(dir, record, "distill", files);
    distilled_digests[std::to_string(s)] = sha256_file(dir / "distilled.vct");

    log.line("eval: seed " + std::to_string(s));
    result.runs.push_back(evaluate_distilled(config, outcome.dataset, codec, test, s));
    for (const char* method : {"uniform", "pixel_diff", "random_coreset"}) {
      result.runs.push_back(evaluate_baseline(config, method, train, test, s, &outcome.dataset));
    }
  }
  log.line("eval: full data");
  result.runs.push_back(evaluate_baseline(config, "full_data", train, test, config.seed));

  std::vector<fs::path> artifacts;
  const auto analysis = write_redundancy(train, config, layout.analysis(), artifacts);

  result.summary = {{"schema_version", RunConfig::kSchemaVersion},
                    {"seed", config.seed},
                    {"experiment_seeds", seeds},
                    {"k", config.distill.k},
                    {"budget_per_class", config.distill.budget_per_class},
                    {"codec", {{"digest", codec.digest()}, {"unchanged_by_distillation", codec_unchanged}}},
                    {"distilled_sha256", distilled_digests},
                    {"methods", summarize_methods(result.runs)},
                    {"redundancy", analysis}};
  write_text(layout.root / "results.csv", results_csv(result.runs));
  write_json(layout.root / "summary.json", result.summary);
  artifacts.push_back(layout.root / "results.csv");
  artifacts.push_back(layout.root / "summary.json");
  write_run_record(layout.root, config, "reproduce", artifacts);
  log.line("reproduce: done");
  return result;
}

}  // namespace vidistill
