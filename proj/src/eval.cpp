#include "vidistill/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vidistill/gumbel.hpp"
#include "vidistill/ops.hpp"
#include "vidistill/optim.hpp"
#include "vidistill/params.hpp"

namespace vidistill {

void EvalConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("eval config: epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("eval config: batch_size must be at least 1");
  if (runs < 1) throw std::invalid_argument("eval config: runs must be at least 1");
  if (!(lr > 0.0)) throw std::invalid_argument("eval config: lr must be positive");
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"arch", arch_name(c.arch)}, {"epochs", c.epochs},       {"lr", c.lr},     {"momentum", c.momentum},
       {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size}, {"runs", c.runs}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  c.arch = parse_arch(j.at("arch").get<std::string>());
  c.epochs = j.at("epochs");
  c.lr = j.at("lr");
  c.momentum = j.at("momentum");
  c.weight_decay = j.at("weight_decay");
  c.batch_size = j.at("batch_size");
  c.runs = j.at("runs");
  c.seed = j.at("seed");
}

std::vector<std::size_t> uniform_indices(std::size_t t, std::size_t k) {
  if (k > t) throw std::invalid_argument("uniform_indices: K exceeds T");
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = i * t / k;
  return out;
}

std::vector<std::size_t> first_k_indices(std::size_t t, std::size_t k) {
  if (k > t) throw std::invalid_argument("first_k_indices: K exceeds T");
  std::vector<std::size_t> out(k);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

std::vector<std::size_t> pixel_diff_indices(std::span<const float> video, std::size_t t, std::size_t k) {
  if (k > t) throw std::invalid_argument("pixel_diff_indices: K exceeds T");
  if (t == 0 || video.size() % t != 0) throw ShapeError("pixel_diff_indices: video size is not a multiple of T");
  const std::size_t per = video.size() / t;
  std::vector<double> d(t);
  d[0] = std::numeric_limits<double>::infinity();
  for (std::size_t f = 1; f < t; ++f) {
    double total = 0.0;
    for (std::size_t i = 0; i < per; ++i) total += std::abs(static_cast<double>(video[f * per + i]) - video[(f - 1) * per + i]);
    d[f] = total;
  }
  return top_k(std::span<const double>(d), k);
}

std::string rule_name(SelectionRule rule) {
  switch (rule) {
    case SelectionRule::ScorerTopK:
      return "scorer_topk";
    case SelectionRule::Uniform:
      return "uniform";
    case SelectionRule::PixelDiff:
      return "pixel_diff";
    case SelectionRule::FirstK:
      return "first_k";
  }
  return "unknown";
}

std::vector<std::size_t> select_indices(std::span<const float> video, const GenConfig& g, SelectionRule rule,
                                        std::size_t k, const Scorer* scorer) {
  switch (rule) {
    case SelectionRule::Uniform:
      return uniform_indices(g.frames, k);
    case SelectionRule::FirstK:
      return first_k_indices(g.frames, k);
    case SelectionRule::PixelDiff:
      return pixel_diff_indices(video, g.frames, k);
    case SelectionRule::ScorerTopK: {
      if (!scorer) throw std::invalid_argument("select_indices: scorer rule needs a scorer");
      NoGradGuard no_grad;
      const auto frames =
          Tensor::from_data({g.frames, 3, g.height, g.width}, std::vector<float>(video.begin(), video.end()));
      return top_k(score_frames(*scorer, frames).data(), k);
    }
  }
  throw std::invalid_argument("select_indices: unknown rule");
}

ClipDataset select_clips(const VideoSet& set, std::span<const std::size_t> videos, SelectionRule rule, std::size_t k,
                         const Scorer* scorer) {
  const auto& g = set.config;
  const std::size_t frame = 3 * g.height * g.width;
  ClipDataset out;
  out.split = set.split;
  out.classes = g.classes;
  out.k = k;
  std::vector<float> data;
  data.reserve(videos.size() * k * frame);
  for (const auto v : videos) {
    const auto video = set.video_data(v);
    for (const auto idx : select_indices(video, g, rule, k, scorer)) {
      const auto src = video.subspan(idx * frame, frame);
      data.insert(data.end(), src.begin(), src.end());
    }
    out.labels.push_back(set.labels[v]);
  }
  if (videos.empty()) throw std::invalid_argument("select_clips: no videos");
  out.clips = Tensor::from_data({videos.size(), 3 * k, g.height, g.width}, std::move(data));
  return out;
}

ClipDataset select_clips(const VideoSet& set, SelectionRule rule, std::size_t k, const Scorer* scorer) {
  std::vector<std::size_t> all(set.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return select_clips(set, all, rule, k, scorer);
}

ClipDataset clips_from_distilled(const DistilledDataset& dataset, const Codec& codec) {
  if (dataset.records.empty()) throw std::invalid_argument("clips_from_distilled: empty dataset");
  if (codec.digest() != dataset.codec_digest) {
    throw std::runtime_error("clips_from_distilled: codec digest " + codec.digest() +
                             " does not match the dataset's " + dataset.codec_digest);
  }
  NoGradGuard no_grad;
  ClipDataset out;
  out.split = Split::Train;
  out.classes = dataset.classes;
  out.k = dataset.k;
  std::vector<float> data;
  std::size_t h = 0, w = 0;
  for (const auto& r : dataset.records) {
    const auto frames = codec.decode(r.latents);
    h = frames.size(2);
    w = frames.size(3);
    data.insert(data.end(), frames.data().begin(), frames.data().end());
    out.labels.push_back(r.label);
  }
  out.clips = Tensor::from_data({dataset.records.size(), 3 * dataset.k, h, w}, std::move(data));
  return out;
}

Coreset random_coreset(const VideoSet& train, std::span<const std::size_t> per_class, std::size_t k,
                       std::uint64_t seed) {
  if (train.split != Split::Train) throw SplitError("random_coreset: coresets are drawn from the train split");
  if (per_class.size() != train.config.classes) throw std::invalid_argument("random_coreset: budget size mismatch");
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto pool = train.indices_of_class(static_cast<int>(c));
    if (per_class[c] > pool.size()) throw std::invalid_argument("random_coreset: budget exceeds class size");
    Rng rng(derive_seed(seed, {c}));
    rng.shuffle(pool.begin(), pool.end());
    pool.resize(per_class[c]);
    std::sort(pool.begin(), pool.end());
    picked.insert(picked.end(), pool.begin(), pool.end());
  }
  Coreset out;
  out.clips = select_clips(train, picked, SelectionRule::Uniform, k);
  for (const auto i : picked) out.ids.push_back(train.ids[i]);
  return out;
}

namespace {

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t per = x.numel() / x.size(0);
  std::vector<float> data;
  data.reserve(rows.size() * per);
  for (const auto r : rows) {
    const auto src = x.data().subspan(r * per, per);
    data.insert(data.end(), src.begin(), src.end());
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

Classifier train_from_scratch(const ClipDataset& data, const EvalConfig& config, std::uint64_t seed) {
  config.validate();
  if (data.split != Split::Train) throw SplitError("train_from_scratch: refusing to train on the test split");
  if (data.size() == 0) throw std::invalid_argument("train_from_scratch: empty dataset");
  Rng rng(seed);
  auto model = init_classifier(config.arch, data.clips.size(1), data.clips.size(2), data.clips.size(3), data.classes, rng);
  set_requires_grad<float>(model.params, true);
  SgdMomentumState sgd(model.params, {.lr = config.lr, .momentum = config.momentum, .weight_decay = config.weight_decay});
  const std::size_t n = data.size();
  const std::size_t batch = std::min(config.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += batch) {
      const auto rows = std::span(order).subspan(start, std::min(batch, n - start));
      std::vector<int> labels;
      for (const auto r : rows) labels.push_back(data.labels[r]);
      zero_grads(model.params);
      cross_entropy(classify(model, gather_rows(data.clips, rows)), std::span<const int>(labels)).backward();
      sgd_momentum_step(model.params, sgd);
    }
  }
  set_requires_grad<float>(model.params, false);
  zero_grads(model.params);
  return model;
}

std::vector<int> predict(const Classifier& model, const ClipDataset& data) {
  NoGradGuard no_grad;
  std::vector<int> out;
  const std::size_t n = data.size();
  const std::size_t chunk = 128;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    rows.resize(std::min(chunk, n - start));
    std::iota(rows.begin(), rows.end(), start);
    const auto logits = classify(model, gather_rows(data.clips, rows));
    const std::size_t c = logits.size(1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = logits.data().subspan(i * c, c);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double evaluate_accuracy(const Classifier& model, const ClipDataset& data) {
  if (data.classes != model.classes) {
    throw std::invalid_argument("evaluate_accuracy: model has " + std::to_string(model.classes) +
                                " classes, data has " + std::to_string(data.classes));
  }
  if (data.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  const auto predictions = predict(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

RunSummary summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no runs");
  RunSummary s;
  for (const auto v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (const auto v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

double pearson(std::span<const float> a, std::span<const float> b, bool* degenerate) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: vectors must be nonempty and equal length");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return cov / std::sqrt(va * vb);
}

namespace {

Matrix correlation_matrix(const std::vector<std::span<const float>>& vectors, std::size_t& degenerate) {
  Matrix m{vectors.size(), vectors.size(), std::vector<double>(vectors.size() * vectors.size(), 0.0)};
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i; j < vectors.size(); ++j) {
      bool flagged = false;
      double r = 0.0;
      if (i == j) {
        pearson(vectors[i], vectors[j], &flagged);
        r = flagged ? 0.0 : 1.0;
      } else {
        r = pearson(vectors[i], vectors[j], &flagged);
      }
      degenerate += flagged;
      m.values[i * m.cols + j] = m.values[j * m.cols + i] = r;
    }
  }
  return m;
}

}  // namespace

RedundancyResult redundancy_matrices(const VideoSet& set, int label, std::size_t max_videos) {
  auto videos = set.indices_of_class(label);
  if (max_videos > 0 && videos.size() > max_videos) videos.resize(max_videos);
  if (videos.size() < 2) throw std::invalid_argument("redundancy_matrices: need at least two videos of the class");
  const auto& g = set.config;
  const std::size_t frame = 3 * g.height * g.width;
  RedundancyResult out;
  std::vector<std::vector<float>> means;
  for (const auto v : videos) {
    const auto video = set.video_data(v);
    std::vector<std::span<const float>> frames;
    std::vector<float> mean(frame, 0.0f);
    for (std::size_t t = 0; t < g.frames; ++t) {
      frames.push_back(video.subspan(t * frame, frame));
      for (std::size_t i = 0; i < frame; ++i) mean[i] += video[t * frame + i] / static_cast<float>(g.frames);
    }
    out.intra.push_back(correlation_matrix(frames, out.degenerate_entries));
    means.push_back(std::move(mean));
    out.ids.push_back(set.ids[v]);
  }
  std::vector<std::span<const float>> mean_spans(means.begin(), means.end());
  out.inter = correlation_matrix(mean_spans, out.degenerate_entries);
  return out;
}

double mean_adjacent_correlation(const RedundancyResult& r) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& m : r.intra) {
    for (std::size_t t = 0; t + 1 < m.rows; ++t) {
      total += m.at(t, t + 1);
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double mean_off_diagonal(const Matrix& m) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (i == j) continue;
      total += m.at(i, j);
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::string matrix_csv(const Matrix& m) {
  std::ostringstream os;
  os.precision(6);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) os << (j ? "," : "") << std::fixed << m.at(i, j);
    os << '\n';
  }
  return os.str();
}

}  // namespace vidistill
