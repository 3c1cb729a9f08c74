#include "vidistill/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vidistill/digest.hpp"
#include "vidistill/gumbel.hpp"
#include "vidistill/ops.hpp"
#include "vidistill/params.hpp"
#include "vidistill/tensor_io.hpp"

namespace vidistill {

void DistillConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("distill config: " + msg); };
  if (budget_per_class < 1) fail("budget_per_class must be at least 1");
  if (k < 1) fail("k must be at least 1");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(latent_lr > 0.0) || !(scorer_lr > 0.0) || !(classifier_lr > 0.0)) fail("learning rates must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
}

void to_json(nlohmann::json& j, const DistillConfig& c) {
  j = {{"budget_per_class", c.budget_per_class}, {"k", c.k},
       {"tau", c.tau},                           {"latent_lr", c.latent_lr},
       {"scorer_lr", c.scorer_lr},               {"classifier_lr", c.classifier_lr},
       {"latent_steps", c.latent_steps},         {"batch_size", c.batch_size},
       {"iterations", c.iterations},             {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DistillConfig& c) {
  c.budget_per_class = j.at("budget_per_class");
  c.k = j.at("k");
  c.tau = j.at("tau");
  c.latent_lr = j.at("latent_lr");
  c.scorer_lr = j.at("scorer_lr");
  c.classifier_lr = j.at("classifier_lr");
  c.latent_steps = j.at("latent_steps");
  c.batch_size = j.at("batch_size");
  c.iterations = j.at("iterations");
  c.seed = j.at("seed");
}

std::vector<std::size_t> budget_from_ratio(double ratio, std::size_t dataset_size, std::size_t classes) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("budget_from_ratio: ratio must be in (0, 1]");
  if (classes == 0) throw std::invalid_argument("budget_from_ratio: no classes");
  const auto wanted = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(dataset_size)));
  const std::size_t total = std::max(classes, wanted);
  std::vector<std::size_t> per_class(classes, total / classes);
  for (std::size_t c = 0; c < total % classes; ++c) ++per_class[c];
  return per_class;
}

std::vector<LatentSeq> init_latents(const VideoSet& train, std::span<const std::size_t> per_class, const Codec& codec,
                                    std::uint64_t seed) {
  if (train.split != Split::Train) throw SplitError("init_latents: latents must come from the train split");
  codec.require_frozen("init_latents");
  if (per_class.size() != train.config.classes) throw std::invalid_argument("init_latents: budget per class size mismatch");
  std::vector<LatentSeq> out;
  NoGradGuard no_grad;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto pool = train.indices_of_class(static_cast<int>(c));
    if (per_class[c] > pool.size()) {
      throw std::invalid_argument("init_latents: budget " + std::to_string(per_class[c]) + " exceeds the " +
                                  std::to_string(pool.size()) + " videos of class " + std::to_string(c));
    }
    Rng rng(derive_seed(seed, {c}));
    rng.shuffle(pool.begin(), pool.end());
    pool.resize(per_class[c]);
    std::sort(pool.begin(), pool.end());
    for (const auto i : pool) {
      auto z = codec.encode(train.video(i));
      z.set_requires_grad(true);
      out.push_back({z, train.labels[i], train.ids[i]});
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> decode_sequences(const BasicCodecWeights<T>& codec, std::span<const BasicTensor<T>> latents) {
  if (latents.empty()) throw ShapeError("decode_sequences: empty batch");
  const std::size_t t = latents[0].size(0);
  const auto frames = decode_latents(codec, concat0(latents));
  return reshape(frames, {latents.size(), t, frames.size(1), frames.size(2), frames.size(3)});
}

template <typename T>
BasicTensor<T> selection_loss_impl(const BasicTensor<T>& frames, std::span<const int> labels,
                                   const BasicScorer<T>& scorer, const BasicClassifier<T>& classifier,
                                   const BasicTensor<T>& noise, double tau, BasicTensor<T>* q_out) {
  if (frames.rank() != 5) throw ShapeError("selection_loss: expected B×T×3×H×W frames, got " + shape_str(frames.shape()));
  const std::size_t b = frames.size(0), t = frames.size(1), h = frames.size(3), w = frames.size(4);
  if (labels.size() != b) throw ShapeError("selection_loss: label count does not match batch");
  if (noise.rank() != 3 || noise.size(0) != b || noise.size(2) != t) {
    throw ShapeError("selection_loss: noise " + shape_str(noise.shape()) + " does not match frames " +
                     shape_str(frames.shape()));
  }
  const std::size_t k = noise.size(1);
  const auto q = reshape(score_frames(scorer, reshape(frames, {b * t, 3, h, w})), {b, t});
  if (q_out) *q_out = q;
  const auto weights = gumbel_softmax(q, noise, tau);
  const auto clips = reshape(soft_aggregate(frames, weights), {b, 3 * k, h, w});
  return cross_entropy(classify(classifier, clips), labels);
}

template <typename T>
BasicTensor<T> selection_loss(const BasicTensor<T>& frames, std::span<const int> labels, const BasicScorer<T>& scorer,
                              const BasicClassifier<T>& classifier, const BasicTensor<T>& noise, double tau) {
  return selection_loss_impl<T>(frames, labels, scorer, classifier, noise, tau, nullptr);
}

template <typename T>
BasicTensor<T> stage2_loss(const BasicCodecWeights<T>& codec, std::span<const BasicTensor<T>> latents,
                           std::span<const int> labels, const BasicScorer<T>& scorer,
                           const BasicClassifier<T>& classifier, const BasicTensor<T>& noise, double tau) {
  return selection_loss(decode_sequences(codec, latents), labels, scorer, classifier, noise, tau);
}

#define VIDISTILL_INSTANTIATE(T)                                                                                      \
  template BasicTensor<T> decode_sequences(const BasicCodecWeights<T>&, std::span<const BasicTensor<T>>);             \
  template BasicTensor<T> selection_loss(const BasicTensor<T>&, std::span<const int>, const BasicScorer<T>&,          \
                                         const BasicClassifier<T>&, const BasicTensor<T>&, double);                   \
  template BasicTensor<T> stage2_loss(const BasicCodecWeights<T>&, std::span<const BasicTensor<T>>,                  \
                                      std::span<const int>, const BasicScorer<T>&, const BasicClassifier<T>&,         \
                                      const BasicTensor<T>&, double);
VIDISTILL_INSTANTIATE(float)
VIDISTILL_INSTANTIATE(double)
#undef VIDISTILL_INSTANTIATE

namespace {

DistillState snapshot(const DistillState& s) {
  DistillState out;
  for (const auto& l : s.latents) out.latents.push_back({l.z.detach(), l.label, l.source_id});
  out.scorer = s.scorer.cast<float>(false);
  out.classifier = s.classifier.cast<float>(false);
  return out;
}

Tensor stack_sequences(std::span<const Tensor> seqs) {
  const auto& first = seqs[0].shape();
  std::vector<float> data;
  data.reserve(seqs.size() * seqs[0].numel());
  for (const auto& s : seqs) data.insert(data.end(), s.data().begin(), s.data().end());
  Shape shape{seqs.size()};
  shape.insert(shape.end(), first.begin(), first.end());
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

std::vector<TrainingLogEntry> joint_optimize(DistillState& state, const Codec& codec, const DistillConfig& config,
                                             const IterationCallback& on_iteration) {
  config.validate();
  codec.require_frozen("joint_optimize");
  auto& latents = state.latents;
  if (latents.empty()) throw std::invalid_argument("joint_optimize: no latent sequences");
  const std::size_t n = latents.size();
  const std::size_t t = latents[0].z.size(0);
  if (config.k > t) throw std::invalid_argument("joint_optimize: K exceeds sequence length");
  const std::size_t batch = std::min(config.batch_size, n);
  const bool synthesize = config.latent_steps > 0;

  Rng batch_rng(derive_seed(config.seed, {5}));
  Rng noise_rng(derive_seed(config.seed, {4}));
  std::vector<AdamState> latent_adam;
  for (auto& l : latents) {
    l.z.set_requires_grad(synthesize);
    latent_adam.emplace_back(std::span(&l.z, 1), AdamOptions{.lr = config.latent_lr});
  }
  AdamState scorer_adam(state.scorer.params, {.lr = config.scorer_lr});
  AdamState classifier_adam(state.classifier.params, {.lr = config.classifier_lr});

  // Fixed latents decode to fixed frames.
  std::vector<Tensor> cached;
  if (!synthesize) {
    NoGradGuard no_grad;
    for (const auto& l : latents) cached.push_back(codec.decode(l.z));
  }

  std::vector<TrainingLogEntry> log;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> chosen(n);
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    if (batch < n) {
      batch_rng.shuffle(chosen.begin(), chosen.end());
      chosen.resize(batch);
      std::sort(chosen.begin(), chosen.end());
    }
    std::vector<int> labels;
    for (const auto i : chosen) labels.push_back(latents[i].label);
    const auto last_good = snapshot(state);

    TrainingLogEntry entry;
    entry.iteration = it;
    const std::size_t evaluations = std::max<std::size_t>(1, config.latent_steps);
    for (std::size_t step = 0; step < evaluations; ++step) {
      const bool first = step == 0;
      set_requires_grad<float>(state.scorer.params, first);
      set_requires_grad<float>(state.classifier.params, first);
      zero_grads(state.scorer.params);
      zero_grads(state.classifier.params);
      for (const auto i : chosen) latents[i].z.zero_grad();

      const auto noise = sample_gumbel({batch, config.k, t}, noise_rng);
      Tensor q;
      Tensor loss;
      try {
        Tensor frames;
        if (synthesize) {
          std::vector<Tensor> zs;
          for (const auto i : chosen) zs.push_back(latents[i].z);
          frames = decode_sequences(codec.weights(), std::span<const Tensor>(zs));
        } else {
          std::vector<Tensor> picked;
          for (const auto i : chosen) picked.push_back(cached[i]);
          frames = stack_sequences(picked);
        }
        loss = selection_loss_impl<float>(frames, labels, state.scorer, state.classifier, noise, config.tau, &q);
        if (!std::isfinite(loss.item())) throw NumericError("stage 2 loss is not finite");
        loss.backward();
      } catch (const NumericError& e) {
        state = snapshot(last_good);
        throw DistillDivergence("joint_optimize: iteration " + std::to_string(it) + ": " + e.what(), std::move(state));
      }

      if (first) {
        adam_step(state.scorer.params, scorer_adam);
        adam_step(state.classifier.params, classifier_adam);
        entry.loss = loss.item();
        entry.selection_histogram.assign(t, 0);
        double entropy = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const auto row = q.data().subspan(b * t, t);
          const std::vector<double> qd(row.begin(), row.end());
          for (const auto p : softmax_values(qd)) entropy -= p > 0.0 ? p * std::log(p) : 0.0;
          for (const auto idx : top_k(row, config.k)) ++entry.selection_histogram[idx];
        }
        entry.logit_entropy = entropy / static_cast<double>(batch);
      }
      if (synthesize) {
        for (const auto i : chosen) adam_step(std::span(&latents[i].z, 1), latent_adam[i]);
      }
    }
    entry.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    if (on_iteration) on_iteration(entry, state);
    log.push_back(std::move(entry));
  }
  set_requires_grad<float>(state.scorer.params, false);
  set_requires_grad<float>(state.classifier.params, false);
  for (auto& l : latents) {
    l.z.zero_grad();
    l.z.set_requires_grad(false);
  }
  return log;
}

DistilledDataset extract_topk(std::span<const LatentSeq> latents, const Scorer& scorer, const Codec& codec,
                              std::size_t k, std::size_t classes) {
  NoGradGuard no_grad;
  DistilledDataset out;
  out.k = k;
  out.classes = classes;
  out.codec_digest = codec.digest();
  out.scorer = scorer.cast<float>(false);
  for (const auto& seq : latents) {
    const auto q = score_frames(scorer, codec.decode(seq.z));
    DistilledRecord rec;
    rec.label = seq.label;
    rec.source_id = seq.source_id;
    rec.indices = top_k(q.data(), k);
    const std::size_t per = seq.z.numel() / seq.z.size(0);
    std::vector<float> kept;
    kept.reserve(k * per);
    for (const auto idx : rec.indices) {
      const auto src = seq.z.data().subspan(idx * per, per);
      kept.insert(kept.end(), src.begin(), src.end());
    }
    Shape shape = seq.z.shape();
    shape[0] = k;
    rec.latents = Tensor::from_data(std::move(shape), std::move(kept));
    out.records.push_back(std::move(rec));
  }
  return out;
}

void DistilledDataset::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<Tensor> blocks;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    blocks.push_back(r.latents);
    recs.push_back({{"label", r.label}, {"source_id", r.source_id}, {"indices", r.indices}});
  }
  const auto latent_bytes = encode_tensors(blocks);
  const auto scorer_bytes = encode_tensors(scorer.params);
  write_file(dir / "distilled.vct", latent_bytes);
  write_file(dir / "scorer.vct", scorer_bytes);
  const nlohmann::json meta = {{"format_version", 1},
                               {"k", k},
                               {"classes", classes},
                               {"codec_digest", codec_digest},
                               {"latents_sha256", sha256_hex(latent_bytes)},
                               {"scorer_sha256", sha256_hex(scorer_bytes)},
                               {"records", recs},
                               {"config", config}};
  const auto text = meta.dump(2) + "\n";
  write_file(dir / "distilled.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DistilledDataset DistilledDataset::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "distilled.json");
  if (!in) throw std::runtime_error("missing distilled.json in " + dir.string());
  const auto meta = nlohmann::json::parse(in);
  const auto latent_bytes = read_file(dir / "distilled.vct");
  const auto scorer_bytes = read_file(dir / "scorer.vct");
  if (sha256_hex(latent_bytes) != meta.at("latents_sha256").get<std::string>()) {
    throw std::runtime_error("distilled.vct digest does not match distilled.json");
  }
  if (sha256_hex(scorer_bytes) != meta.at("scorer_sha256").get<std::string>()) {
    throw std::runtime_error("scorer.vct digest does not match distilled.json");
  }
  DistilledDataset out;
  out.k = meta.at("k");
  out.classes = meta.at("classes");
  out.codec_digest = meta.at("codec_digest");
  out.config = meta.at("config");
  out.scorer.params = decode_tensors(scorer_bytes);
  validate_scorer(out.scorer);
  const auto blocks = decode_tensors(latent_bytes);
  const auto& recs = meta.at("records");
  if (blocks.size() != recs.size()) throw FormatError("distilled.vct record count does not match metadata", 0);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    DistilledRecord r;
    r.label = recs[i].at("label");
    r.source_id = recs[i].at("source_id");
    r.indices = recs[i].at("indices").get<std::vector<std::size_t>>();
    r.latents = blocks[i];
    if (r.latents.size(0) != out.k || r.indices.size() != out.k) {
      throw FormatError("distilled record " + std::to_string(i) + " does not hold K latents", 0);
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

DistillOutcome run_distillation(const VideoSet& train, const Codec& codec, const DistillConfig& config,
                                const IterationCallback& on_iteration) {
  config.validate();
  codec.require_frozen("run_distillation");
  const auto& g = train.config;
  DistillOutcome out;
  out.codec_digest_before = codec.digest();
  const std::vector<std::size_t> per_class(g.classes, config.budget_per_class);
  out.state.latents = init_latents(train, per_class, codec, derive_seed(config.seed, {1}));
  Rng scorer_rng(derive_seed(config.seed, {2}));
  out.state.scorer = init_scorer(scorer_rng);
  Rng classifier_rng(derive_seed(config.seed, {3}));
  out.state.classifier = init_classifier(Arch::ConvNet3, 3 * config.k, g.height, g.width, g.classes, classifier_rng);
  out.log = joint_optimize(out.state, codec, config, on_iteration);
  out.dataset = extract_topk(out.state.latents, out.state.scorer, codec, config.k, g.classes);
  out.dataset.config = config;
  codec.require_frozen("run_distillation");
  out.codec_digest_after = codec.digest();
  return out;
}

std::string training_log_csv(std::span<const TrainingLogEntry> log, bool wall_time) {
  std::ostringstream os;
  os << "iteration,loss,logit_entropy,selection_histogram" << (wall_time ? ",wall_ms" : "") << "\n";
  for (const auto& e : log) {
    os << e.iteration << ',' << e.loss << ',' << e.logit_entropy << ',';
    for (std::size_t i = 0; i < e.selection_histogram.size(); ++i) os << (i ? ";" : "") << e.selection_histogram[i];
    if (wall_time) os << ',' << e.wall_ms;
    os << '\n';
  }
  return os.str();
}

}  // namespace vidistill
