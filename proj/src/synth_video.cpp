#include "vidistill/synth_video.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "vidistill/digest.hpp"
#include "vidistill/rng.hpp"
#include "vidistill/tensor_io.hpp"

namespace vidistill {

std::string split_name(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

void GenConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("generator config: " + msg); };
  if (classes < 2 || classes % 2 != 0) fail("classes must be even and at least 2");
  if (train_per_class == 0 || test_per_class == 0) fail("per-class counts must be positive");
  if (event_width < 1 || event_width > frames) fail("event_width must be in [1, frames]");
  if (height < 8 || width < 8 || height % 4 != 0 || width % 4 != 0) fail("height and width must be multiples of 4, at least 8");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
}

void to_json(nlohmann::json& j, const GenConfig& c) {
  j = {{"classes", c.classes},       {"train_per_class", c.train_per_class},
       {"test_per_class", c.test_per_class}, {"frames", c.frames},
       {"height", c.height},         {"width", c.width},
       {"event_width", c.event_width}, {"noise_sigma", c.noise_sigma},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GenConfig& c) {
  c.classes = j.at("classes");
  c.train_per_class = j.at("train_per_class");
  c.test_per_class = j.at("test_per_class");
  c.frames = j.at("frames");
  c.height = j.at("height");
  c.width = j.at("width");
  c.event_width = j.at("event_width");
  c.noise_sigma = j.at("noise_sigma");
  c.seed = j.at("seed");
}

namespace {

struct Rgb {
  float r, g, b;
};

constexpr Rgb kPairColors[] = {{0.75f, 0.75f, 0.15f}, {0.15f, 0.75f, 0.75f}, {0.15f, 0.75f, 0.15f}, {0.75f, 0.75f, 0.75f}};
constexpr Rgb kEventColors[] = {{0.9f, 0.1f, 0.1f}, {0.1f, 0.1f, 0.9f}};

bool inside_shape(int geometry, double dx, double dy, double r) {
  switch (geometry) {
    case 0:
      return dx * dx + dy * dy <= r * r;
    case 1:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case 2:
      return std::abs(dx) + std::abs(dy) <= 1.2 * r;
    default:
      return std::abs(dx) <= r && std::abs(dy) <= r && (std::abs(dx) <= 0.4 * r || std::abs(dy) <= 0.4 * r);
  }
}

// The part of the shape recolored during the event.
bool inside_core(double dx, double dy, double r) { return dx * dx + dy * dy <= 0.36 * r * r; }

}  // namespace

std::uint64_t sample_id(Split split, int label, std::size_t draw) {
  return (static_cast<std::uint64_t>(split == Split::Train ? 0 : 1) << 48) |
         (static_cast<std::uint64_t>(label) << 24) | static_cast<std::uint64_t>(draw);
}

VideoSample render_video(const GenConfig& c, int label, std::uint64_t pair_seed, std::size_t event_width) {
  const std::size_t T = c.frames, H = c.height, W = c.width;
  const int pair = label / 2;
  const Rgb base = kPairColors[pair % 4];
  const int geometry = (pair + pair / 4) % 4;
  Rng rng(pair_seed);

  // Static low-contrast background.
  struct Wave {
    double amp, fx, fy, phase;
  };
  Wave waves[3];
  for (auto& w : waves) {
    w.amp = rng.uniform(0.02, 0.05);
    w.fx = static_cast<double>(1 + rng.below(2)) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    w.fy = static_cast<double>(1 + rng.below(2));
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::vector<double> background(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double v = 0.45;
      for (const auto& w : waves) {
        v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x / W + w.fy * y / H) + w.phase);
      }
      background[y * W + x] = v;
    }
  }

  // Bouncing shape trajectory.
  const double side = static_cast<double>(std::min(H, W));
  const double r = std::max(2.0, std::round(0.2 * side));
  double px = rng.uniform(r, W - r), py = rng.uniform(r, H - r);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double speed = rng.uniform(0.8, 1.6) * side / 32.0;
  double vx = speed * std::cos(angle), vy = speed * std::sin(angle);

  const std::size_t event_start = rng.below(T - event_width + 1);
  // Shared by both classes of the pair, so it carries no class information.
  const std::size_t distractor_start = rng.below(T - event_width + 1);

  std::vector<float> frames(T * 3 * H * W);
  for (std::size_t t = 0; t < T; ++t) {
    const bool in_event = t >= event_start && t < event_start + event_width;
    const bool in_distractor = t >= distractor_start && t < distractor_start + event_width;
    const Rgb& event = kEventColors[label % 2];
    const float base_color[3] = {base.r, base.g, base.b};
    const float event_color[3] = {event.r, event.g, event.b};
    for (std::size_t ch = 0; ch < 3; ++ch) {
      float* out = frames.data() + (t * 3 + ch) * H * W;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const double dx = x + 0.5 - px, dy = y + 0.5 - py;
          double v = background[y * W + x];
          if (inside_shape(geometry, dx, dy, r)) {
            const bool core = inside_core(dx, dy, r);
            if (core && in_event) {
              v = event_color[ch];
            } else if (!core && in_distractor) {
              v = 1.0 - base_color[ch];
            } else {
              v = base_color[ch];
            }
          }
          out[y * W + x] = static_cast<float>(v);
        }
      }
    }
    px += vx;
    py += vy;
    if (px < r || px > W - r) {
      vx = -vx;
      px = std::clamp(px, r, W - r);
    }
    if (py < r || py > H - r) {
      vy = -vy;
      py = std::clamp(py, r, H - r);
    }
  }
  // Noise is drawn after the event colors so both classes of a pair share it.
  for (auto& v : frames) {
    v = static_cast<float>(std::clamp(v + c.noise_sigma * rng.normal(), 0.0, 1.0));
  }

  VideoSample s;
  s.frames = Tensor::from_data({T, 3, H, W}, std::move(frames));
  s.label = label;
  s.event_start = event_start;
  return s;
}

Tensor VideoSet::video(std::size_t i) const {
  const auto d = video_data(i);
  return Tensor::from_data({config.frames, 3, config.height, config.width}, std::vector<float>(d.begin(), d.end()));
}

std::span<const float> VideoSet::video_data(std::size_t i) const {
  const std::size_t per = config.frames * 3 * config.height * config.width;
  return frames.data().subspan(i * per, per);
}

std::vector<std::size_t> VideoSet::indices_of_class(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

VideoSet generate_split(const GenConfig& config, Split split) {
  config.validate();
  const std::size_t per_class = split == Split::Train ? config.train_per_class : config.test_per_class;
  const std::size_t per = config.frames * 3 * config.height * config.width;
  VideoSet set;
  set.split = split;
  set.config = config;
  std::vector<float> block;
  block.reserve(config.classes * per_class * per);
  for (std::size_t label = 0; label < config.classes; ++label) {
    const auto pair = label / 2;
    for (std::size_t j = 0; j < per_class; ++j) {
      const auto pair_seed = derive_seed(config.seed, {split == Split::Train ? 1u : 2u, pair, j});
      auto v = render_video(config, static_cast<int>(label), pair_seed, config.event_width);
      block.insert(block.end(), v.frames.data().begin(), v.frames.data().end());
      set.labels.push_back(static_cast<int>(label));
      set.event_starts.push_back(v.event_start);
      set.ids.push_back(sample_id(split, static_cast<int>(label), j));
    }
  }
  set.frames = Tensor::from_data({set.labels.size(), config.frames, 3, config.height, config.width}, std::move(block));
  return set;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json files_json = nlohmann::json::array();
  for (const auto& f : files) {
    files_json.push_back({{"name", f.name}, {"split", f.split}, {"sha256", f.sha256}, {"count", f.count}});
  }
  nlohmann::json counts = {{"train", config.classes * config.train_per_class},
                           {"test", config.classes * config.test_per_class}};
  return {{"format_version", kFormatVersion}, {"config", config}, {"counts", counts},
          {"files", files_json},              {"samples", samples}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kFormatVersion) {
    throw std::runtime_error("manifest: unsupported format_version " + j.at("format_version").dump());
  }
  DatasetManifest m;
  m.config = j.at("config").get<GenConfig>();
  for (const auto& f : j.at("files")) {
    m.files.push_back({f.at("name"), f.at("split"), f.at("sha256"), f.at("count")});
  }
  m.samples = j.at("samples");
  return m;
}

DatasetManifest generate_dataset(const GenConfig& config, const std::filesystem::path& dir) {
  config.validate();
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  manifest.config = config;
  manifest.samples = nlohmann::json::object();
  for (const auto split : {Split::Train, Split::Test}) {
    const auto set = generate_split(config, split);
    const auto name = split_name(split) + ".vct";
    const auto bytes = encode_tensors(std::span(&set.frames, 1));
    write_file(dir / name, bytes);
    manifest.files.push_back({name, split_name(split), sha256_hex(bytes), set.size()});
    auto list = nlohmann::json::array();
    for (std::size_t i = 0; i < set.size(); ++i) {
      list.push_back({{"id", set.ids[i]}, {"label", set.labels[i]}, {"event_start", set.event_starts[i]}});
    }
    manifest.samples[split_name(split)] = list;
  }
  const auto text = manifest.to_json().dump(2) + "\n";
  write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing dataset manifest in " + dir.string());
  return DatasetManifest::from_json(nlohmann::json::parse(in));
}

VideoSet load_split(const std::filesystem::path& dir, Split split) {
  const auto manifest = read_manifest(dir);
  const auto name = split_name(split);
  const auto entry = std::find_if(manifest.files.begin(), manifest.files.end(),
                                  [&](const auto& f) { return f.split == name; });
  if (entry == manifest.files.end()) throw std::runtime_error("manifest lists no " + name + " file");
  const auto bytes = read_file(dir / entry->name);
  const auto actual = sha256_hex(bytes);
  if (actual != entry->sha256) {
    throw std::runtime_error("digest mismatch for " + entry->name + ": manifest " + entry->sha256 + ", file " + actual);
  }
  std::size_t offset = 0;
  VideoSet set;
  set.split = split;
  set.config = manifest.config;
  set.frames = decode_record(bytes, offset);
  const auto& c = manifest.config;
  if (set.frames.shape() != Shape{entry->count, c.frames, 3, c.height, c.width}) {
    throw FormatError(entry->name + " has shape " + shape_str(set.frames.shape()) + ", inconsistent with manifest", 0);
  }
  for (const auto& s : manifest.samples.at(name)) {
    set.ids.push_back(s.at("id"));
    set.labels.push_back(s.at("label"));
    set.event_starts.push_back(s.at("event_start"));
  }
  if (set.labels.size() != entry->count) throw std::runtime_error("manifest sample list does not match file count");
  return set;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  return order;
}

}  // namespace vidistill
