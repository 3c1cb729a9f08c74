#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"
#include "vidistill/eval.hpp"
#include "vidistill/gumbel.hpp"

using namespace vidistill;

namespace {

GenConfig tiny_config() {
  GenConfig g;
  g.classes = 4;
  g.train_per_class = 5;
  g.test_per_class = 3;
  g.frames = 8;
  g.height = 16;
  g.width = 16;
  g.seed = 4;
  return g;
}

// A hand-built split; `fill(v, t, i)` gives element i of frame t of video v.
template <typename F>
VideoSet make_set(std::size_t videos, std::size_t frames, F fill, std::size_t side = 16) {
  VideoSet s;
  s.config = tiny_config();
  s.config.frames = frames;
  s.config.classes = 2;
  s.config.height = side;
  s.config.width = side;
  const std::size_t per = 3 * side * side;
  std::vector<float> data;
  for (std::size_t v = 0; v < videos; ++v) {
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t i = 0; i < per; ++i) data.push_back(fill(v, t, i));
    }
    s.labels.push_back(0);
    s.event_starts.push_back(0);
    s.ids.push_back(v);
  }
  s.frames = Tensor::from_data({videos, frames, 3, side, side}, std::move(data));
  return s;
}

}  // namespace

TEST_CASE("uniform indices") {
  CHECK(uniform_indices(16, 4) == std::vector<std::size_t>{0, 4, 8, 12});
  CHECK(uniform_indices(5, 5) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(uniform_indices(5, 2) == std::vector<std::size_t>{0, 2});
  CHECK(first_k_indices(6, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(uniform_indices(3, 4), std::invalid_argument);
  // Stride-4 sampling hits a width-2 event for 7 of its 15 possible starts.
  std::size_t hits = 0;
  const auto idx = uniform_indices(16, 4);
  for (std::size_t s = 0; s <= 14; ++s) {
    hits += std::any_of(idx.begin(), idx.end(), [&](std::size_t i) { return i >= s && i < s + 2; });
  }
  CHECK(hits == 7);
}

TEST_CASE("pixel-diff indices") {
  const std::size_t per = 12;
  SUBCASE("static video keeps the earliest frames") {
    const std::vector<float> video(6 * per, 0.3f);
    CHECK(pixel_diff_indices(video, 6, 2) == std::vector<std::size_t>{0, 1});
  }
  SUBCASE("one abrupt change") {
    std::vector<float> video(10 * per, 0.f);
    std::fill(video.begin() + 7 * per, video.end(), 1.f);
    CHECK(pixel_diff_indices(video, 10, 2) == std::vector<std::size_t>{0, 7});
  }
  SUBCASE("random videos match a sort oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t t = 2 + rng.below(10);
      const std::size_t k = 1 + rng.below(t);
      std::vector<float> video(t * per);
      for (auto& v : video) v = static_cast<float>(rng.below(3));
      std::vector<std::pair<double, std::size_t>> keyed{{-1e300, 0}};
      for (std::size_t f = 1; f < t; ++f) {
        double d = 0.0;
        for (std::size_t i = 0; i < per; ++i) d += std::abs(video[f * per + i] - video[(f - 1) * per + i]);
        keyed.push_back({-d, f});
      }
      std::sort(keyed.begin(), keyed.end());
      std::vector<std::size_t> expected;
      for (std::size_t i = 0; i < k; ++i) expected.push_back(keyed[i].second);
      std::sort(expected.begin(), expected.end());
      const auto got = pixel_diff_indices(video, t, k);
      CHECK(got == expected);
      CHECK(std::adjacent_find(got.begin(), got.end()) == got.end());
    }
  }
}

TEST_CASE("clip selection and coresets") {
  const auto g = tiny_config();
  const auto train = generate_split(g, Split::Train);
  const auto clips = select_clips(train, SelectionRule::Uniform, 4);
  CHECK(clips.clips.shape() == Shape{train.size(), 12, 16, 16});
  const std::size_t frame = 3 * 16 * 16;
  // Clip slot 2 of video 3 is frame 4 of that video.
  const auto video = train.video_data(3);
  CHECK(std::equal(video.begin() + 4 * frame, video.begin() + 5 * frame, clips.clips.data().begin() + (3 * 4 + 2) * frame));
  CHECK_THROWS_AS(select_clips(train, SelectionRule::ScorerTopK, 4), std::invalid_argument);

  const std::vector<std::size_t> per_class{1, 2, 1, 1};
  const auto a = random_coreset(train, per_class, 4, 8);
  const auto b = random_coreset(train, per_class, 4, 8);
  CHECK(a.ids == b.ids);
  CHECK(a.clips.size() == 5);
  std::set<std::uint64_t> train_ids(train.ids.begin(), train.ids.end());
  for (const auto id : a.ids) CHECK(train_ids.count(id) == 1);

  // Full budget with K = T reproduces the original videos.
  const auto full = random_coreset(train, std::vector<std::size_t>(4, g.train_per_class), g.frames, 1);
  CHECK(full.ids == train.ids);
  CHECK(std::equal(full.clips.clips.data().begin(), full.clips.clips.data().end(), train.frames.data().begin()));

  CHECK_THROWS_AS(random_coreset(train, std::vector<std::size_t>{9, 1, 1, 1}, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(random_coreset(generate_split(g, Split::Test), per_class, 4, 1), SplitError);
}

TEST_CASE("training: memorization, determinism and split guard") {
  const auto g = tiny_config();
  const auto train = generate_split(g, Split::Train);
  const auto test = generate_split(g, Split::Test);
  EvalConfig ec;
  ec.seed = 2;

  const std::size_t one[1] = {6};
  const auto single = select_clips(train, one, SelectionRule::Uniform, 4);
  const auto model = train_from_scratch(single, ec, 3);
  CHECK(evaluate_accuracy(model, single) == 1.0);

  ec.epochs = 3;
  const auto data = select_clips(train, SelectionRule::Uniform, 4);
  const auto m1 = train_from_scratch(data, ec, 5);
  const auto m2 = train_from_scratch(data, ec, 5);
  for (std::size_t i = 0; i < m1.params.size(); ++i) {
    CHECK(std::equal(m1.params[i].data().begin(), m1.params[i].data().end(), m2.params[i].data().begin()));
  }
  for (const auto arch : {Arch::ConvNet3, Arch::Mlp}) {
    auto cfg = ec;
    cfg.arch = arch;
    CHECK(train_from_scratch(data, cfg, 5).arch == arch);
  }
  CHECK_THROWS_AS(train_from_scratch(select_clips(test, SelectionRule::Uniform, 4), ec, 5), SplitError);

  auto bad = ec;
  bad.epochs = 0;
  CHECK_THROWS_AS(train_from_scratch(data, bad, 5), std::invalid_argument);
}

TEST_CASE("accuracy: chance level, counting oracle and class check") {
  GenConfig g = tiny_config();
  g.classes = 8;
  g.test_per_class = 50;
  const auto test = generate_split(g, Split::Test);
  const auto clips = select_clips(test, SelectionRule::Uniform, 4);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto model = init_classifier(Arch::ConvNet3, 12, 16, 16, 8, rng);
    const double acc = evaluate_accuracy(model, clips);
    const auto predictions = predict(model, clips);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      // Recompute each prediction from the raw logits of that clip alone.
      NoGradGuard ng;
      const std::size_t per = clips.clips.numel() / clips.size();
      const auto one = Tensor::from_data({1, 12, 16, 16}, {clips.clips.data().begin() + i * per,
                                                          clips.clips.data().begin() + (i + 1) * per});
      const auto logits = classify(model, one);
      const auto best = std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin();
      CHECK(best == predictions[i]);
      correct += best == clips.labels[i];
    }
    CHECK(acc == static_cast<double>(correct) / static_cast<double>(clips.size()));
    total += acc;
  }
  CHECK(std::abs(total / 5.0 - 0.125) < 0.05);

  Rng rng(1);
  const auto four = init_classifier(Arch::ConvNet3, 12, 16, 16, 4, rng);
  CHECK_THROWS_AS(evaluate_accuracy(four, clips), std::invalid_argument);
}

TEST_CASE("eval config: json round trip and validation") {
  EvalConfig c;
  c.arch = Arch::Mlp;
  c.epochs = 7;
  c.seed = 99;
  nlohmann::json j = c;
  const auto back = j.get<EvalConfig>();
  CHECK(back.arch == Arch::Mlp);
  CHECK(back.epochs == 7);
  CHECK(back.seed == 99);
  CHECK(back.lr == c.lr);
  CHECK(nlohmann::json(back) == j);
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("report: mean and sample standard deviation") {
  const std::vector<double> same{0.5, 0.5, 0.5};
  CHECK(summarize(same).mean == doctest::Approx(0.5));
  CHECK(summarize(same).std == 0.0);
  const std::vector<double> two{0.4, 0.6};
  CHECK(summarize(two).mean == doctest::Approx(0.5));
  CHECK(summarize(two).std == doctest::Approx(0.1414).epsilon(1e-3));
  CHECK_THROWS(summarize(std::vector<double>{}));
}

TEST_CASE("pearson correlation") {
  const std::vector<float> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1}, flat{1, 1, 1, 1};
  CHECK(pearson(a, b) == doctest::Approx(1.0));
  CHECK(pearson(a, c) == doctest::Approx(-1.0));
  bool degenerate = false;
  CHECK(pearson(a, flat, &degenerate) == 0.0);
  CHECK(degenerate);
  CHECK_THROWS_AS(pearson(a, std::vector<float>{1, 2}), ShapeError);
}

TEST_CASE("redundancy matrices") {
  SUBCASE("identical frames give an all-ones intra matrix") {
    const auto set = make_set(3, 5, [](std::size_t v, std::size_t, std::size_t i) {
      return static_cast<float>((i * 7 + v * 3) % 11) / 11.f;
    });
    const auto r = redundancy_matrices(set, 0);
    REQUIRE(r.intra.size() == 3);
    for (const auto& m : r.intra) {
      for (const double v : m.values) CHECK(v == doctest::Approx(1.0));
    }
    CHECK(r.inter.rows == 3);
  }
  SUBCASE("independent noise frames are uncorrelated") {
    Rng rng(5);
    const auto set = make_set(
        4, 6, [&](std::size_t, std::size_t, std::size_t) { return static_cast<float>(rng.uniform()); }, 64);
    const auto r = redundancy_matrices(set, 0);
    for (const auto& m : r.intra) {
      for (std::size_t i = 0; i < m.rows; ++i) {
        CHECK(m.at(i, i) == doctest::Approx(1.0));
        for (std::size_t j = 0; j < m.cols; ++j) {
          CHECK(m.at(i, j) == m.at(j, i));
          if (i != j) CHECK(std::abs(m.at(i, j)) < 0.05);
        }
      }
    }
    CHECK(r.degenerate_entries == 0);
  }
  SUBCASE("a constant frame is flagged") {
    const auto set = make_set(2, 3, [](std::size_t, std::size_t t, std::size_t i) {
      return t == 1 ? 0.5f : static_cast<float>(i % 5);
    });
    const auto r = redundancy_matrices(set, 0);
    CHECK(r.degenerate_entries > 0);
    CHECK(r.intra[0].at(0, 1) == 0.0);
  }
  SUBCASE("generated videos: intra exceeds inter") {
    GenConfig g;
    g.train_per_class = 12;
    const auto train = generate_split(g, Split::Train);
    for (int c = 0; c < 8; ++c) {
      const auto r = redundancy_matrices(train, c);
      CHECK(mean_adjacent_correlation(r) > mean_off_diagonal(r.inter));
    }
  }
  SUBCASE("CSV layout") {
    Matrix m{2, 2, {1.0, 0.25, 0.25, 1.0}};
    CHECK(matrix_csv(m) == "1.000000,0.250000\n0.250000,1.000000\n");
  }
  SUBCASE("needs two videos") {
    const auto set = make_set(1, 3, [](std::size_t, std::size_t, std::size_t i) { return static_cast<float>(i % 3); });
    CHECK_THROWS_AS(redundancy_matrices(set, 0), std::invalid_argument);
  }
}

TEST_CASE("parallel_map preserves order and propagates errors") {
  const auto out = parallel_map<int>(20, 4, [](std::size_t i) { return static_cast<int>(i * i); });
  for (std::size_t i = 0; i < 20; ++i) CHECK(out[i] == static_cast<int>(i * i));
  CHECK_THROWS_AS(parallel_map<int>(5, 3,
                                    [](std::size_t i) -> int {
                                      if (i == 3) throw std::runtime_error("boom");
                                      return 0;
                                    }),
                  std::runtime_error);
}
