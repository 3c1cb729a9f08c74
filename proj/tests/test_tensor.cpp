#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "vidistill/grad_check.hpp"
#include "vidistill/ops.hpp"
#include "vidistill/rng.hpp"

using namespace vidistill;

namespace {

TensorD random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double margin = 0.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    do {
      x = rng.uniform(-1.0, 1.0);
    } while (std::abs(x) < margin);
  }
  return TensorD::from_data(std::move(shape), std::move(v), requires_grad);
}

using OpFn = std::function<TensorD(const std::vector<TensorD>&)>;

// Projects the op output onto a fixed random direction so every output entry
// contributes to the scalar being differentiated.
GradCheckReport check_op(const OpFn& op, std::vector<TensorD> inputs, Rng& rng) {
  const auto probe = op(inputs);
  const auto direction = random_tensor(probe.shape(), rng, false);
  std::function<TensorD()> fn = [&] { return sum(mul(op(inputs), direction)); };
  return grad_check<double>(fn, inputs);
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  const auto y = softmax(Tensor::from_data({3}, {0.f, 0.f, 0.f}));
  for (const auto v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
}

TEST_CASE("1x1 identity kernel leaves the input unchanged") {
  Rng rng(3);
  std::vector<float> values(2 * 3 * 5 * 4);
  for (auto& v : values) v = static_cast<float>(rng.uniform(-1, 1));
  const auto x = Tensor::from_data({2, 3, 5, 4}, values);
  std::vector<float> w(9, 0.f);
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.f;
  const auto y = conv2d(x, Tensor::from_data({3, 3, 1, 1}, w), Tensor::zeros({3}));
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < values.size(); ++i) CHECK(y.data()[i] == values[i]);
}

TEST_CASE("cross entropy of uniform logits is ln 2") {
  const std::vector<int> target{0};
  const auto loss = cross_entropy(Tensor::from_data({1, 2}, {0.f, 0.f}), target);
  CHECK(loss.item() == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("mean gradient spreads evenly") {
  auto x = Tensor::from_data({4}, {1.f, -2.f, 3.f, 0.5f}, true);
  mean(x).backward();
  for (const auto g : x.grad()) CHECK(g == 0.25f);
}

TEST_CASE("gradient of sum of squares") {
  auto x = Tensor::from_data({2}, {1.f, 2.f}, true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == 2.f);
  CHECK(x.grad()[1] == 4.f);
}

TEST_CASE("a tensor used in two branches accumulates both gradients") {
  auto x = Tensor::from_data({3}, {1.f, -1.f, 2.f}, true);
  const auto a = scale(x, 3.f);
  const auto b = mul(x, x);
  sum(add(a, b)).backward();
  CHECK(x.grad()[0] == 5.f);
  CHECK(x.grad()[1] == 1.f);
  CHECK(x.grad()[2] == 7.f);

  // A second backward without zeroing adds on top.
  sum(scale(x, 2.f)).backward();
  CHECK(x.grad()[0] == 7.f);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.f);
}

TEST_CASE("backward requires a scalar loss") {
  auto x = Tensor::from_data({2}, {1.f, 2.f}, true);
  CHECK_THROWS_AS(scale(x, 2.f).backward(), ShapeError);
}

TEST_CASE("shape errors name the operation and dims") {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({3, 2});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[3, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 3, 3, 3}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
}

TEST_CASE("non-finite outputs are rejected") {
  const auto x = Tensor::from_data({1}, {3e38f});
  CHECK_THROWS_AS(scale(x, 10.f), NumericError);
}

TEST_CASE("no tape is recorded under NoGradGuard") {
  auto x = Tensor::from_data({2}, {1.f, 2.f}, true);
  NoGradGuard guard;
  const auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("topological order visits every node once, inputs first") {
  auto x = Tensor::from_data({2}, {1.f, 2.f}, true);
  const auto y = mul(x, x);
  const auto z = add(y, x);
  const auto loss = sum(add(z, y));
  const auto order = topological_order(loss);
  CHECK(order.size() == 5);
  CHECK(order.front() == x.impl().get());
  CHECK(order.back() == loss.impl().get());
  auto pos = [&](const Tensor& t) { return std::find(order.begin(), order.end(), t.impl().get()) - order.begin(); };
  CHECK(pos(y) < pos(z));
}

TEST_CASE("softmax rows sum to one and ignore constant shifts") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto rows = pick(rng, 1, 6), cols = pick(rng, 2, 12);
    std::vector<float> q(rows * cols), shifted(rows * cols);
    const float c = static_cast<float>(rng.uniform(-50, 50));
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = static_cast<float>(rng.uniform(-5, 5));
      shifted[i] = q[i] + c;
    }
    const auto a = softmax(Tensor::from_data({rows, cols}, q));
    const auto b = softmax(Tensor::from_data({rows, cols}, shifted));
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        total += a.data()[r * cols + j];
        CHECK(std::abs(a.data()[r * cols + j] - b.data()[r * cols + j]) < 1e-6);
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("every differentiable op matches central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    const auto n = pick(rng, 1, 3), m = pick(rng, 1, 4), k = pick(rng, 1, 5);
    const Shape flat{n, m, k};
    std::vector<std::pair<std::string, GradCheckReport>> reports;

    reports.emplace_back("add", check_op([](const auto& in) { return add(in[0], in[1]); },
                                         {random_tensor(flat, rng), random_tensor(flat, rng)}, rng));
    reports.emplace_back("sub", check_op([](const auto& in) { return sub(in[0], in[1]); },
                                         {random_tensor(flat, rng), random_tensor(flat, rng)}, rng));
    reports.emplace_back("mul", check_op([](const auto& in) { return mul(in[0], in[1]); },
                                         {random_tensor(flat, rng), random_tensor(flat, rng)}, rng));
    reports.emplace_back("scale", check_op([](const auto& in) { return scale(in[0], -1.7); }, {random_tensor(flat, rng)}, rng));
    reports.emplace_back("relu", check_op([](const auto& in) { return relu(in[0]); }, {random_tensor(flat, rng, true, 0.01)}, rng));
    reports.emplace_back("sigmoid", check_op([](const auto& in) { return sigmoid(in[0]); }, {random_tensor(flat, rng)}, rng));
    reports.emplace_back("mean", check_op([](const auto& in) { return mean(in[0]); }, {random_tensor(flat, rng)}, rng));
    reports.emplace_back("matmul", check_op([](const auto& in) { return matmul(in[0], in[1]); },
                                            {random_tensor({m, k}, rng), random_tensor({k, n + 1}, rng)}, rng));
    reports.emplace_back("bmm", check_op([](const auto& in) { return bmm(in[0], in[1]); },
                                         {random_tensor({n, m, k}, rng), random_tensor({n, k, 2}, rng)}, rng));
    reports.emplace_back("linear", check_op([](const auto& in) { return linear(in[0], in[1], in[2]); },
                                            {random_tensor({n, k}, rng), random_tensor({m, k}, rng), random_tensor({m}, rng)}, rng));

    const auto channels = pick(rng, 1, 3), out_ch = pick(rng, 1, 3), side = pick(rng, 3, 7), kernel = pick(rng, 1, 3);
    const Conv2dOptions conv_opts{pick(rng, 1, 2), pick(rng, 0, 1)};
    reports.emplace_back("conv2d", check_op([conv_opts](const auto& in) { return conv2d(in[0], in[1], in[2], conv_opts); },
                                            {random_tensor({n, channels, side, side + 1}, rng),
                                             random_tensor({out_ch, channels, kernel, kernel}, rng), random_tensor({out_ch}, rng)},
                                            rng));
    const Conv2dOptions up_opts{2, 1};
    reports.emplace_back("conv_transpose2d",
                         check_op([up_opts](const auto& in) { return conv_transpose2d(in[0], in[1], in[2], up_opts); },
                                  {random_tensor({n, channels, side, side}, rng), random_tensor({channels, out_ch, 4, 4}, rng),
                                   random_tensor({out_ch}, rng)},
                                  rng));
    reports.emplace_back("global_avg_pool", check_op([](const auto& in) { return global_avg_pool(in[0]); },
                                                     {random_tensor({n, channels, side, side}, rng)}, rng));
    reports.emplace_back("reshape", check_op([&](const auto& in) { return reshape(in[0], Shape{n * m, k}); },
                                             {random_tensor(flat, rng)}, rng));
    reports.emplace_back("concat0", check_op(
                                        [](const auto& in) {
                                          return concat0<double>(std::span<const TensorD>(in.data(), in.size()));
                                        },
                                        {random_tensor({n, k}, rng), random_tensor({m, k}, rng)}, rng));
    reports.emplace_back("repeat_rows", check_op([](const auto& in) { return repeat_rows(in[0], 3); },
                                                 {random_tensor({n, k}, rng)}, rng));
    reports.emplace_back("softmax", check_op([](const auto& in) { return softmax(in[0]); }, {random_tensor(flat, rng)}, rng));
    std::vector<int> targets(n * m);
    for (auto& t : targets) t = static_cast<int>(rng.below(k + 1));
    reports.emplace_back("cross_entropy", check_op([&](const auto& in) { return cross_entropy(in[0], targets); },
                                                   {random_tensor({n * m, k + 1}, rng)}, rng));
    reports.emplace_back("weighted_sum", check_op([](const auto& in) { return weighted_sum(in[0], in[1]); },
                                                  {random_tensor({m}, rng), random_tensor({m, n, k}, rng)}, rng));

    for (const auto& [name, report] : reports) {
      CAPTURE(name);
      CHECK(report.max_rel_error < 1e-3);
    }
  }
}

TEST_CASE("random two-layer conv net passes the finite-difference check") {
  // Redraw until no pre-activation sits within a few FD steps of the relu kink.
  Rng rng(42);
  std::vector<TensorD> params;
  for (bool clear = false; !clear;) {
    params = {random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng),
              random_tensor({5, 4, 3, 3}, rng), random_tensor({5}, rng)};
    NoGradGuard no_grad;
    const auto pre = conv2d(params[0], params[1], params[2], {2, 1});
    clear = std::all_of(pre.data().begin(), pre.data().end(), [](double v) { return std::abs(v) > 0.02; });
  }
  std::function<TensorD()> fn = [&] {
    const auto h = relu(conv2d(params[0], params[1], params[2], {2, 1}));
    const auto y = conv2d(h, params[3], params[4], {1, 1});
    return mean(mul(y, y));
  };
  const auto report = grad_check<double>(fn, params);
  CHECK(report.max_rel_error < 1e-3);
  CHECK(report.passed());
}

TEST_CASE("straight-through forwards the hard value and routes grads to the soft input") {
  auto soft = Tensor::from_data({3}, {0.2f, 0.5f, 0.3f}, true);
  const auto hard = Tensor::from_data({3}, {0.f, 1.f, 0.f});
  const auto y = straight_through(soft, hard);
  CHECK(y.data()[1] == 1.f);
  sum(mul(y, Tensor::from_data({3}, {1.f, 2.f, 3.f}))).backward();
  CHECK(soft.grad()[0] == 1.f);
  CHECK(soft.grad()[2] == 3.f);
}

TEST_CASE("grad_check: linear function is exact, corrupted backward is flagged") {
  Rng rng(5);
  std::vector<TensorD> params{random_tensor({6}, rng)};
  const auto w = random_tensor({6}, rng, false);
  std::function<TensorD()> linear_fn = [&] { return sum(mul(params[0], w)); };
  CHECK(grad_check<double>(linear_fn, params).max_rel_error < 1e-9);

  // x² with a backward rule that claims 3x.
  std::function<TensorD()> corrupted = [&] {
    auto impl = std::make_shared<TensorImpl<double>>();
    impl->shape = params[0].shape();
    for (const auto v : params[0].data()) impl->data.push_back(v * v);
    impl->requires_grad = true;
    impl->node = std::make_shared<Node<double>>();
    impl->node->op = "corrupted_square";
    impl->node->inputs = {params[0].impl()};
    impl->node->backward = [p = params[0].impl()](TensorImpl<double>& o) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * p->data[i] * o.grad[i];
    };
    return sum(TensorD(impl));
  };
  const auto report = grad_check<double>(corrupted, params);
  CHECK_FALSE(report.passed());
  CHECK(report.flagged == 6);
}

TEST_CASE("identical inputs give bit-identical outputs and gradients") {
  auto run = [] {
    Rng rng(9);
    std::vector<float> xv(2 * 3 * 8 * 8), wv(4 * 3 * 3 * 3);
    for (auto& v : xv) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : wv) v = static_cast<float>(rng.uniform(-1, 1));
    auto x = Tensor::from_data({2, 3, 8, 8}, xv, true);
    auto w = Tensor::from_data({4, 3, 3, 3}, wv, true);
    const auto y = conv2d(x, w, Tensor::zeros({4}), {2, 1});
    mean(mul(y, y)).backward();
    std::vector<float> out(y.data().begin(), y.data().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check: stencils across a kink are skipped, not compared") {
  // relu(x) at x = 0 has no derivative; the tape reports 0 there.
  std::vector<TensorD> params{TensorD::from_data({3}, {0.0, 0.5, -0.5}, true)};
  const auto report = grad_check<double>([&] { return sum(relu(params[0])); }, params,
                                         {.step = 1e-3, .skip_nonsmooth = true});
  REQUIRE(report.entries.size() == 3);
  CHECK(report.entries[0].skipped);
  CHECK_FALSE(report.entries[1].skipped);
  CHECK_FALSE(report.entries[2].skipped);
  CHECK(report.skipped == 1);
  CHECK(report.checked() == 2);
  CHECK(report.passed());

  const auto unscreened = grad_check<double>([&] { return sum(relu(params[0])); }, params, {.step = 1e-3});
  CHECK(unscreened.flagged == 1);
}
