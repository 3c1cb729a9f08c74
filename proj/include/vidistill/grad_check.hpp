#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "vidistill/rng.hpp"
#include "vidistill/tensor.hpp"

namespace vidistill {

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool flagged = false;
  bool skipped = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t flagged = 0;
  std::size_t skipped = 0;
  std::vector<GradCheckEntry> entries;

  std::size_t checked() const { return entries.size() - skipped; }
  bool passed() const { return flagged == 0 && checked() > 0; }
};

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor). Keeps entries whose
  /// true gradient is ~0 from dividing rounding noise by rounding noise.
  double floor = 1e-6;
  /// Entries checked per parameter tensor; 0 checks all of them.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
  /// Skip entries whose stencil straddles a kink (e.g. a ReLU switching), where
  /// central differences say nothing about the derivative. For smooth f the
  /// one-sided gap D(h) = f'(x+) - f'(x-) estimate shrinks linearly with h and
  /// the central difference barely moves when h is halved, so an entry is kept
  /// only if D(h) ≈ 2·D(h/2) and c(h) ≈ c(h/2), both within `tolerance`.
  bool skip_nonsmooth = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients of `fn` against central differences on `params`.
/// `fn` must be a pure function of the parameter values.
template <typename T>
GradCheckReport grad_check(const std::function<BasicTensor<T>()>& fn, std::span<BasicTensor<T>> params,
                           const GradCheckOptions& options = {}) {
  for (auto& p : params) p.zero_grad();
  fn().backward();
  std::vector<std::vector<T>> analytic;
  for (const auto& p : params) {
    const auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.numel(), T(0));
  }

  Rng rng(options.seed);
  GradCheckReport report;
  NoGradGuard no_grad;
  const double base = options.skip_nonsmooth ? static_cast<double>(fn().item()) : 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].data();
    std::vector<std::size_t> picks(data.size());
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    if (options.max_entries_per_param > 0 && picks.size() > options.max_entries_per_param) {
      rng.shuffle(picks.begin(), picks.end());
      picks.resize(options.max_entries_per_param);
      std::sort(picks.begin(), picks.end());
    }
    for (const auto idx : picks) {
      const T original = data[idx];
      data[idx] = static_cast<T>(original + options.step);
      const double plus = fn().item();
      data[idx] = static_cast<T>(original - options.step);
      const double minus = fn().item();
      data[idx] = original;
      GradCheckEntry e;
      e.param = pi;
      e.index = idx;
      e.analytic = analytic[pi][idx];
      e.numeric = (plus - minus) / (2.0 * options.step);
      e.rel_error = relative_error(e.analytic, e.numeric, options.floor);
      if (options.skip_nonsmooth) {
        const double half = options.step / 2.0;
        data[idx] = static_cast<T>(original + half);
        const double plus_half = fn().item();
        data[idx] = static_cast<T>(original - half);
        const double minus_half = fn().item();
        data[idx] = original;
        const double gap = (plus - 2.0 * base + minus) / options.step;
        const double gap_half = (plus_half - 2.0 * base + minus_half) / half;
        const double scale = std::max({std::abs(e.numeric), options.floor});
        const double central_half = (plus_half - minus_half) / options.step;
        e.skipped = std::abs(gap - 2.0 * gap_half) > options.tolerance * scale ||
                    std::abs(e.numeric - central_half) > options.tolerance * scale;
      }
      e.flagged = !e.skipped && e.rel_error > options.tolerance;
      if (!e.skipped) report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.flagged += e.flagged ? 1 : 0;
      report.skipped += e.skipped ? 1 : 0;
      report.entries.push_back(e);
    }
  }
  return report;
}

}  // namespace vidistill
