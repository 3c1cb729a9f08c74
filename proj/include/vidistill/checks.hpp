#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vidistill/grad_check.hpp"
#include "vidistill/run_config.hpp"

namespace vidistill {

struct GumbelCheckResult {
  /// vector,category,logit,softmax,empirical,abs_deviation
  std::string frequency_csv;
  /// instance,tau,mean_gap
  std::string gap_csv;
  double max_deviation = 0.0;
  /// Mean over instances, one per configured tau.
  std::vector<double> mean_gaps;
  /// Per instance: gaps never increase as tau goes down the configured list.
  std::size_t monotone_instances = 0;

  bool gaps_nonincreasing() const;
};

/// Argmax frequencies of Gumbel-perturbed random logits against softmax, and
/// the Gumbel-Softmax vs straight-through gradient gap across temperatures.
GumbelCheckResult gumbel_check(const CheckConfig& config, std::uint64_t seed);

struct Stage2GradCheck {
  GradCheckReport screened;  // at config.grad_step, kink-straddling entries skipped
  GradCheckReport fine;      // same screening at 1e-5, where far fewer stencils straddle a kink
  std::string csv;           // pass,param,index,analytic,numeric,rel_error,skipped

  bool passed() const { return screened.passed() && fine.passed(); }
};

/// Full Stage-2 loss on the micro instance (2 classes, one sequence each, T=4, K=2, 8×8), in double.
Stage2GradCheck stage2_grad_check(const CheckConfig& config, std::uint64_t seed);

}  // namespace vidistill
