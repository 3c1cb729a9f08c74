#include "vidistill/checks.hpp"

#include <cmath>
#include <sstream>

#include "vidistill/gumbel.hpp"
#include "vidistill/micro_instance.hpp"

namespace vidistill {

bool GumbelCheckResult::gaps_nonincreasing() const {
  for (std::size_t i = 1; i < mean_gaps.size(); ++i) {
    if (mean_gaps[i] > mean_gaps[i - 1]) return false;
  }
  return true;
}

GumbelCheckResult gumbel_check(const CheckConfig& config, std::uint64_t seed) {
  GumbelCheckResult out;
  std::ostringstream freq;
  freq.precision(8);
  freq << "vector,category,logit,softmax,empirical,abs_deviation\n";
  Rng rng(derive_seed(seed, {11}));
  for (std::size_t v = 0; v < config.gumbel_vectors; ++v) {
    std::vector<double> q(config.gumbel_categories);
    for (auto& x : q) x = rng.uniform(-config.gumbel_logit_range, config.gumbel_logit_range);
    const auto f = gumbel_max_frequency(q, config.gumbel_trials, rng);
    const auto p = softmax_values(q);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double dev = std::abs(f[i] - p[i]);
      out.max_deviation = std::max(out.max_deviation, dev);
      freq << v << ',' << i << ',' << q[i] << ',' << p[i] << ',' << f[i] << ',' << dev << '\n';
    }
  }
  out.frequency_csv = freq.str();

  std::ostringstream gap;
  gap.precision(8);
  gap << "instance,tau,mean_gap\n";
  out.mean_gaps.assign(config.gap_taus.size(), 0.0);
  Rng gap_rng(derive_seed(seed, {12}));
  const std::size_t frames = 4;
  for (std::size_t n = 0; n < config.gap_instances; ++n) {
    const auto inst = make_gap_instance(gap_rng, frames, 3, 3);
    std::vector<std::vector<double>> draws;
    for (std::size_t d = 0; d < config.gap_draws; ++d) draws.push_back(sample_gumbel_values(frames, gap_rng));
    bool monotone = true;
    double prev = 0.0;
    for (std::size_t t = 0; t < config.gap_taus.size(); ++t) {
      const double g = gradient_gap(inst, draws, config.gap_taus[t]);
      if (t > 0 && g > prev) monotone = false;
      prev = g;
      out.mean_gaps[t] += g / static_cast<double>(config.gap_instances);
      gap << n << ',' << config.gap_taus[t] << ',' << g << '\n';
    }
    out.monotone_instances += monotone;
  }
  for (std::size_t t = 0; t < config.gap_taus.size(); ++t) {
    gap << "mean," << config.gap_taus[t] << ',' << out.mean_gaps[t] << '\n';
  }
  out.gap_csv = gap.str();
  return out;
}

namespace {

void append_rows(std::ostringstream& os, const char* pass, const GradCheckReport& r) {
  for (const auto& e : r.entries) {
    os << pass << ',' << e.param << ',' << e.index << ',' << e.analytic << ',' << e.numeric << ',' << e.rel_error << ','
       << (e.skipped ? 1 : 0) << '\n';
  }
}

}  // namespace

Stage2GradCheck stage2_grad_check(const CheckConfig& config, std::uint64_t seed) {
  auto m = make_micro_stage2(seed);
  auto params = m.all_params();
  const std::function<TensorD()> loss = [&] { return m.loss(); };
  Stage2GradCheck out;
  out.screened = grad_check<double>(loss, params,
                                    {.step = config.grad_step,
                                     .tolerance = config.grad_tolerance,
                                     .floor = 1e-8,
                                     .max_entries_per_param = 8,
                                     .seed = derive_seed(seed, {1}),
                                     .skip_nonsmooth = true});
  out.fine = grad_check<double>(loss, params,
                                {.step = 1e-5,
                                 .tolerance = config.grad_tolerance,
                                 .floor = 1e-7,
                                 .max_entries_per_param = 8,
                                 .seed = derive_seed(seed, {2}),
                                 .skip_nonsmooth = true});
  std::ostringstream os;
  os.precision(10);
  os << "pass,param,index,analytic,numeric,rel_error,skipped\n";
  append_rows(os, "screened", out.screened);
  append_rows(os, "fine", out.fine);
  out.csv = os.str();
  return out;
}

}  // namespace vidistill
