#include <cstdlib>
#include <string>

#include "doctest.h"
#include "vidistill/checks.hpp"
#include "vidistill/experiment.hpp"
#include "vidistill/run_config.hpp"

using namespace vidistill;
using nlohmann::json;

namespace {

std::string key_of(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<accepted>";
}

}  // namespace

TEST_CASE("run config: defaults and echo") {
  const auto c = parse_run_config({{"schema_version", 1}});
  CHECK(c.to_json() == RunConfig().to_json());
  CHECK(c.distill.k == 4);
  CHECK(c.distill.budget_per_class == 1);
  CHECK(c.distill.tau == 1.0);
  CHECK(c.distill.iterations == 300);
  CHECK(c.eval.epochs == 100);
  CHECK(c.eval.runs == 3);
  CHECK(c.generator.classes == 8);
  CHECK(c.generator.frames == 16);
  CHECK(c.to_json().at("schema_version") == RunConfig::kSchemaVersion);

  // The echo parses back to the same config.
  auto custom = parse_run_config(json::parse(R"({"schema_version":1,"seed":9,"distill":{"k":2,"tau":0.5},
      "eval":{"arch":"mlp"},"checks":{"gap_taus":[2,1]}})"));
  CHECK(parse_run_config(custom.to_json()).to_json() == custom.to_json());
  CHECK(custom.distill.k == 2);
  CHECK(custom.distill.tau == 0.5);
  CHECK(custom.distill.latent_lr == 1e-2);
  CHECK(custom.eval.arch == Arch::Mlp);
  CHECK(custom.checks.gap_taus == std::vector<double>{2.0, 1.0});
}

TEST_CASE("run config: the shipped default config matches the built-in defaults") {
  const auto c = load_run_config(VIDISTILL_DEFAULT_CONFIG);
  auto expected = RunConfig().to_json();
  auto actual = c.to_json();
  expected.erase("output_dir");
  actual.erase("output_dir");
  CHECK(actual == expected);
}

TEST_CASE("run config: the top-level seed drives every section") {
  const auto c = parse_run_config({{"schema_version", 1}, {"seed", 42}});
  CHECK(c.seed == 42);
  CHECK(c.generator.seed == 42);
  CHECK(c.distill.seed == 42);
  CHECK(c.eval.seed == 42);
  CHECK(c.codec.seed == derive_seed(42, {1}));
  CHECK_FALSE(c.to_json().at("distill").contains("seed"));
  CHECK(key_of({{"schema_version", 1}, {"distill", {{"seed", 3}}}}) == "distill.seed");
}

TEST_CASE("run config: rejected documents name the key") {
  CHECK(key_of({{"schema_version", 1}, {"bogus", 1}}) == "bogus");
  CHECK(key_of({{"schema_version", 1}, {"distill", {{"kk", 3}}}}) == "distill.kk");
  CHECK(key_of({{"schema_version", 1}, {"eval", {{"epochs", "many"}}}}) == "eval.epochs");
  CHECK(key_of({{"schema_version", 1}, {"eval", {{"epochs", -1}}}}) == "eval.epochs");
  CHECK(key_of({{"schema_version", 1}, {"eval", {{"epochs", 1.5}}}}) == "eval.epochs");
  CHECK(key_of({{"schema_version", 1}, {"eval", {{"arch", "rnn"}}}}) == "eval.arch");
  CHECK(key_of({{"schema_version", 1}, {"eval", {{"epochs", 0}}}}) == "eval");
  CHECK(key_of({{"schema_version", 1}, {"distill", {{"tau", 0.0}}}}) == "distill");
  CHECK(key_of({{"schema_version", 1}, {"distill", 3}}) == "distill");
  CHECK(key_of({{"schema_version", 1}, {"distill", {{"k", 17}}}}) == "distill.k");
  CHECK(key_of({{"schema_version", 1}, {"distill", {{"budget_per_class", 101}}}}) == "distill.budget_per_class");
  CHECK(key_of({{"schema_version", 1}, {"generator", {{"classes", 3}}}}) == "generator");
  CHECK(key_of({{"schema_version", 1}, {"checks", {{"gap_taus", {1, "x"}}}}}) == "checks.gap_taus");
  CHECK(key_of({{"schema_version", 1}, {"experiment", {{"workers", 0}}}}) == "experiment.workers");
  CHECK(key_of({{"seed", 1}}) == "schema_version");
  CHECK(key_of({{"schema_version", 2}}) == "schema_version");
  CHECK(key_of(json::array()) == "<root>");
  CHECK(key_of({{"schema_version", 1}, {"seed", 4}}) == "<accepted>");
}

TEST_CASE("run config: output root resolution") {
  RunConfig c;
  c.output_dir = "explicit";
  CHECK(resolve_output_dir(c) == "explicit");
  c.output_dir.clear();
  setenv("VIDISTILL_OUT", "/tmp/from_env", 1);
  CHECK(resolve_output_dir(c) == "/tmp/from_env");
  unsetenv("VIDISTILL_OUT");
  CHECK(resolve_output_dir(c) == "vidistill_out");
}

TEST_CASE("report: results.csv regenerates byte-identically") {
  std::vector<MethodRuns> runs{
      {"distilled", 0.01, 0, {eval_seed(0, 0), eval_seed(0, 1)}, {0.5, 1.0 / 3.0}},
      {"random_coreset", 0.01, 0, {eval_seed(0, 0), eval_seed(0, 1)}, {0.25, 0.75}},
      {"distilled", 0.01, 1, {eval_seed(1, 0), eval_seed(1, 1)}, {0.125, 0.2}},
      {"full_data", 1.0, 0, {eval_seed(0, 0), eval_seed(0, 1)}, {0.7, 0.72}},
  };
  const auto csv = results_csv(runs);
  CHECK(csv.rfind("method,ratio,seed,accuracy\ndistilled,0.01,0,0.5\n", 0) == 0);
  const auto parsed = parse_results_csv(csv);
  REQUIRE(parsed.size() == runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    CHECK(parsed[i].method == runs[i].method);
    CHECK(parsed[i].seeds == runs[i].seeds);
    CHECK(parsed[i].accuracies == runs[i].accuracies);
  }
  CHECK(results_csv(parsed) == csv);
  CHECK(summarize_methods(parsed).dump(2) == summarize_methods(runs).dump(2));

  const auto s = summarize_methods(runs);
  CHECK(s["distilled"]["runs"] == 4);
  CHECK(s["distilled"]["mean"].get<double>() == doctest::Approx((0.5 + 1.0 / 3.0 + 0.125 + 0.2) / 4));
  CHECK(s["random_coreset"]["std"].get<double>() == doctest::Approx(0.353553).epsilon(1e-5));
  CHECK(s["random_coreset"]["gap_to_full_data"].get<double>() == doctest::Approx(0.71 - 0.5));
  CHECK(s["full_data"]["gap_to_full_data"].get<double>() == 0.0);

  CHECK_THROWS(parse_results_csv("method,seed\n"));
  CHECK_THROWS(parse_results_csv("method,ratio,seed,accuracy\nx,0.1,abc,0.5\n"));
  CHECK_THROWS(parse_results_csv("method,ratio,seed,accuracy\nx,0.1\n"));
}

TEST_CASE("checks: gumbel frequencies and grad check on small settings") {
  CheckConfig cc;
  cc.gumbel_vectors = 2;
  cc.gumbel_trials = 20000;
  cc.gap_instances = 2;
  cc.gap_draws = 10;
  const auto r = gumbel_check(cc, 5);
  CHECK(r.max_deviation < 0.02);
  CHECK(std::count(r.frequency_csv.begin(), r.frequency_csv.end(), '\n') == 1 + 2 * 8);
  CHECK(std::count(r.gap_csv.begin(), r.gap_csv.end(), '\n') == 1 + 2 * 3 + 3);
  CHECK(r.mean_gaps.size() == 3);
  CHECK(gumbel_check(cc, 5).frequency_csv == r.frequency_csv);

  const auto g = stage2_grad_check(cc, 0);
  CHECK(g.passed());
  CHECK(g.screened.checked() > 0);
}
