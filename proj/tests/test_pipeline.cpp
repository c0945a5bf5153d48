#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "rftlab/pipeline.hpp"

using namespace rftlab;

namespace {

ExperimentConfig quick(Preset p) {
  auto cfg = preset_config(p);
  cfg.total_rounds = 40;
  cfg.eval_every = 10;
  cfg.seeds = {0, 1};
  cfg.task.n_train = 64;
  cfg.task.n_test = 16;
  cfg.train.batch_size = 8;
  return cfg;
}

std::vector<std::string> labels(const std::vector<SweepPoint>& pts) {
  std::vector<std::string> out;
  for (const auto& p : pts) out.push_back(p.label);
  return out;
}

}  // namespace

TEST_CASE("budget pairs enumerate the divisors in order") {
  using P = std::vector<std::pair<std::size_t, std::size_t>>;
  CHECK(budget_pairs(12) == P{{1, 12}, {2, 6}, {3, 4}, {4, 3}, {6, 2}, {12, 1}});
  CHECK(budget_pairs(256) == P{{1, 256}, {2, 128}, {4, 64}, {8, 32}, {16, 16},
                               {32, 8}, {64, 4}, {128, 2}, {256, 1}});
  CHECK(budget_pairs(1) == P{{1, 1}});
}

TEST_CASE("preset names parse in long and short form") {
  for (auto p : {Preset::exp1_baseline, Preset::exp2_advantage, Preset::exp3_rollouts,
                 Preset::exp4_batch, Preset::exp5_tradeoff, Preset::exp6_replay,
                 Preset::exp7_ceiling, Preset::custom})
    CHECK(parse_preset(to_string(p)) == p);
  CHECK(parse_preset("exp6") == Preset::exp6_replay);
  CHECK_THROWS_AS(parse_preset("exp9"), ConfigError);
  CHECK_THROWS_AS(parse_preset("exp"), ConfigError);
}

TEST_CASE("sweep expansion per preset") {
  CHECK(labels(expand_sweep(preset_config(Preset::exp1_baseline))) ==
        std::vector<std::string>{"B32-G1"});

  const auto e2 = expand_sweep(preset_config(Preset::exp2_advantage));
  REQUIRE(e2.size() == 1);
  CHECK(e2[0].train.rollouts_per_query == 8);
  CHECK(e2[0].train.gradient_mask == MaskMode::first);

  const auto e3 = expand_sweep(preset_config(Preset::exp3_rollouts));
  CHECK(labels(e3) == std::vector<std::string>{"G1", "G8", "G16", "G32", "G64"});
  CHECK(e3[0].train.gradient_mask == MaskMode::first);
  CHECK(e3[4].train.rollouts_per_query == 64);

  CHECK(labels(expand_sweep(preset_config(Preset::exp4_batch))) ==
        std::vector<std::string>{"B32", "B128"});

  const auto e5 = expand_sweep(preset_config(Preset::exp5_tradeoff));
  REQUIRE(e5.size() == 9);
  for (const auto& p : e5) CHECK(p.train.batch_size * p.train.rollouts_per_query == 256);
  CHECK(e5.front().label == "B1-G256");
  CHECK(e5.back().label == "B256-G1");

  const auto e6 = expand_sweep(preset_config(Preset::exp6_replay));
  CHECK(labels(e6) ==
        std::vector<std::string>{"B32-c8-k0", "B32-c1-k7", "B32-c2-k6", "B32-c4-k4"});
  for (const auto& p : e6) {
    CHECK(p.train.batch_size * (p.current_rollouts + p.replay_rollouts) == 256);
    CHECK(p.train.rollouts_per_query == p.current_rollouts);
    CHECK(p.train.replay_rollouts == p.replay_rollouts);
  }

  const auto e7 = expand_sweep(preset_config(Preset::exp7_ceiling));
  CHECK(labels(e7) == std::vector<std::string>{"B256-c1-k7", "B512-c1-k7", "B1024-c1-k7",
                                               "B2048-c1-k7"});
}

TEST_CASE("preset identities are enforced before any compute") {
  auto c = preset_config(Preset::exp4_batch);
  c.sweep = {32, 512};
  CHECK_THROWS_AS(expand_sweep(c), ConstraintError);

  c = preset_config(Preset::exp5_tradeoff);
  c.sweep = {3};
  CHECK_THROWS_AS(expand_sweep(c), ConstraintError);

  c = preset_config(Preset::exp6_replay);
  c.train.batch_size = 48;
  CHECK_THROWS_AS(expand_sweep(c), ConstraintError);
  c = preset_config(Preset::exp6_replay);
  c.sweep = {8};
  CHECK_THROWS_AS(expand_sweep(c), ConstraintError);

  c = preset_config(Preset::exp1_baseline);
  c.train.advantage_mode = AdvantageMode::grpo;
  CHECK_THROWS_AS(expand_sweep(c), ConstraintError);

  c = preset_config(Preset::exp3_rollouts);
  c.train.advantage_mode = AdvantageMode::raw_reward;
  CHECK_THROWS_AS(expand_sweep(c), ConstraintError);

  c = preset_config(Preset::exp7_ceiling);
  c.train.replay_rollouts = 0;
  CHECK_THROWS_AS(expand_sweep(c), ConstraintError);

  c = preset_config(Preset::exp1_baseline);
  c.eval_every = 0;
  CHECK_THROWS_AS(expand_sweep(c), ConfigError);
}

TEST_CASE("run session records every eval interval") {
  auto cfg = preset_config(Preset::exp1_baseline);
  cfg.total_rounds = 1000;
  auto ds = std::make_shared<const Dataset>(generate_task(cfg.task));
  const auto points = expand_sweep(cfg);
  RunSession s(cfg, points[0], 0, ds);
  int hooks = 0;
  s.advance(1000, [&](const RunSession&) { ++hooks; });
  const auto& rec = s.records();
  REQUIRE(rec.size() == 11);
  CHECK(hooks == 11);
  for (std::size_t i = 0; i < rec.size(); ++i) {
    CHECK(rec[i].round == static_cast<std::int64_t>(100 * i));
    CHECK(rec[i].rollouts_consumed == 3200 * i);
    CHECK(rec[i].train_pass1 >= 0.0);
    CHECK(rec[i].train_pass1 <= 1.0);
  }
  CHECK(rec[0].objective == 0.0);
  CHECK(rec.back().train_pass1 > rec.front().train_pass1 + 0.3);
  CHECK(s.state().round == 1000);
}

TEST_CASE("experiments are deterministic and independent of the job count") {
  const auto cfg = quick(Preset::exp6_replay);
  const auto a = run_experiment(cfg, 1);
  const auto b = run_experiment(cfg, 3);
  REQUIRE(a.size() == 8);
  REQUIRE(b.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].seed == b[i].seed);
    CHECK(a[i].records == b[i].records);
  }
  CHECK(a[0].label == "B8-c32-k0");
  CHECK(a[1].seed == 1);
  // B x c rollouts per round
  CHECK(a[0].records.back().rollouts_consumed == 40u * 8 * 32);
  CHECK(a[2].label == "B8-c25-k7");
  CHECK(a[2].records.back().rollouts_consumed == 40u * 8 * 25);
  CHECK(a[0].records != a[1].records);
}

TEST_CASE("exact pass@1 agrees with a dense enumeration") {
  TaskSpec spec;
  spec.family = TaskFamily::sequence_reasoning;
  spec.vocab_size = 4;
  spec.response_len = 3;
  spec.n_train = 20;
  spec.n_test = 5;
  const auto ds = generate_task(spec);
  const auto fmap = ds.feature_map();
  PolicyParams params(fmap.dim(), 4);
  Rng rng(3);
  for (auto& w : params.weights()) w = rng.normal();
  std::vector<double> w(params.weights().begin(), params.weights().end());
  double want = 0.0;
  for (const auto& q : ds.train) {
    double p = 1.0;
    for (std::size_t pos = 0; pos < 3; ++pos)
      p *= oracle::softmax_probs(w, 4, oracle::dense_features(ds, q, pos, q.answer))
          [q.answer[pos]];
    want += p;
  }
  want /= ds.train.size();
  SamplingParams sp;
  const double exact = exact_pass1(params, fmap, ds.train, sp);
  CHECK(exact == doctest::Approx(want).epsilon(1e-12));
  const double est = evaluate_pass1(params, fmap, ds.train, sp, 4000, 7);
  CHECK(std::abs(est - exact) < 4 * oracle::binomial_sd(exact, 80000.0));
  CHECK_THROWS_AS(evaluate_pass1(params, fmap, {}, sp, 8, 1), ConfigError);
}

TEST_CASE("summaries take pointwise medians and first threshold crossings") {
  auto run = [](std::vector<double> train) {
    std::vector<MetricRecord> r;
    for (std::size_t i = 0; i < train.size(); ++i)
      r.push_back({static_cast<std::int64_t>(10 * i), train[i], train[i] / 2, 0, 0, 0});
    return r;
  };
  const std::vector<std::vector<MetricRecord>> runs{
      run({0.0, 0.4, 0.6}), run({0.1, 0.5, 0.9}), run({0.0, 0.2, 0.3})};
  const std::vector<double> th{0.5, 0.9};
  const auto s = summarize(runs, th);
  CHECK(s.median_train == std::vector<double>{0.0, 0.4, 0.6});
  CHECK(s.median_train_summary.threshold_rounds[0] == 20);
  CHECK_FALSE(s.median_train_summary.threshold_rounds[1].has_value());
  CHECK(s.train[1].threshold_rounds[0] == 10);
  CHECK(s.train[1].threshold_rounds[1] == 20);
  CHECK(s.train[1].delta == doctest::Approx(0.8));
  CHECK(s.median_test[2] == doctest::Approx(0.3));

  auto shifted = runs;
  shifted[1][1].round = 11;
  CHECK_THROWS_AS(summarize(shifted, th), ConfigError);
  CHECK(median({3.0, 1.0, 2.0, 10.0}) == 2.5);
  CHECK_THROWS_AS(median({}), ConfigError);
}

TEST_CASE("metrics files round-trip") {
  const std::vector<MetricRecord> recs{{0, 0.0625, 0.1, 0.0, 0.0, 0},
                                       {100, 0.1 + 0.2, 1.0 / 3.0, -2.5e-7, 1e-300, 3200}};
  std::stringstream tsv;
  write_metrics_tsv(tsv, recs);
  CHECK(read_metrics_tsv(tsv) == recs);
  std::stringstream jl;
  write_metrics_jsonl(jl, recs);
  std::string line;
  std::getline(jl, line);
  CHECK(line ==
        R"({"round":0,"train_pass1":0.0625,"test_pass1":0.1,"objective":0.0,"kl":0.0,"rollouts_consumed":0})");
  std::stringstream bad("nonsense\n");
  CHECK_THROWS_AS(read_metrics_tsv(bad), ConfigError);
}
