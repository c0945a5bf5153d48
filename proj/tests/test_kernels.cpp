#include <omp.h>

#include "doctest.h"
#include "oracles.hpp"
#include "rftlab/kernels.hpp"

using namespace rftlab;
using kernels::Exec;

namespace {

struct Fixture {
  Dataset ds;
  FeatureMap fmap;
  PolicyParams params, ref;
  std::vector<std::size_t> batch;

  explicit Fixture(FeatureKind kind) {
    TaskSpec s;
    s.family = TaskFamily::sequence_reasoning;
    s.vocab_size = 6;
    s.response_len = 3;
    s.n_train = 64;
    s.n_test = 16;
    s.feature_kind = kind;
    ds = generate_task(s);
    fmap = ds.feature_map();
    params = PolicyParams(fmap.dim(), 6);
    ref = PolicyParams(fmap.dim(), 6);
    Rng rng(3);
    for (auto& w : params.weights()) w = 0.6 * rng.normal();
    for (auto& w : ref.weights()) w = 0.6 * rng.normal();
    for (std::size_t i = 0; i < 48; ++i) batch.push_back((i * 7) % 64);
  }

  std::vector<RolloutGroup> groups(const std::vector<Rollout>& rs, std::size_t G) const {
    std::vector<RolloutGroup> out(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      out[b].query_index = batch[b];
      out[b].query_id = ds.train[batch[b]].id;
      for (std::size_t g = 0; g < G; ++g) out[b].rollouts.push_back(rs[b * G + g]);
      out[b].gradient_mask.assign(G, 1);
      out[b].gradient_mask[G - 1] = G > 1 ? 0 : 1;
    }
    return out;
  }
};

void run_equivalence(FeatureKind kind, int threads) {
  omp_set_num_threads(threads);
  Fixture f(kind);
  SamplingParams sp;
  sp.temperature = 1.3;
  const auto a = kernels::sample_rollouts(Exec::serial, f.params, f.fmap, f.ds.train,
                                          f.batch, 4, sp, 11, 5);
  const auto b = kernels::sample_rollouts(Exec::parallel, f.params, f.fmap, f.ds.train,
                                          f.batch, 4, sp, 11, 5);
  REQUIRE(a.size() == 192);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].old_logprobs == b[i].old_logprobs);
    CHECK(a[i].reward == b[i].reward);
  }

  // move the policy so ratios differ from one
  PolicyParams moved = f.params;
  Rng rng(4);
  for (auto& w : moved.weights()) w += 0.2 * rng.normal();
  const auto groups = f.groups(a, 4);
  // rewards are almost always zero at this size, so use arbitrary signals
  std::vector<double> signals;
  for (const auto& g : groups)
    for (std::size_t r = 0; r < g.rollouts.size(); ++r)
      if (g.gradient_mask[r]) signals.push_back(rng.normal());
  for (bool norm : {false, true}) {
    const kernels::ObjectiveSpec spec{0.2, 0.01, norm, true};
    const auto s = kernels::objective(Exec::serial, moved, f.ref, f.fmap, f.ds.train,
                                      groups, signals, spec);
    const auto p = kernels::objective(Exec::parallel, moved, f.ref, f.fmap, f.ds.train,
                                      groups, signals, spec);
    CHECK(s.value == p.value);
    CHECK(s.kl == p.kl);
    CHECK(s.tokens == p.tokens);
    CHECK(s.clipped_tokens == p.clipped_tokens);
    CHECK(s.clipped_tokens > 0);
    CHECK(s.gradient == p.gradient);
  }

  const auto cs = kernels::count_successes(Exec::serial, f.params, f.fmap, f.ds.test, sp,
                                           50, 2, Stream::eval_test);
  const auto cp = kernels::count_successes(Exec::parallel, f.params, f.fmap, f.ds.test, sp,
                                           50, 2, Stream::eval_test);
  CHECK(cs == cp);
}

}  // namespace

TEST_CASE("parallel kernels reproduce the serial reference bit for bit") {
  const int saved = omp_get_max_threads();
  for (int threads : {1, 2, 4}) {
    run_equivalence(FeatureKind::linear, threads);
    run_equivalence(FeatureKind::tabular, threads);
  }
  omp_set_num_threads(saved);
}

TEST_CASE("rollout items are keyed by position, not by call") {
  Fixture f(FeatureKind::linear);
  const std::vector<std::size_t> one{f.batch[3]};
  const auto all = kernels::sample_rollouts(Exec::serial, f.params, f.fmap, f.ds.train,
                                            f.batch, 2, SamplingParams{}, 9, 1);
  const auto other_round = kernels::sample_rollouts(
      Exec::serial, f.params, f.fmap, f.ds.train, f.batch, 2, SamplingParams{}, 9, 2);
  bool differs = false;
  for (std::size_t i = 0; i < all.size(); ++i)
    differs = differs || all[i].tokens != other_round[i].tokens;
  CHECK(differs);
  CHECK(all[6].query_index == f.batch[3]);
  CHECK(all[6].round == 1);
}

TEST_CASE("serial objective agrees with the dense oracle") {
  Fixture f(FeatureKind::linear);
  const auto rs = kernels::sample_rollouts(Exec::serial, f.params, f.fmap, f.ds.train,
                                           f.batch, 2, SamplingParams{}, 1, 1);
  const auto groups = f.groups(rs, 2);
  TrainConfig cfg;
  const auto signals = compute_signals(groups, cfg);
  PolicyParams moved = f.params;
  Rng rng(6);
  for (auto& w : moved.weights()) w += 0.3 * rng.normal();
  const auto e = kernels::objective(Exec::serial, moved, f.ref, f.fmap, f.ds.train, groups,
                                    signals, {0.2, 0.05, false, false});
  std::vector<double> w(moved.weights().begin(), moved.weights().end());
  std::vector<double> wr(f.ref.weights().begin(), f.ref.weights().end());
  CHECK(e.value == doctest::Approx(oracle::objective(w, wr, f.ds, groups, signals, 0.2, 0.05))
                       .epsilon(1e-12));
  CHECK(e.gradient.empty());
  CHECK(e.rollouts == 48);
}
