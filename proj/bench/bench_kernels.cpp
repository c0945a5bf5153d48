// Serial reference vs OpenMP kernels on one training-round workload.
//
//   bench_kernels [batch] [rollouts] [repeats]

#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <numeric>

#include "rftlab/kernels.hpp"
#include "rftlab/learner.hpp"

using namespace rftlab;
using Clock = std::chrono::steady_clock;

namespace {

template <typename F>
double time_ms(int repeats, F&& f) {
  const auto t0 = Clock::now();
  for (int i = 0; i < repeats; ++i) f();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / repeats;
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t batch = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 256;
  const std::size_t per_query = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 8;
  const int repeats = argc > 3 ? std::atoi(argv[3]) : 5;

  TaskSpec spec;
  spec.family = TaskFamily::sequence_reasoning;
  spec.vocab_size = 8;
  spec.response_len = 3;
  spec.n_train = std::max<std::size_t>(batch, 256);
  const auto ds = generate_task(spec);
  const auto fmap = ds.feature_map();

  PolicyParams params(fmap.dim(), fmap.vocab_size());
  Rng rng(1);
  for (auto& w : params.weights()) w = 0.1 * rng.normal();
  const PolicyParams ref(fmap.dim(), fmap.vocab_size());

  std::vector<std::size_t> idx(batch);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SamplingParams sp;

  auto rollouts = kernels::sample_rollouts(kernels::Exec::serial, params, fmap, ds.train,
                                           idx, per_query, sp, 3, 1);
  std::vector<RolloutGroup> groups(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    groups[b].query_index = idx[b];
    groups[b].query_id = ds.train[idx[b]].id;
    groups[b].rollouts.assign(rollouts.begin() + b * per_query,
                              rollouts.begin() + (b + 1) * per_query);
    groups[b].gradient_mask.assign(per_query, 1);
  }
  TrainConfig cfg;
  cfg.advantage_mode = AdvantageMode::grpo;
  const auto signals = compute_signals(groups, cfg);
  const kernels::ObjectiveSpec ospec{0.2, 0.001, false, true};

  std::cout << "threads " << omp_get_max_threads() << ", batch " << batch
            << ", rollouts/query " << per_query << ", repeats " << repeats << "\n";
  for (auto exec : {kernels::Exec::serial, kernels::Exec::parallel}) {
    const char* name = exec == kernels::Exec::serial ? "serial  " : "parallel";
    const double t_sample = time_ms(repeats, [&] {
      kernels::sample_rollouts(exec, params, fmap, ds.train, idx, per_query, sp, 3, 1);
    });
    const double t_grad = time_ms(repeats, [&] {
      kernels::objective(exec, params, ref, fmap, ds.train, groups, signals, ospec);
    });
    const double t_eval = time_ms(repeats, [&] {
      kernels::count_successes(exec, params, fmap, ds.train, sp, 8, 5, Stream::eval_train);
    });
    std::cout << name << "  sample " << t_sample << " ms  objective+grad " << t_grad
              << " ms  eval " << t_eval << " ms\n";
  }
  return 0;
}
