#ifndef RFTLAB_LEARNER_HPP
#define RFTLAB_LEARNER_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rftlab/environment.hpp"
#include "rftlab/policy.hpp"
#include "rftlab/replay.hpp"
#include "rftlab/types.hpp"

namespace rftlab {

/// raw_reward: the outcome reward itself is the per-rollout signal.
/// grpo: group-normalized reward (r - mean) / (std + std_eps).
enum class AdvantageMode { raw_reward, grpo };

/// Which sampled rollouts of a query carry ratio terms. `first` keeps only
/// the first rollout in generation order; the rest only support the group
/// statistics.
enum class MaskMode { all, first };

/// Default step sizes by feature kind; TrainConfig carries the linear one.
inline constexpr double kLinearLearningRate = 1e-2;
inline constexpr double kTabularLearningRate = 5e-2;

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t rollouts_per_query = 1;
  MaskMode gradient_mask = MaskMode::all;
  double clip_eps = 0.2;
  double kl_coeff = 0.001;
  double learning_rate = kLinearLearningRate;
  std::size_t inner_epochs = 1;
  /// Queries per optimizer step within a round; 0 means the whole batch.
  std::size_t grad_accum_chunk = 0;
  AdvantageMode advantage_mode = AdvantageMode::raw_reward;
  double std_eps = 1e-8;
  /// Replayed rewards per query joining the advantage group; 0 disables.
  std::size_t replay_rollouts = 0;
  /// Buffer capacity per query; 0 means replay_rollouts.
  std::size_t replay_capacity = 0;
  /// Divide each rollout's ratio terms by its length (off = displayed J_t).
  bool length_normalize = false;
  SamplingParams sampling;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  std::size_t effective_replay_capacity() const {
    return replay_capacity ? replay_capacity : replay_rollouts;
  }
  void validate() const;
};

struct Rollout {
  std::size_t query_index = 0;
  QueryId query_id = 0;
  TokenSequence tokens;
  std::vector<double> old_logprobs;
  int reward = 0;
  std::int64_t round = 0;
};

struct RolloutGroup {
  std::size_t query_index = 0;
  QueryId query_id = 0;
  std::vector<Rollout> rollouts;
  std::vector<char> gradient_mask;

  std::size_t masked_count() const;
  void validate() const;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  OptimizerState() = default;
  OptimizerState(std::size_t n, double beta1, double beta2, double eps);
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

double signal_raw(int reward);

/// (r_i - mean) / (pop_std + std_eps). A group whose entries are all equal
/// yields exact zeros.
std::vector<double> grpo_advantage(std::span<const double> rewards,
                                   double std_eps);

/// Per-masked-rollout signals in group order, following cfg.advantage_mode.
/// `support` optionally supplies replayed rewards per group.
std::vector<double> compute_signals(
    std::span<const RolloutGroup> groups, const TrainConfig& cfg,
    std::span<const std::vector<double>> support = {});

struct ObjectiveEval {
  double value = 0.0;      // surrogate - beta * kl
  double surrogate = 0.0;  // clipped ratio terms
  double kl = 0.0;         // summed over masked rollouts
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;
  std::size_t rollouts = 0;
  std::vector<double> gradient;  // empty unless requested
};

/// Clipped surrogate term min(r S, clip(r, 1-eps, 1+eps) S). `binds` is set
/// when the constant clipped branch is the selected one, so the term carries
/// no ratio gradient. Within 1e-12 of a binding boundary the clipped branch
/// is taken.
double clipped_term(double ratio, double signal, double clip_eps, bool& binds);

/// J = sum over masked rollouts and positions of the clipped term minus
/// kl_coeff times the summed exact KL to the reference. Old log-probs come
/// from the rollouts. `signals` lists masked rollouts in group order.
double surrogate_objective(const PolicyParams& params, const PolicyParams& ref,
                           const FeatureMap& fmap, std::span<const Query> queries,
                           std::span<const RolloutGroup> groups,
                           std::span<const double> signals,
                           const TrainConfig& cfg);

std::vector<double> objective_gradient(const PolicyParams& params,
                                       const PolicyParams& ref,
                                       const FeatureMap& fmap,
                                       std::span<const Query> queries,
                                       std::span<const RolloutGroup> groups,
                                       std::span<const double> signals,
                                       const TrainConfig& cfg);

/// Bias-corrected Adam ascent step (maximizes the objective).
void adam_step(OptimizerState& state, PolicyParams& params,
               std::span<const double> grad, double learning_rate);

/// Epoch-shuffled sampling of train queries without replacement. A batch
/// never straddles two epochs; the short tail of an epoch is skipped.
struct QuerySampler {
  std::uint64_t epoch = 0;
  std::size_t position = 0;
  std::vector<std::size_t> order;

  std::vector<std::size_t> next_batch(std::size_t batch_size, std::size_t n,
                                      std::uint64_t seed);
  friend bool operator==(const QuerySampler&, const QuerySampler&) = default;
};

struct TrainState {
  PolicyParams params;
  PolicyParams reference;
  OptimizerState optimizer;
  ReplayBuffer replay;
  QuerySampler sampler;
  std::int64_t round = 0;
  std::uint64_t rollouts_consumed = 0;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// Zero weights (uniform policy), reference = initial params.
TrainState init_train_state(const Dataset& ds, const TrainConfig& cfg);

struct RoundStats {
  std::int64_t round = 0;
  double mean_reward = 0.0;
  double objective = 0.0;  // J at the round's behaviour parameters
  double kl = 0.0;         // mean KL per gradient-bearing rollout
  double clip_fraction = 0.0;
  std::size_t rollouts_generated = 0;
  std::size_t gradient_rollouts = 0;
  double replay_staleness = 0.0;

  friend bool operator==(const RoundStats&, const RoundStats&) = default;
};

/// One training round: sample the batch, generate rollouts under the
/// current parameters (the behaviour snapshot), compute signals, push
/// rewards to the replay buffer, then run inner_epochs passes of optimizer
/// steps over chunks of grad_accum_chunk queries.
RoundStats train_round(TrainState& state, const Dataset& ds,
                       const TrainConfig& cfg);

std::string to_string(AdvantageMode m);
std::string to_string(MaskMode m);
AdvantageMode parse_advantage_mode(const std::string& s);
MaskMode parse_mask_mode(const std::string& s);

}  // namespace rftlab

#endif  // RFTLAB_LEARNER_HPP
