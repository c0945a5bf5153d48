#include "rftlab/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rftlab/kernels.hpp"
#include "rftlab/rng.hpp"

namespace rftlab {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (rollouts_per_query == 0)
    throw ConfigError("train.rollouts_per_query must be >= 1");
  if (!(clip_eps > 0.0)) throw ConfigError("train.clip_eps must be positive");
  if (!(kl_coeff >= 0.0)) throw ConfigError("train.kl_coeff must be >= 0");
  if (!(std_eps > 0.0)) throw ConfigError("train.std_eps must be positive");
  if (!(learning_rate > 0.0))
    throw ConfigError("train.learning_rate must be positive");
  if (inner_epochs == 0) throw ConfigError("train.inner_epochs must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
    throw ConfigError("train.adam_* constants out of range");
  if (replay_rollouts > 0 && advantage_mode != AdvantageMode::grpo)
    throw ConfigError("train.replay_rollouts requires advantage_mode grpo");
  if (replay_capacity != 0 && replay_capacity < replay_rollouts)
    throw ConfigError("train.replay_capacity must be >= train.replay_rollouts");
  sampling.validate();
}

std::size_t RolloutGroup::masked_count() const {
  return static_cast<std::size_t>(
      std::count(gradient_mask.begin(), gradient_mask.end(), char{1}));
}

void RolloutGroup::validate() const {
  if (rollouts.empty()) throw std::invalid_argument("rollout group is empty");
  if (gradient_mask.size() != rollouts.size())
    throw std::invalid_argument("gradient mask size differs from group size");
  if (masked_count() == 0)
    throw std::invalid_argument("gradient mask has no true entry");
  for (const auto& r : rollouts)
    if (r.query_id != query_id)
      throw std::invalid_argument("rollout group mixes queries");
}

OptimizerState::OptimizerState(std::size_t n, double b1, double b2, double e)
    : m(n, 0.0), v(n, 0.0), beta1(b1), beta2(b2), eps(e) {}

double signal_raw(int reward) { return static_cast<double>(reward); }

std::vector<double> grpo_advantage(std::span<const double> rewards,
                                   double std_eps) {
  std::vector<double> out(rewards.size(), 0.0);
  if (rewards.empty()) return out;
  if (std::ranges::all_of(rewards, [&](double r) { return r == rewards[0]; }))
    return out;
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double denom = std::sqrt(ss / n) + std_eps;
  for (std::size_t i = 0; i < rewards.size(); ++i)
    out[i] = (rewards[i] - mean) / denom;
  return out;
}

std::vector<double> compute_signals(
    std::span<const RolloutGroup> groups, const TrainConfig& cfg,
    std::span<const std::vector<double>> support) {
  if (!support.empty() && support.size() != groups.size())
    throw std::invalid_argument("support sets must align with groups");
  std::vector<double> signals;
  std::vector<double> rewards;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    if (cfg.advantage_mode == AdvantageMode::raw_reward) {
      for (std::size_t r = 0; r < g.rollouts.size(); ++r)
        if (g.gradient_mask[r]) signals.push_back(signal_raw(g.rollouts[r].reward));
      continue;
    }
    rewards.clear();
    for (const auto& ro : g.rollouts) rewards.push_back(ro.reward);
    const auto adv = support.empty()
                         ? grpo_advantage(rewards, cfg.std_eps)
                         : advantage_with_replay(rewards, support[gi], cfg.std_eps);
    for (std::size_t r = 0; r < g.rollouts.size(); ++r)
      if (g.gradient_mask[r]) signals.push_back(adv[r]);
  }
  return signals;
}

double clipped_term(double ratio, double signal, double clip_eps, bool& binds) {
  constexpr double kBoundaryTol = 1e-12;
  const double lo = 1.0 - clip_eps;
  const double hi = 1.0 + clip_eps;
  const double clipped = std::clamp(ratio, lo, hi);
  binds = (signal > 0.0 && ratio >= hi - kBoundaryTol) ||
          (signal < 0.0 && ratio <= lo + kBoundaryTol);
  return std::min(ratio * signal, clipped * signal);
}

namespace {

kernels::ObjectiveSpec objective_spec(const TrainConfig& cfg, bool grad) {
  return {cfg.clip_eps, cfg.kl_coeff, cfg.length_normalize, grad};
}

}  // namespace

double surrogate_objective(const PolicyParams& params, const PolicyParams& ref,
                           const FeatureMap& fmap, std::span<const Query> queries,
                           std::span<const RolloutGroup> groups,
                           std::span<const double> signals,
                           const TrainConfig& cfg) {
  return kernels::objective(kernels::Exec::parallel, params, ref, fmap, queries,
                            groups, signals, objective_spec(cfg, false))
      .value;
}

std::vector<double> objective_gradient(const PolicyParams& params,
                                       const PolicyParams& ref,
                                       const FeatureMap& fmap,
                                       std::span<const Query> queries,
                                       std::span<const RolloutGroup> groups,
                                       std::span<const double> signals,
                                       const TrainConfig& cfg) {
  return kernels::objective(kernels::Exec::parallel, params, ref, fmap, queries,
                            groups, signals, objective_spec(cfg, true))
      .gradient;
}

void adam_step(OptimizerState& state, PolicyParams& params,
               std::span<const double> grad, double learning_rate) {
  auto w = params.weights();
  if (grad.size() != w.size() || state.m.size() != w.size() ||
      state.v.size() != w.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    w[i] += learning_rate * mhat / (std::sqrt(vhat) + state.eps);
  }
}

std::vector<std::size_t> QuerySampler::next_batch(std::size_t batch_size,
                                                  std::size_t n,
                                                  std::uint64_t seed) {
  if (batch_size > n)
    throw ConfigError("batch size exceeds the number of train queries");
  if (order.size() != n || position + batch_size > n) {
    ++epoch;
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, Stream::shuffle, {epoch}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    position = 0;
  }
  std::vector<std::size_t> batch(order.begin() + position,
                                 order.begin() + position + batch_size);
  position += batch_size;
  return batch;
}

TrainState init_train_state(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const auto fmap = ds.feature_map();
  TrainState s;
  s.params = PolicyParams(fmap.dim(), fmap.vocab_size());
  s.reference = s.params;
  s.optimizer = OptimizerState(s.params.size(), cfg.adam_beta1, cfg.adam_beta2,
                               cfg.adam_eps);
  if (cfg.replay_rollouts > 0)
    s.replay = ReplayBuffer(cfg.effective_replay_capacity());
  return s;
}

RoundStats train_round(TrainState& state, const Dataset& ds,
                       const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t B = cfg.batch_size;
  const std::size_t G = cfg.rollouts_per_query;
  if (B > ds.train.size())
    throw ConfigError("train.batch_size exceeds the train split size");
  const auto fmap = ds.feature_map();
  const std::int64_t round = state.round + 1;

  const auto batch = state.sampler.next_batch(B, ds.train.size(), cfg.seed);
  auto rollouts = kernels::sample_rollouts(kernels::Exec::parallel, state.params,
                                           fmap, ds.train, batch, G, cfg.sampling,
                                           cfg.seed, round);

  RoundStats stats;
  stats.round = round;
  stats.rollouts_generated = rollouts.size();
  double reward_sum = 0.0;
  for (const auto& r : rollouts) reward_sum += r.reward;
  stats.mean_reward = reward_sum / static_cast<double>(rollouts.size());

  std::vector<RolloutGroup> groups(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto& g = groups[b];
    g.query_index = batch[b];
    g.query_id = ds.train[batch[b]].id;
    g.rollouts.assign(std::make_move_iterator(rollouts.begin() + b * G),
                      std::make_move_iterator(rollouts.begin() + (b + 1) * G));
    g.gradient_mask.assign(G, cfg.gradient_mask == MaskMode::all ? 1 : 0);
    g.gradient_mask[0] = 1;
  }

  std::vector<std::vector<double>> support;
  if (cfg.replay_rollouts > 0) {
    support.resize(B);
    double stale = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      support[b] = state.replay.support_set(groups[b].query_id, cfg.replay_rollouts);
      stale += state.replay.mean_staleness(groups[b].query_id, round);
    }
    stats.replay_staleness = stale / static_cast<double>(B);
  }
  const auto signals = compute_signals(groups, cfg, support);
  if (cfg.replay_rollouts > 0) {
    // current rewards support later rounds only
    std::vector<int> rewards;
    for (const auto& g : groups) {
      rewards.clear();
      for (const auto& ro : g.rollouts) rewards.push_back(ro.reward);
      state.replay.push(g.query_id, rewards, round);
    }
  }

  std::vector<std::size_t> offsets(B + 1, 0);
  for (std::size_t b = 0; b < B; ++b)
    offsets[b + 1] = offsets[b] + groups[b].masked_count();
  stats.gradient_rollouts = offsets[B];

  const std::size_t chunk =
      cfg.grad_accum_chunk == 0 ? B : std::min(cfg.grad_accum_chunk, B);
  const std::span<const RolloutGroup> all_groups(groups);
  const std::span<const double> all_signals(signals);
  if (chunk < B) {
    const auto pre = kernels::objective(kernels::Exec::parallel, state.params,
                                        state.reference, fmap, ds.train,
                                        all_groups, all_signals,
                                        objective_spec(cfg, false));
    stats.objective = pre.value;
    stats.kl = pre.kl / static_cast<double>(pre.rollouts);
  }
  std::size_t tokens = 0, clipped = 0;
  for (std::size_t epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    for (std::size_t c0 = 0; c0 < B; c0 += chunk) {
      const std::size_t c1 = std::min(B, c0 + chunk);
      auto eval = kernels::objective(
          kernels::Exec::parallel, state.params, state.reference, fmap, ds.train,
          all_groups.subspan(c0, c1 - c0),
          all_signals.subspan(offsets[c0], offsets[c1] - offsets[c0]),
          objective_spec(cfg, true));
      if (epoch == 0 && chunk == B) {
        stats.objective = eval.value;
        stats.kl = eval.kl / static_cast<double>(eval.rollouts);
      }
      tokens += eval.tokens;
      clipped += eval.clipped_tokens;
      adam_step(state.optimizer, state.params, eval.gradient, cfg.learning_rate);
    }
  }
  stats.clip_fraction =
      tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;

  state.round = round;
  state.rollouts_consumed += stats.rollouts_generated;
  return stats;
}

std::string to_string(AdvantageMode m) {
  return m == AdvantageMode::raw_reward ? "raw-reward" : "grpo";
}
std::string to_string(MaskMode m) { return m == MaskMode::all ? "all" : "first"; }

AdvantageMode parse_advantage_mode(const std::string& s) {
  if (s == "raw-reward") return AdvantageMode::raw_reward;
  if (s == "grpo") return AdvantageMode::grpo;
  throw ConfigError("unknown advantage mode '" + s + "'");
}
MaskMode parse_mask_mode(const std::string& s) {
  if (s == "all") return MaskMode::all;
  if (s == "first") return MaskMode::first;
  throw ConfigError("unknown gradient mask '" + s + "'");
}

}  // namespace rftlab
