#ifndef RFTLAB_PIPELINE_HPP
#define RFTLAB_PIPELINE_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rftlab/environment.hpp"
#include "rftlab/learner.hpp"

namespace rftlab {

enum class Preset {
  exp1_baseline,
  exp2_advantage,
  exp3_rollouts,
  exp4_batch,
  exp5_tradeoff,
  exp6_replay,
  exp7_ceiling,
  custom,
};

std::string to_string(Preset p);
Preset parse_preset(const std::string& s);

struct ExperimentConfig {
  Preset preset = Preset::custom;
  TrainConfig train;
  TaskSpec task;
  std::int64_t total_rounds = 5000;
  std::int64_t eval_every = 100;
  std::size_t eval_samples_per_query = 8;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// B x (rollouts per query) for exp5, B x (current + replay) for exp6.
  std::size_t budget = 256;
  /// Values of the preset's sweep variable; empty selects the preset default.
  std::vector<std::size_t> sweep;
  /// Group size behind a single gradient-bearing rollout (exp2, exp3 G=1).
  std::size_t support_rollouts = 8;
  std::vector<double> thresholds{0.5, 0.9};

  void validate() const;
};

/// Resolved defaults for a preset (the base every config file patches).
ExperimentConfig preset_config(Preset p);

struct SweepPoint {
  std::string label;
  std::string variable;  // "" for single-point presets
  std::size_t value = 0;
  TrainConfig train;
  std::size_t current_rollouts = 1;
  std::size_t replay_rollouts = 0;
};

/// Expands the preset into concrete training configurations. Throws
/// ConstraintError when a preset identity (budget product, batch bound)
/// fails, before any compute.
std::vector<SweepPoint> expand_sweep(const ExperimentConfig& cfg);

/// All (B, budget / B) with B dividing budget, ascending in B.
std::vector<std::pair<std::size_t, std::size_t>> budget_pairs(std::size_t budget);

struct MetricRecord {
  std::int64_t round = 0;
  double train_pass1 = 0.0;
  double test_pass1 = 0.0;
  double objective = 0.0;  // mean over the rounds since the previous record
  double kl = 0.0;         // likewise
  std::uint64_t rollouts_consumed = 0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

/// Mean verified reward over samples_per_query sampled responses per query.
double evaluate_pass1(const PolicyParams& params, const FeatureMap& fmap,
                      std::span<const Query> queries, const SamplingParams& sp,
                      std::size_t samples_per_query, std::uint64_t seed,
                      Stream stream = Stream::eval_test);

/// Success probability of each query summed over the full response space
/// (exhaustive enumeration), averaged over queries.
double exact_pass1(const PolicyParams& params, const FeatureMap& fmap,
                   std::span<const Query> queries, const SamplingParams& sp);

/// One (sweep point, seed) training run. Evaluates at round 0 and at every
/// multiple of eval_every.
class RunSession {
 public:
  struct Window {
    double objective_sum = 0.0;
    double kl_sum = 0.0;
    std::int64_t rounds = 0;
    friend bool operator==(const Window&, const Window&) = default;
  };

  RunSession(ExperimentConfig cfg, SweepPoint point, std::uint64_t seed,
             std::shared_ptr<const Dataset> dataset);

  /// Rebuilds a session from checkpointed state.
  RunSession(ExperimentConfig cfg, SweepPoint point, std::uint64_t seed,
             std::shared_ptr<const Dataset> dataset, TrainState state,
             std::vector<MetricRecord> records, Window window);

  using EvalHook = std::function<void(const RunSession&)>;

  /// Trains until round == to_round, invoking on_eval after every record.
  void advance(std::int64_t to_round, const EvalHook& on_eval = {});

  const ExperimentConfig& config() const { return cfg_; }
  const SweepPoint& point() const { return point_; }
  std::uint64_t seed() const { return seed_; }
  const Dataset& dataset() const { return *dataset_; }
  const TrainState& state() const { return state_; }
  const std::vector<MetricRecord>& records() const { return records_; }
  const Window& window() const { return window_; }
  const RoundStats& last_round() const { return last_; }

 private:
  void record();

  ExperimentConfig cfg_;
  SweepPoint point_;
  std::uint64_t seed_;
  std::shared_ptr<const Dataset> dataset_;
  TrainConfig train_;
  TrainState state_;
  std::vector<MetricRecord> records_;
  Window window_;
  RoundStats last_;
};

struct RunResult {
  std::string label;
  std::uint64_t seed = 0;
  std::vector<MetricRecord> records;
};

/// Runs every sweep point for every seed (points outer, seeds inner). With
/// jobs > 1 independent runs execute concurrently; results are identical.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg,
                                      std::size_t jobs = 1);

struct SeriesSummary {
  double first = 0.0;
  double last = 0.0;
  double delta = 0.0;
  /// Earliest round reaching each threshold, if any.
  std::vector<std::optional<std::int64_t>> threshold_rounds;
};

SeriesSummary summarize_series(std::span<const std::int64_t> rounds,
                               std::span<const double> values,
                               std::span<const double> thresholds);

struct ExperimentSummary {
  std::vector<std::int64_t> rounds;
  std::vector<double> median_train;
  std::vector<double> median_test;
  std::vector<SeriesSummary> train;  // per run
  std::vector<SeriesSummary> test;   // per run
  SeriesSummary median_train_summary;
  SeriesSummary median_test_summary;
};

/// Per-run start/end/delta/time-to-threshold plus pointwise medians across
/// runs (seeds). Runs must share the same record rounds.
ExperimentSummary summarize(const std::vector<std::vector<MetricRecord>>& runs,
                            std::span<const double> thresholds);

double median(std::vector<double> xs);

void write_metrics_jsonl(std::ostream& os, std::span<const MetricRecord> records);
void write_metrics_tsv(std::ostream& os, std::span<const MetricRecord> records);
std::vector<MetricRecord> read_metrics_tsv(std::istream& is);

}  // namespace rftlab

#endif  // RFTLAB_PIPELINE_HPP
