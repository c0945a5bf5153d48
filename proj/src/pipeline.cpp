#include "rftlab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "rftlab/kernels.hpp"
#include "rftlab/text.hpp"

namespace rftlab {

namespace {

struct PresetName {
  Preset preset;
  const char* name;
};

constexpr PresetName kPresetNames[] = {
    {Preset::exp1_baseline, "exp1-baseline"},
    {Preset::exp2_advantage, "exp2-advantage"},
    {Preset::exp3_rollouts, "exp3-rollouts"},
    {Preset::exp4_batch, "exp4-batch"},
    {Preset::exp5_tradeoff, "exp5-tradeoff"},
    {Preset::exp6_replay, "exp6-replay"},
    {Preset::exp7_ceiling, "exp7-ceiling"},
    {Preset::custom, "custom"},
};

}  // namespace

std::string to_string(Preset p) {
  for (const auto& e : kPresetNames)
    if (e.preset == p) return e.name;
  return "custom";
}

Preset parse_preset(const std::string& s) {
  for (const auto& e : kPresetNames) {
    const std::string name = e.name;
    // short forms: "exp1" for "exp1-baseline"
    if (s == name || (name.rfind(s + "-", 0) == 0 && s.size() == 4)) return e.preset;
  }
  throw ConfigError("unknown preset '" + s + "'");
}

void ExperimentConfig::validate() const {
  task.validate();
  train.validate();
  if (total_rounds < 0) throw ConfigError("total_rounds must be >= 0");
  if (eval_every <= 0) throw ConfigError("eval_every must be positive");
  if (eval_samples_per_query == 0)
    throw ConfigError("eval_samples_per_query must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (budget == 0) throw ConfigError("budget must be >= 1");
  if (support_rollouts == 0) throw ConfigError("support_rollouts must be >= 1");
}

ExperimentConfig preset_config(Preset p) {
  ExperimentConfig c;
  c.preset = p;
  auto& t = c.train;
  switch (p) {
    case Preset::exp1_baseline:
    case Preset::custom:
      break;
    case Preset::exp2_advantage:
      t.advantage_mode = AdvantageMode::grpo;
      t.gradient_mask = MaskMode::first;
      t.rollouts_per_query = c.support_rollouts;
      break;
    case Preset::exp3_rollouts:
      t.advantage_mode = AdvantageMode::grpo;
      c.sweep = {1, 8, 16, 32, 64};
      break;
    case Preset::exp4_batch:
      t.advantage_mode = AdvantageMode::grpo;
      t.rollouts_per_query = 8;
      c.sweep = {32, 128};
      break;
    case Preset::exp5_tradeoff:
      t.advantage_mode = AdvantageMode::grpo;
      break;
    case Preset::exp6_replay:
      t.advantage_mode = AdvantageMode::grpo;
      c.sweep = {7, 6, 4};
      break;
    case Preset::exp7_ceiling:
      t.advantage_mode = AdvantageMode::grpo;
      t.rollouts_per_query = 1;
      t.replay_rollouts = 7;
      c.sweep = {256, 512, 1024, 2048};
      c.task.n_train = 2048;
      c.task.n_test = 512;
      break;
  }
  return c;
}

std::vector<std::pair<std::size_t, std::size_t>> budget_pairs(std::size_t budget) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 1; b <= budget; ++b)
    if (budget % b == 0) out.emplace_back(b, budget / b);
  return out;
}

std::vector<SweepPoint> expand_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const TrainConfig& base = cfg.train;
  std::vector<SweepPoint> points;

  auto add = [&](std::string label, std::string variable, std::size_t value,
                 std::size_t batch, std::size_t sampled, MaskMode mask,
                 std::size_t replay) {
    if (batch > cfg.task.n_train)
      throw ConstraintError("batch size " + std::to_string(batch) +
                            " exceeds task.n_train " +
                            std::to_string(cfg.task.n_train));
    SweepPoint pt;
    pt.label = std::move(label);
    pt.variable = std::move(variable);
    pt.value = value;
    pt.train = base;
    pt.train.batch_size = batch;
    pt.train.rollouts_per_query = sampled;
    pt.train.gradient_mask = mask;
    pt.train.replay_rollouts = replay;
    if (replay > 0 && pt.train.replay_capacity != 0 &&
        pt.train.replay_capacity < replay)
      pt.train.replay_capacity = replay;
    pt.train.validate();
    pt.current_rollouts = sampled;
    pt.replay_rollouts = replay;
    points.push_back(std::move(pt));
  };
  auto sweep_or = [&](std::vector<std::size_t> fallback) {
    return cfg.sweep.empty() ? fallback : cfg.sweep;
  };
  auto need_grpo = [&] {
    if (base.advantage_mode != AdvantageMode::grpo)
      throw ConstraintError(to_string(cfg.preset) +
                            " requires train.advantage_mode grpo");
  };
  const std::size_t B = base.batch_size;
  const std::string b = "B" + std::to_string(B);

  switch (cfg.preset) {
    case Preset::exp1_baseline:
      if (base.advantage_mode != AdvantageMode::raw_reward)
        throw ConstraintError("exp1-baseline requires advantage_mode raw-reward");
      [[fallthrough]];
    case Preset::custom:
      add(b + "-G" + std::to_string(base.rollouts_per_query), "", 0, B,
          base.rollouts_per_query, base.gradient_mask, base.replay_rollouts);
      break;
    case Preset::exp2_advantage:
      need_grpo();
      add(b + "-G" + std::to_string(cfg.support_rollouts) + "-first", "", 0, B,
          cfg.support_rollouts, MaskMode::first, 0);
      break;
    case Preset::exp3_rollouts:
      need_grpo();
      for (std::size_t g : sweep_or({1, 8, 16, 32, 64})) {
        if (g == 0) throw ConstraintError("rollout counts must be >= 1");
        if (g == 1)
          add("G1", "rollouts", 1, B, cfg.support_rollouts, MaskMode::first, 0);
        else
          add("G" + std::to_string(g), "rollouts", g, B, g, MaskMode::all, 0);
      }
      break;
    case Preset::exp4_batch:
      need_grpo();
      for (std::size_t bs : sweep_or({32, 128})) {
        if (bs == 0) throw ConstraintError("batch sizes must be >= 1");
        add("B" + std::to_string(bs), "batch_size", bs, bs,
            base.rollouts_per_query, MaskMode::all, 0);
      }
      break;
    case Preset::exp5_tradeoff: {
      need_grpo();
      auto pairs = budget_pairs(cfg.budget);
      if (!cfg.sweep.empty()) {
        std::vector<std::pair<std::size_t, std::size_t>> chosen;
        for (std::size_t bs : cfg.sweep) {
          if (bs == 0 || cfg.budget % bs != 0)
            throw ConstraintError("exp5: batch size " + std::to_string(bs) +
                                  " does not divide budget " +
                                  std::to_string(cfg.budget));
          chosen.emplace_back(bs, cfg.budget / bs);
        }
        pairs = chosen;
      }
      for (auto [bs, g] : pairs) {
        if (bs * g != cfg.budget) throw ConstraintError("exp5: B x G != budget");
        add("B" + std::to_string(bs) + "-G" + std::to_string(g), "batch_size",
            bs, bs, g, MaskMode::all, 0);
      }
      break;
    }
    case Preset::exp6_replay: {
      need_grpo();
      if (cfg.budget % B != 0)
        throw ConstraintError("exp6: batch size " + std::to_string(B) +
                              " does not divide budget " +
                              std::to_string(cfg.budget));
      const std::size_t total = cfg.budget / B;
      add(b + "-c" + std::to_string(total) + "-k0", "replay", 0, B, total,
          MaskMode::all, 0);
      for (std::size_t k : sweep_or({7, 6, 4})) {
        if (k == 0) continue;
        if (k >= total)
          throw ConstraintError("exp6: replay rollouts " + std::to_string(k) +
                                " leave no current rollout within B x (c + k) = " +
                                std::to_string(cfg.budget));
        const std::size_t c = total - k;
        if (B * (c + k) != cfg.budget)
          throw ConstraintError("exp6: B x (c + k) != budget");
        add(b + "-c" + std::to_string(c) + "-k" + std::to_string(k), "replay", k,
            B, c, MaskMode::all, k);
      }
      break;
    }
    case Preset::exp7_ceiling:
      need_grpo();
      if (base.replay_rollouts == 0)
        throw ConstraintError("exp7-ceiling requires train.replay_rollouts > 0");
      for (std::size_t bs : sweep_or({256, 512, 1024, 2048})) {
        if (bs == 0) throw ConstraintError("batch sizes must be >= 1");
        add("B" + std::to_string(bs) + "-c" +
                std::to_string(base.rollouts_per_query) + "-k" +
                std::to_string(base.replay_rollouts),
            "batch_size", bs, bs, base.rollouts_per_query, MaskMode::all,
            base.replay_rollouts);
      }
      break;
  }
  return points;
}

double evaluate_pass1(const PolicyParams& params, const FeatureMap& fmap,
                      std::span<const Query> queries, const SamplingParams& sp,
                      std::size_t samples_per_query, std::uint64_t seed,
                      Stream stream) {
  if (queries.empty()) throw ConfigError("evaluate_pass1: empty query list");
  if (samples_per_query == 0)
    throw ConfigError("evaluate_pass1: samples_per_query must be >= 1");
  const auto hits = kernels::count_successes(kernels::Exec::parallel, params, fmap,
                                             queries, sp, samples_per_query, seed,
                                             stream);
  return static_cast<double>(hits) /
         static_cast<double>(queries.size() * samples_per_query);
}

double exact_pass1(const PolicyParams& params, const FeatureMap& fmap,
                   std::span<const Query> queries, const SamplingParams& sp) {
  if (queries.empty()) throw ConfigError("exact_pass1: empty query list");
  double total = 0.0;
  for (const auto& q : queries) {
    double p = 1.0;
    const std::size_t len = std::min(sp.max_len, fmap.response_len());
    if (q.answer.size() > len) continue;
    for (std::size_t pos = 0; pos < q.answer.size(); ++pos) {
      const auto dist = next_token_distribution(
          params, fmap, q, std::span(q.answer).first(pos), sp);
      p *= dist[static_cast<std::size_t>(q.answer[pos])];
    }
    // a shorter answer must be terminated by the stop token
    if (q.answer.size() < len && q.answer.back() != fmap.eos()) p = 0.0;
    total += p;
  }
  return total / static_cast<double>(queries.size());
}

RunSession::RunSession(ExperimentConfig cfg, SweepPoint point, std::uint64_t seed,
                       std::shared_ptr<const Dataset> dataset)
    : cfg_(std::move(cfg)),
      point_(std::move(point)),
      seed_(seed),
      dataset_(std::move(dataset)),
      train_(point_.train) {
  train_.seed = seed_;
  state_ = init_train_state(*dataset_, train_);
}

RunSession::RunSession(ExperimentConfig cfg, SweepPoint point, std::uint64_t seed,
                       std::shared_ptr<const Dataset> dataset, TrainState state,
                       std::vector<MetricRecord> records, Window window)
    : cfg_(std::move(cfg)),
      point_(std::move(point)),
      seed_(seed),
      dataset_(std::move(dataset)),
      train_(point_.train),
      state_(std::move(state)),
      records_(std::move(records)),
      window_(window) {
  train_.seed = seed_;
  check_compatible(state_.params, dataset_->feature_map());
}

void RunSession::record() {
  const auto fmap = dataset_->feature_map();
  const auto round = static_cast<std::uint64_t>(state_.round);
  MetricRecord r;
  r.round = state_.round;
  r.train_pass1 = evaluate_pass1(state_.params, fmap, dataset_->train,
                                 train_.sampling, cfg_.eval_samples_per_query,
                                 derive_seed(seed_, Stream::eval_train, {round}),
                                 Stream::eval_train);
  r.test_pass1 = evaluate_pass1(state_.params, fmap, dataset_->test,
                                train_.sampling, cfg_.eval_samples_per_query,
                                derive_seed(seed_, Stream::eval_test, {round}),
                                Stream::eval_test);
  if (window_.rounds > 0) {
    r.objective = window_.objective_sum / static_cast<double>(window_.rounds);
    r.kl = window_.kl_sum / static_cast<double>(window_.rounds);
  }
  r.rollouts_consumed = state_.rollouts_consumed;
  records_.push_back(r);
  window_ = {};
}

void RunSession::advance(std::int64_t to_round, const EvalHook& on_eval) {
  if (records_.empty()) {
    record();
    if (on_eval) on_eval(*this);
  }
  while (state_.round < to_round) {
    last_ = train_round(state_, *dataset_, train_);
    window_.objective_sum += last_.objective;
    window_.kl_sum += last_.kl;
    ++window_.rounds;
    if (state_.round % cfg_.eval_every == 0) {
      record();
      if (on_eval) on_eval(*this);
    }
  }
}

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg,
                                      std::size_t jobs) {
  const auto points = expand_sweep(cfg);
  auto dataset = std::make_shared<const Dataset>(generate_task(cfg.task));

  struct Job {
    std::size_t point;
    std::uint64_t seed;
  };
  std::vector<Job> work;
  for (std::size_t p = 0; p < points.size(); ++p)
    for (auto s : cfg.seeds) work.push_back({p, s});

  std::vector<RunResult> results(work.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      try {
        RunSession session(cfg, points[work[i].point], work[i].seed, dataset);
        session.advance(cfg.total_rounds);
        results[i] = {points[work[i].point].label, work[i].seed, session.records()};
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, work.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
  return results;
}

SeriesSummary summarize_series(std::span<const std::int64_t> rounds,
                               std::span<const double> values,
                               std::span<const double> thresholds) {
  if (values.empty() || rounds.size() != values.size())
    throw ConfigError("summarize: empty or misaligned series");
  SeriesSummary s;
  s.first = values.front();
  s.last = values.back();
  s.delta = s.last - s.first;
  for (double th : thresholds) {
    std::optional<std::int64_t> hit;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i] >= th) {
        hit = rounds[i];
        break;
      }
    s.threshold_rounds.push_back(hit);
  }
  return s;
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw ConfigError("median of an empty set");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

ExperimentSummary summarize(const std::vector<std::vector<MetricRecord>>& runs,
                            std::span<const double> thresholds) {
  if (runs.empty() || runs.front().empty())
    throw ConfigError("summarize: empty series");
  ExperimentSummary out;
  for (const auto& r : runs.front()) out.rounds.push_back(r.round);
  for (const auto& run : runs) {
    if (run.size() != out.rounds.size())
      throw ConfigError("summarize: runs are not aligned by round");
    std::vector<double> tr, te;
    for (std::size_t i = 0; i < run.size(); ++i) {
      if (run[i].round != out.rounds[i])
        throw ConfigError("summarize: runs are not aligned by round");
      tr.push_back(run[i].train_pass1);
      te.push_back(run[i].test_pass1);
    }
    out.train.push_back(summarize_series(out.rounds, tr, thresholds));
    out.test.push_back(summarize_series(out.rounds, te, thresholds));
  }
  for (std::size_t i = 0; i < out.rounds.size(); ++i) {
    std::vector<double> tr, te;
    for (const auto& run : runs) {
      tr.push_back(run[i].train_pass1);
      te.push_back(run[i].test_pass1);
    }
    out.median_train.push_back(median(tr));
    out.median_test.push_back(median(te));
  }
  out.median_train_summary = summarize_series(out.rounds, out.median_train, thresholds);
  out.median_test_summary = summarize_series(out.rounds, out.median_test, thresholds);
  return out;
}

void write_metrics_jsonl(std::ostream& os, std::span<const MetricRecord> records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["train_pass1"] = r.train_pass1;
    j["test_pass1"] = r.test_pass1;
    j["objective"] = r.objective;
    j["kl"] = r.kl;
    j["rollouts_consumed"] = r.rollouts_consumed;
    os << j.dump() << '\n';
  }
}

void write_metrics_tsv(std::ostream& os, std::span<const MetricRecord> records) {
  os << "round\ttrain_pass1\ttest_pass1\tobjective\tkl\trollouts_consumed\n";
  for (const auto& r : records)
    os << r.round << '\t' << format_double(r.train_pass1) << '\t'
       << format_double(r.test_pass1) << '\t' << format_double(r.objective)
       << '\t' << format_double(r.kl) << '\t' << r.rollouts_consumed << '\n';
}

std::vector<MetricRecord> read_metrics_tsv(std::istream& is) {
  std::vector<MetricRecord> out;
  std::string line;
  if (!std::getline(is, line) || line.rfind("round\t", 0) != 0)
    throw ConfigError("metrics: missing header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[6];
    for (auto& s : f)
      if (!std::getline(ls, s, '\t')) throw ConfigError("metrics: short line");
    MetricRecord r;
    r.round = std::stoll(f[0]);
    if (!parse_double(f[1], r.train_pass1) || !parse_double(f[2], r.test_pass1) ||
        !parse_double(f[3], r.objective) || !parse_double(f[4], r.kl))
      throw ConfigError("metrics: bad number in line: " + line);
    r.rollouts_consumed = std::stoull(f[5]);
    out.push_back(r);
  }
  return out;
}

}  // namespace rftlab
