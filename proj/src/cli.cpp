#include "rftlab/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "rftlab/binary_io.hpp"
#include "rftlab/checkpoint.hpp"
#include "rftlab/config.hpp"
#include "rftlab/pipeline.hpp"
#include "rftlab/text.hpp"

namespace fs = std::filesystem;

namespace rftlab::cli {

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << content;
  }
  fs::rename(tmp, p);
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string checkpoint_name(std::int64_t round) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint-%010lld.bin", static_cast<long long>(round));
  return buf;
}

void prune_checkpoints(const fs::path& dir, std::size_t keep) {
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("checkpoint-", 0) == 0 && e.path().extension() == ".bin")
      found.push_back(e.path());
  }
  std::sort(found.begin(), found.end());
  for (std::size_t i = 0; i + keep < found.size(); ++i) fs::remove(found[i]);
}

void write_metrics(const RunSession& s, const fs::path& dir) {
  std::ostringstream jl, tsv;
  write_metrics_jsonl(jl, s.records());
  write_metrics_tsv(tsv, s.records());
  write_file(dir / "metrics.jsonl", jl.str());
  write_file(dir / "metrics.tsv", tsv.str());

  json info;
  info["preset"] = to_string(s.config().preset);
  info["point"] = s.point().label;
  info["variable"] = s.point().variable;
  info["value"] = s.point().value;
  info["seed"] = s.seed();
  info["batch_size"] = s.point().train.batch_size;
  info["current_rollouts"] = s.point().current_rollouts;
  info["replay_rollouts"] = s.point().replay_rollouts;
  info["rounds_completed"] = s.state().round;
  info["thresholds"] = s.config().thresholds;
  write_file(dir / "run.json", info.dump(2) + "\n");
}

void write_checkpoint(const RunSession& s, const fs::path& dir) {
  save_checkpoint(dir / checkpoint_name(s.state().round), make_checkpoint(s));
  prune_checkpoints(dir, 2);
}

/// Drives a session to `to_round`, persisting metrics at every record and a
/// checkpoint at every eval_every boundary and at the end.
void drive(RunSession& session, std::int64_t to_round, const fs::path& dir,
           std::ostream& log, std::mutex& log_mutex) {
  auto hook = [&](const RunSession& s) {
    write_metrics(s, dir);
    if (s.state().round > 0) write_checkpoint(s, dir);
    const auto& r = s.records().back();
    std::lock_guard lock(log_mutex);
    log << "[" << to_string(s.config().preset) << "] " << s.point().label
        << " seed " << s.seed() << ": round " << r.round << " train_pass1 "
        << format_double(r.train_pass1) << " test_pass1 "
        << format_double(r.test_pass1) << "\n";
  };
  session.advance(to_round, hook);
  write_metrics(session, dir);
  const auto ckpt = dir / checkpoint_name(session.state().round);
  if (!fs::exists(ckpt)) write_checkpoint(session, dir);
}

void write_manifest(const fs::path& preset_dir, const ExperimentConfig& cfg) {
  json m;
  m["artifact_version"] = kArtifactVersion;
  m["config"] = config_to_json(cfg);
  m["seeds"] = cfg.seeds;
  m["output_dir"] = preset_dir.string();
  json sums = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(preset_dir)) {
    const auto name = e.path().filename().string();
    if (name == "metrics.tsv" || name == "metrics.jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    sums[fs::relative(f, preset_dir).generic_string()] = hex64(fnv1a64(read_file(f)));
  m["checksums"] = sums;
  write_file(preset_dir / "manifest.json", m.dump(2) + "\n");
}

template <typename F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const ConstraintError& e) {
    log << "error: constraint violation: " << e.what() << "\n";
    return kExitConstraint;
  } catch (const CheckpointError& e) {
    log << "error: checkpoint: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const ConfigError& e) {
    log << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

fs::path default_output_root() {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

int cmd_run(const RunOptions& opts, std::ostream& log) {
  return guarded(log, [&] {
    std::optional<json> file;
    if (opts.config) file = load_config_file(*opts.config);
    const auto cfg = resolve_config(file, opts.preset, opts.overrides);
    const auto points = expand_sweep(cfg);
    const auto dataset = std::make_shared<const Dataset>(generate_task(cfg.task));

    const fs::path preset_dir =
        (opts.out.empty() ? default_output_root() : opts.out) / to_string(cfg.preset);
    fs::create_directories(preset_dir);
    {
      std::ostringstream ds;
      export_dataset(ds, *dataset);
      write_file(preset_dir / "dataset.txt", ds.str());
    }

    struct Job {
      const SweepPoint* point;
      std::uint64_t seed;
    };
    std::vector<Job> work;
    for (const auto& p : points)
      for (auto s : cfg.seeds) work.push_back({&p, s});

    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    auto worker = [&] {
      for (std::size_t i = next++; i < work.size(); i = next++) {
        try {
          const fs::path dir = preset_dir / work[i].point->label /
                               ("seed-" + std::to_string(work[i].seed));
          fs::create_directories(dir);
          RunSession session(cfg, *work[i].point, work[i].seed, dataset);
          drive(session, cfg.total_rounds, dir, log, log_mutex);
        } catch (...) {
          std::lock_guard lock(log_mutex);
          if (!error) error = std::current_exception();
        }
      }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(opts.jobs, work.size()));
    if (n == 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }
    if (error) std::rethrow_exception(error);
    write_manifest(preset_dir, cfg);
    log << "wrote " << work.size() << " run(s) under " << preset_dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_resume(const fs::path& checkpoint, std::int64_t additional_rounds,
               std::ostream& log) {
  return guarded(log, [&]() -> int {
    if (additional_rounds < 0) throw ConfigError("additional rounds must be >= 0");
    auto ckpt = load_checkpoint(checkpoint);
    if (additional_rounds == 0) {
      log << "nothing to do (0 additional rounds)\n";
      return kExitOk;
    }
    ExperimentConfig cfg;
    try {
      cfg = config_from_json(json::parse(ckpt.config_json));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("embedded config unreadable: ") + e.what());
    }
    const auto points = expand_sweep(cfg);
    auto it = std::find_if(points.begin(), points.end(),
                           [&](const SweepPoint& p) { return p.label == ckpt.point_label; });
    if (it == points.end())
      throw CheckpointError("sweep point '" + ckpt.point_label + "' not in embedded config");
    auto dataset = std::make_shared<const Dataset>(generate_task(cfg.task));
    if (ckpt.state.params.feature_dim() != dataset->feature_map().dim())
      throw CheckpointError("checkpoint parameters do not match the task");
    const std::int64_t target = ckpt.state.round + additional_rounds;
    cfg.total_rounds = target;
    RunSession session(cfg, *it, ckpt.seed, dataset, std::move(ckpt.state),
                       std::move(ckpt.records), ckpt.window);
    const fs::path dir = fs::absolute(checkpoint).parent_path();
    std::mutex log_mutex;
    drive(session, target, dir, log, log_mutex);
    const fs::path preset_dir = dir.parent_path().parent_path();
    if (fs::exists(preset_dir / "manifest.json")) {
      auto m = load_config_file(preset_dir / "manifest.json");
      write_manifest(preset_dir, config_from_json(m));
    }
    log << "resumed to round " << target << " in " << dir.string() << "\n";
    return kExitOk;
  });
}

namespace {

struct SeedRun {
  std::uint64_t seed;
  std::vector<MetricRecord> records;
};

struct PointRuns {
  std::string label;
  std::size_t value = 0;
  std::vector<double> thresholds;
  std::vector<SeedRun> seeds;
};

std::string fmt2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

std::string opt_round(const std::optional<std::int64_t>& r) {
  return r ? std::to_string(*r) : "-";
}

}  // namespace

int cmd_report(const fs::path& dir, std::ostream& out) {
  return guarded(out, [&]() -> int {
    if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
    std::map<std::string, std::map<std::string, PointRuns>> groups;
    for (auto it = fs::recursive_directory_iterator(dir);
         it != fs::recursive_directory_iterator(); ++it) {
      if (it->is_directory() && it->path().filename() == "report") {
        it.disable_recursion_pending();
        continue;
      }
      if (it->path().filename() != "run.json") continue;
      const auto run_dir = it->path().parent_path();
      if (!fs::exists(run_dir / "metrics.tsv")) continue;
      json info = json::parse(read_file(it->path()));
      std::ifstream ms(run_dir / "metrics.tsv");
      auto records = read_metrics_tsv(ms);
      if (records.empty()) continue;
      auto& pr = groups[info.at("preset").get<std::string>()][info.at("point").get<std::string>()];
      pr.label = info.at("point").get<std::string>();
      pr.value = info.at("value").get<std::size_t>();
      pr.thresholds = info.value("thresholds", std::vector<double>{0.5, 0.9});
      pr.seeds.push_back({info.at("seed").get<std::uint64_t>(), std::move(records)});
    }
    if (groups.empty()) throw ConfigError("no runs with metric files under " + dir.string());

    const fs::path report = dir / "report";
    fs::create_directories(report);
    std::ostringstream summary;
    summary << "preset\tpoint\tseed\tmetric\tfirst\tlast\tdelta\tthresholds\tthreshold_rounds\n";

    for (auto& [preset, points_map] : groups) {
      std::vector<PointRuns*> points;
      for (auto& [label, pr] : points_map) points.push_back(&pr);
      std::sort(points.begin(), points.end(), [](const PointRuns* a, const PointRuns* b) {
        return a->value != b->value ? a->value < b->value : a->label < b->label;
      });

      std::map<std::int64_t, std::vector<std::optional<double>>> wide_train, wide_test;
      std::ostringstream longform;
      longform << "point\tround\trollouts_consumed\ttrain_pass1\ttest_pass1\n";
      for (std::size_t pi = 0; pi < points.size(); ++pi) {
        auto& pr = *points[pi];
        std::sort(pr.seeds.begin(), pr.seeds.end(),
                  [](const SeedRun& a, const SeedRun& b) { return a.seed < b.seed; });
        // align seeds on their common prefix of rounds
        std::size_t len = pr.seeds.front().records.size();
        for (const auto& s : pr.seeds) len = std::min(len, s.records.size());
        std::vector<std::vector<MetricRecord>> runs;
        for (const auto& s : pr.seeds)
          runs.emplace_back(s.records.begin(), s.records.begin() + static_cast<std::ptrdiff_t>(len));
        const auto sum = summarize(runs, pr.thresholds);

        std::string th;
        for (std::size_t t = 0; t < pr.thresholds.size(); ++t)
          th += (t ? "," : "") + format_double(pr.thresholds[t]);
        auto emit = [&](const std::string& seed, const char* metric, const SeriesSummary& s) {
          std::string rounds;
          for (std::size_t t = 0; t < s.threshold_rounds.size(); ++t)
            rounds += (t ? "," : "") + opt_round(s.threshold_rounds[t]);
          summary << preset << '\t' << pr.label << '\t' << seed << '\t' << metric << '\t'
                  << format_double(s.first) << '\t' << format_double(s.last) << '\t'
                  << format_double(s.delta) << '\t' << th << '\t' << rounds << '\n';
        };
        for (std::size_t s = 0; s < runs.size(); ++s) {
          emit(std::to_string(pr.seeds[s].seed), "train_pass1", sum.train[s]);
          emit(std::to_string(pr.seeds[s].seed), "test_pass1", sum.test[s]);
        }
        emit("median", "train_pass1", sum.median_train_summary);
        emit("median", "test_pass1", sum.median_test_summary);

        for (std::size_t i = 0; i < sum.rounds.size(); ++i) {
          auto& rt = wide_train[sum.rounds[i]];
          auto& re = wide_test[sum.rounds[i]];
          rt.resize(points.size());
          re.resize(points.size());
          rt[pi] = sum.median_train[i];
          re[pi] = sum.median_test[i];
          longform << pr.label << '\t' << sum.rounds[i] << '\t'
                   << runs.front()[i].rollouts_consumed << '\t'
                   << format_double(sum.median_train[i]) << '\t'
                   << format_double(sum.median_test[i]) << '\n';
        }

        const auto& mt = sum.median_train_summary;
        const auto& me = sum.median_test_summary;
        out << preset << " " << pr.label << " (" << runs.size() << " seed"
            << (runs.size() == 1 ? "" : "s") << "): train Pass@1 improves "
            << fmt2(mt.delta) << " (from " << fmt2(mt.first) << " to " << fmt2(mt.last)
            << "), test Pass@1 improves " << fmt2(me.delta) << " (from "
            << fmt2(me.first) << " to " << fmt2(me.last) << ")\n";
      }

      auto write_wide = [&](const char* metric, const auto& table) {
        std::ostringstream os;
        os << "round";
        for (const auto* p : points) os << '\t' << p->label;
        os << '\n';
        for (const auto& [round, vals] : table) {
          os << round;
          for (std::size_t i = 0; i < points.size(); ++i)
            os << '\t' << (i < vals.size() && vals[i] ? format_double(*vals[i]) : "");
          os << '\n';
        }
        write_file(report / ("plot_" + preset + "_" + metric + ".tsv"), os.str());
      };
      write_wide("train_pass1", wide_train);
      write_wide("test_pass1", wide_test);
      write_file(report / ("plot_" + preset + "_by_rollouts.tsv"), longform.str());
    }
    write_file(report / "summary.tsv", summary.str());
    out << "report written to " << report.string() << "\n";
    return kExitOk;
  });
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rftlab: reinforcement fine-tuning experiments on synthetic verifiable-reward tasks"};
  app.require_subcommand(1);

  RunOptions run;
  std::string preset, config;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::optional<std::int64_t> rounds;
  std::optional<std::size_t> batch_size, rollouts, replay, budget;
  std::vector<std::string> sets, positional;
  std::string out;

  auto* run_cmd = app.add_subcommand("run", "run an experiment preset or config");
  run_cmd->add_option("--preset", preset, "exp1..exp7 or custom");
  run_cmd->add_option("--config", config, "config file (JSON; run manifests accepted)");
  run_cmd->add_option("--seed", seed, "single seed");
  run_cmd->add_option("--seeds", seeds, "comma-separated seeds");
  run_cmd->add_option("--rounds", rounds, "total training rounds");
  run_cmd->add_option("--batch-size", batch_size, "batch size B");
  run_cmd->add_option("--rollouts", rollouts, "rollouts per query G");
  run_cmd->add_option("--replay", replay, "replay rollouts k");
  run_cmd->add_option("--budget", budget, "B x G budget (exp5, exp6)");
  run_cmd->add_option("--jobs", run.jobs, "concurrent runs")->check(CLI::PositiveNumber);
  run_cmd->add_option("--out", out, std::string("output root (default $") + kOutputRootEnv + " or ./runs)");
  run_cmd->add_option("--set", sets, "key=value override (repeatable)");
  run_cmd->add_option("overrides", positional, "key=value overrides");

  std::string ckpt_path;
  std::int64_t more_rounds = 0;
  auto* resume_cmd = app.add_subcommand("resume", "continue a run from a checkpoint");
  resume_cmd->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  resume_cmd->add_option("--rounds", more_rounds, "additional rounds")->required();

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "summarize a run directory");
  report_cmd->add_option("dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (*run_cmd) {
    return guarded(std::cerr, [&] {
      if (!preset.empty()) run.preset = preset;
      if (!config.empty()) run.config = config;
      run.out = out;
      std::optional<json> file;
      if (run.config) file = load_config_file(*run.config);
      const Preset p = effective_preset(file, run.preset);
      auto& ov = run.overrides;
      if (seed) ov.push_back("seeds=[" + std::to_string(*seed) + "]");
      if (!seeds.empty()) {
        std::string list;
        for (const auto& s : split_list(seeds)) list += (list.empty() ? "" : ",") + s;
        ov.push_back("seeds=[" + list + "]");
      }
      if (rounds) ov.push_back("total_rounds=" + std::to_string(*rounds));
      if (budget) ov.push_back("budget=" + std::to_string(*budget));
      // a flag naming the preset's sweep variable pins the sweep to that value
      const bool sweeps_batch = p == Preset::exp4_batch || p == Preset::exp5_tradeoff ||
                                p == Preset::exp7_ceiling;
      if (batch_size)
        ov.push_back((sweeps_batch ? "sweep=[" + std::to_string(*batch_size) + "]"
                                   : "train.batch_size=" + std::to_string(*batch_size)));
      if (rollouts)
        ov.push_back(p == Preset::exp3_rollouts
                         ? "sweep=[" + std::to_string(*rollouts) + "]"
                         : "train.rollouts_per_query=" + std::to_string(*rollouts));
      if (replay)
        ov.push_back(p == Preset::exp6_replay
                         ? "sweep=[" + std::to_string(*replay) + "]"
                         : "train.replay_rollouts=" + std::to_string(*replay));
      ov.insert(ov.end(), sets.begin(), sets.end());
      ov.insert(ov.end(), positional.begin(), positional.end());
      return cmd_run(run, std::cerr);
    });
  }
  if (*resume_cmd) return cmd_resume(ckpt_path, more_rounds, std::cerr);
  return cmd_report(report_dir, std::cout);
}

}  // namespace rftlab::cli
