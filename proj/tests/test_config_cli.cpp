#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "rftlab/checkpoint.hpp"
#include "rftlab/cli.hpp"
#include "rftlab/config.hpp"

using namespace rftlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("rftlab-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) ++n;
  return n;
}

cli::RunOptions small_run(const fs::path& out, const std::string& preset,
                          std::int64_t rounds) {
  cli::RunOptions o;
  o.preset = preset;
  o.out = out;
  o.overrides = {"total_rounds=" + std::to_string(rounds), "eval_every=20", "seeds=[3]",
                 "task.n_train=64", "task.n_test=16", "train.batch_size=8"};
  return o;
}

fs::path latest_checkpoint(const fs::path& dir) {
  fs::path best;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".bin" && e.path() > best) best = e.path();
  return best;
}

int run_main(std::vector<std::string> args) {
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config tree round-trips through json") {
  auto cfg = preset_config(Preset::exp6_replay);
  cfg.train.sampling.top_p = 0.9;
  cfg.task.structure = AnswerStructure::none;
  cfg.seeds = {4, 9};
  const auto j = config_to_json(cfg);
  const auto back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(back.preset == Preset::exp6_replay);
  CHECK(back.train.sampling.top_p == 0.9);
  CHECK(back.task.structure == AnswerStructure::none);
  CHECK(back.seeds == std::vector<std::uint64_t>{4, 9});
}

TEST_CASE("overrides patch known keys and reject unknown ones") {
  auto tree = config_to_json(preset_config(Preset::exp1_baseline));
  apply_override(tree, "train.learning_rate=0.05");
  apply_override(tree, "task.family=sequence-reasoning");
  apply_override(tree, "seeds=[1,2]");
  CHECK(tree["train"]["learning_rate"] == 0.05);
  CHECK(tree["task"]["family"] == "sequence-reasoning");
  CHECK_THROWS_WITH_AS(apply_override(tree, "train.lerning_rate=1"),
                       "unknown config key 'train.lerning_rate'", ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "train=3"), ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "novalue"), ConfigError);
}

TEST_CASE("resolve_config layers preset, file and overrides") {
  json file = {{"preset", "exp4-batch"}, {"train", {{"rollouts_per_query", 4}}}};
  const auto cfg = resolve_config(file, std::nullopt, {"total_rounds=7"});
  CHECK(cfg.preset == Preset::exp4_batch);
  CHECK(cfg.train.rollouts_per_query == 4);
  CHECK(cfg.train.advantage_mode == AdvantageMode::grpo);
  CHECK(cfg.total_rounds == 7);
  CHECK(resolve_config(file, std::string("exp1"), {}).preset == Preset::exp1_baseline);

  json bad = {{"train", {{"clip", 0.3}}}};
  CHECK_THROWS_WITH_AS(resolve_config(bad, std::nullopt, {}),
                       "unknown config key 'train.clip'", ConfigError);
  json typed = {{"total_rounds", "many"}};
  CHECK_THROWS_AS(resolve_config(typed, std::nullopt, {}), ConfigError);
  json negative = {{"train", {{"batch_size", -4}}}};
  CHECK_THROWS_AS(resolve_config(negative, std::nullopt, {}), ConfigError);
}

TEST_CASE("checkpoints round-trip and reject corruption") {
  auto cfg = preset_config(Preset::exp6_replay);
  cfg.task.n_train = 64;
  cfg.train.batch_size = 8;
  auto ds = std::make_shared<const Dataset>(generate_task(cfg.task));
  const auto points = expand_sweep(cfg);
  RunSession s(cfg, points[1], 2, ds);
  s.advance(30);
  const auto ck = make_checkpoint(s);
  const auto bytes = encode_checkpoint(ck);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.state == s.state());
  CHECK(back.records == s.records());
  CHECK(back.window == s.window());
  CHECK(back.point_label == "B8-c25-k7");
  CHECK(back.seed == 2);
  CHECK(encode_checkpoint(back) == bytes);

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(flipped), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), CheckpointError);
  std::string version = bytes;
  version[8] = 7;
  CHECK_THROWS_AS(decode_checkpoint(version), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint("RFTL"), CheckpointError);
}

TEST_CASE("run writes the documented layout and reruns are byte-identical") {
  TempDir a, b;
  std::ostringstream log;
  REQUIRE(cli::cmd_run(small_run(a.path, "exp1", 60), log) == cli::kExitOk);
  REQUIRE(cli::cmd_run(small_run(b.path, "exp1", 60), log) == cli::kExitOk);
  const auto run = a.path / "exp1-baseline" / "B8-G1" / "seed-3";
  for (const char* f : {"run.json", "metrics.jsonl", "metrics.tsv"})
    CHECK(fs::exists(run / f));
  CHECK(fs::exists(run / "checkpoint-0000000060.bin"));
  CHECK(fs::exists(run / "checkpoint-0000000040.bin"));
  CHECK_FALSE(fs::exists(run / "checkpoint-0000000020.bin"));
  CHECK(fs::exists(a.path / "exp1-baseline" / "dataset.txt"));
  const auto brun = b.path / "exp1-baseline" / "B8-G1" / "seed-3";
  CHECK(slurp(run / "metrics.tsv") == slurp(brun / "metrics.tsv"));
  CHECK(slurp(run / "metrics.jsonl") == slurp(brun / "metrics.jsonl"));

  const auto manifest = json::parse(slurp(a.path / "exp1-baseline" / "manifest.json"));
  CHECK(manifest["artifact_version"] == cli::kArtifactVersion);
  CHECK(manifest["checksums"].contains("B8-G1/seed-3/metrics.tsv"));
  CHECK(manifest["config"]["total_rounds"] == 60);

  // the manifest reproduces the run
  TempDir c;
  cli::RunOptions again;
  again.config = a.path / "exp1-baseline" / "manifest.json";
  again.out = c.path;
  REQUIRE(cli::cmd_run(again, log) == cli::kExitOk);
  const auto m2 = json::parse(slurp(c.path / "exp1-baseline" / "manifest.json"));
  CHECK(m2["checksums"] == manifest["checksums"]);
}

TEST_CASE("run then resume equals one longer run") {
  for (const char* preset : {"exp1", "exp6"}) {
    TempDir split, whole;
    std::ostringstream log;
    REQUIRE(cli::cmd_run(small_run(split.path, preset, 60), log) == cli::kExitOk);
    REQUIRE(cli::cmd_run(small_run(whole.path, preset, 120), log) == cli::kExitOk);
    const std::string p = to_string(parse_preset(preset));
    for (const auto& e : fs::directory_iterator(split.path / p)) {
      if (!e.is_directory()) continue;
      const auto dir = e.path() / "seed-3";
      REQUIRE(cli::cmd_resume(latest_checkpoint(dir), 60, log) == cli::kExitOk);
      const auto other = whole.path / p / e.path().filename() / "seed-3";
      CHECK(slurp(dir / "metrics.tsv") == slurp(other / "metrics.tsv"));
      CHECK(slurp(dir / "metrics.jsonl") == slurp(other / "metrics.jsonl"));
      CHECK(slurp(dir / "checkpoint-0000000120.bin") ==
            slurp(other / "checkpoint-0000000120.bin"));
    }
    const auto m1 = json::parse(slurp(split.path / p / "manifest.json"));
    const auto m2 = json::parse(slurp(whole.path / p / "manifest.json"));
    CHECK(m1["checksums"] == m2["checksums"]);
  }
}

TEST_CASE("resume by zero rounds changes nothing") {
  TempDir t;
  std::ostringstream log;
  REQUIRE(cli::cmd_run(small_run(t.path, "exp1", 40), log) == cli::kExitOk);
  const auto dir = t.path / "exp1-baseline" / "B8-G1" / "seed-3";
  const auto before = slurp(dir / "metrics.tsv");
  const auto files = count_files(t.path);
  CHECK(cli::cmd_resume(dir / "checkpoint-0000000040.bin", 0, log) == cli::kExitOk);
  CHECK(slurp(dir / "metrics.tsv") == before);
  CHECK(count_files(t.path) == files);
}

TEST_CASE("exit codes for config, constraint and checkpoint errors") {
  TempDir t;
  std::ostringstream log;
  auto bad_key = small_run(t.path, "exp1", 20);
  bad_key.overrides.push_back("train.not_a_key=1");
  CHECK(cli::cmd_run(bad_key, log) == cli::kExitConfig);
  CHECK(log.str().find("train.not_a_key") != std::string::npos);
  CHECK(count_files(t.path) == 0);

  auto too_big = small_run(t.path, "exp4", 20);
  too_big.overrides.push_back("sweep=[8,128]");
  CHECK(cli::cmd_run(too_big, log) == cli::kExitConstraint);
  CHECK(count_files(t.path) == 0);

  auto budget = small_run(t.path, "exp5", 20);
  budget.overrides.push_back("sweep=[3]");
  CHECK(cli::cmd_run(budget, log) == cli::kExitConstraint);
  CHECK(count_files(t.path) == 0);

  REQUIRE(cli::cmd_run(small_run(t.path, "exp1", 20), log) == cli::kExitOk);
  const auto ck = t.path / "exp1-baseline" / "B8-G1" / "seed-3" / "checkpoint-0000000020.bin";
  std::string bytes = slurp(ck);
  bytes[bytes.size() / 2] ^= 0x01;
  const auto corrupt = t.path / "corrupt.bin";
  std::ofstream(corrupt, std::ios::binary) << bytes;
  CHECK(cli::cmd_resume(corrupt, 10, log) == cli::kExitCheckpoint);
  CHECK(cli::cmd_resume(t.path / "missing.bin", 10, log) == cli::kExitCheckpoint);

  CHECK(run_main({"rftlab", "run", "--preset", "exp9", "--out", t.path.string()}) ==
        cli::kExitConfig);
  CHECK(run_main({"rftlab", "frobnicate"}) == cli::kExitConfig);
}

TEST_CASE("report groups runs by preset and sweep point") {
  TempDir t;
  std::ostringstream log;
  auto o = small_run(t.path, "exp3", 40);
  o.overrides = {"total_rounds=40", "eval_every=20", "seeds=[0,1]", "train.batch_size=8",
                 "task.n_train=32", "task.n_test=8"};
  REQUIRE(cli::cmd_run(o, log) == cli::kExitOk);
  std::ostringstream out;
  REQUIRE(cli::cmd_report(t.path, out) == cli::kExitOk);
  const auto text = out.str();
  for (const char* label : {"G1 (2 seeds)", "G8 (2 seeds)", "G16", "G32", "G64"})
    CHECK(text.find(label) != std::string::npos);
  CHECK(text.find("train Pass@1 improves") != std::string::npos);

  const auto report = t.path / "report";
  std::istringstream wide(slurp(report / "plot_exp3-rollouts_train_pass1.tsv"));
  std::string header;
  std::getline(wide, header);
  CHECK(header == "round\tG1\tG8\tG16\tG32\tG64");
  int rows = 0;
  for (std::string line; std::getline(wide, line);) ++rows;
  CHECK(rows == 3);
  CHECK(fs::exists(report / "plot_exp3-rollouts_by_rollouts.tsv"));
  const auto summary = slurp(report / "summary.tsv");
  CHECK(summary.find("exp3-rollouts\tG64\tmedian\ttrain_pass1") != std::string::npos);

  // a second report ignores the first one's outputs
  std::ostringstream again;
  CHECK(cli::cmd_report(t.path, again) == cli::kExitOk);
  CHECK(again.str() == out.str());

  TempDir empty;
  CHECK(cli::cmd_report(empty.path, out) == cli::kExitConfig);
}

TEST_CASE("command-line flags map onto the sweep variable") {
  TempDir t;
  CHECK(run_main({"rftlab", "run", "--preset", "exp6", "--replay", "4", "--rounds", "20",
                  "--seed", "1", "--out", t.path.string(), "train.batch_size=8",
                  "task.n_train=64", "eval_every=10"}) == cli::kExitOk);
  const auto dir = t.path / "exp6-replay";
  CHECK(fs::exists(dir / "B8-c32-k0" / "seed-1" / "metrics.tsv"));
  CHECK(fs::exists(dir / "B8-c28-k4" / "seed-1" / "metrics.tsv"));
  CHECK_FALSE(fs::exists(dir / "B8-c25-k7"));
}

TEST_CASE("tabular features default to the larger learning rate") {
  CHECK(resolve_config(std::nullopt, std::string("exp1"), {}).train.learning_rate ==
        kLinearLearningRate);
  const auto tab = resolve_config(std::nullopt, std::string("exp1"), {"task.feature_kind=tabular"});
  CHECK(tab.train.learning_rate == kTabularLearningRate);
  const auto pinned = resolve_config(std::nullopt, std::string("exp1"),
                                     {"task.feature_kind=tabular", "train.learning_rate=0.2"});
  CHECK(pinned.train.learning_rate == 0.2);
  json file = {{"task", {{"feature_kind", "tabular"}}}, {"train", {{"learning_rate", 0.3}}}};
  CHECK(resolve_config(file, std::nullopt, {}).train.learning_rate == 0.3);
}
