#include "rftlab/config.hpp"

#include <fstream>

namespace rftlab {

json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& k = c.task;
  json j;
  j["preset"] = to_string(c.preset);
  j["total_rounds"] = c.total_rounds;
  j["eval_every"] = c.eval_every;
  j["eval_samples_per_query"] = c.eval_samples_per_query;
  j["seeds"] = c.seeds;
  j["budget"] = c.budget;
  j["sweep"] = c.sweep;
  j["support_rollouts"] = c.support_rollouts;
  j["thresholds"] = c.thresholds;
  j["train"] = {
      {"batch_size", t.batch_size},
      {"rollouts_per_query", t.rollouts_per_query},
      {"gradient_mask", to_string(t.gradient_mask)},
      {"advantage_mode", to_string(t.advantage_mode)},
      {"clip_eps", t.clip_eps},
      {"kl_coeff", t.kl_coeff},
      {"learning_rate", t.learning_rate},
      {"inner_epochs", t.inner_epochs},
      {"grad_accum_chunk", t.grad_accum_chunk},
      {"std_eps", t.std_eps},
      {"replay_rollouts", t.replay_rollouts},
      {"replay_capacity", t.replay_capacity},
      {"length_normalize", t.length_normalize},
      {"adam_beta1", t.adam_beta1},
      {"adam_beta2", t.adam_beta2},
      {"adam_eps", t.adam_eps},
      {"sampling",
       {{"temperature", t.sampling.temperature},
        {"top_p", t.sampling.top_p},
        {"max_len", t.sampling.max_len}}},
  };
  j["task"] = {
      {"family", to_string(k.family)},
      {"structure", to_string(k.structure)},
      {"feature_kind", to_string(k.feature_kind)},
      {"n_train", k.n_train},
      {"n_test", k.n_test},
      {"vocab_size", k.vocab_size},
      {"response_len", k.response_len},
      {"latent_dim", k.latent_dim},
      {"n_clusters", k.n_clusters},
      {"centroid_scale", k.centroid_scale},
      {"noise_scale", k.noise_scale},
      {"eos_token", k.eos_token},
      {"seed", k.seed},
  };
  return j;
}

namespace {

template <typename T>
T get(const json& node, const std::string& path) {
  const json* cur = &node;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot - start);
    if (!cur->is_object() || !cur->contains(key))
      throw ConfigError("missing config key '" + path + "'");
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (cur->is_number_integer() && cur->template get<std::int64_t>() < 0)
        throw ConfigError("config key '" + path + "' must be non-negative");
    }
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!cur->is_number_integer())
        throw ConfigError("config key '" + path + "' must be an integer");
    }
    return cur->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + path + "' has the wrong type");
  }
}

template <typename T>
std::vector<T> get_list(const json& node, const std::string& path) {
  auto v = get<json>(node, path);
  if (!v.is_array()) throw ConfigError("config key '" + path + "' must be a list");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    json wrap;
    wrap["x"] = v[i];
    out.push_back(get<T>(wrap, "x"));
  }
  return out;
}

template <typename Parse>
auto get_enum(const json& node, const std::string& path, Parse parse) {
  const auto s = get<std::string>(node, path);
  try {
    return parse(s);
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + path + "': " + e.what());
  }
}

void merge_strict(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object())
    throw ConfigError("config " + (prefix.empty() ? std::string("root") : "key '" + prefix + "'") +
                      " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) merge_strict(slot, it.value(), path);
    else slot = it.value();
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.preset = get_enum(j, "preset", parse_preset);
  c.total_rounds = get<std::int64_t>(j, "total_rounds");
  c.eval_every = get<std::int64_t>(j, "eval_every");
  c.eval_samples_per_query = get<std::size_t>(j, "eval_samples_per_query");
  c.seeds = get_list<std::uint64_t>(j, "seeds");
  c.budget = get<std::size_t>(j, "budget");
  c.sweep = get_list<std::size_t>(j, "sweep");
  c.support_rollouts = get<std::size_t>(j, "support_rollouts");
  c.thresholds = get_list<double>(j, "thresholds");

  auto& t = c.train;
  t.batch_size = get<std::size_t>(j, "train.batch_size");
  t.rollouts_per_query = get<std::size_t>(j, "train.rollouts_per_query");
  t.gradient_mask = get_enum(j, "train.gradient_mask", parse_mask_mode);
  t.advantage_mode = get_enum(j, "train.advantage_mode", parse_advantage_mode);
  t.clip_eps = get<double>(j, "train.clip_eps");
  t.kl_coeff = get<double>(j, "train.kl_coeff");
  t.learning_rate = get<double>(j, "train.learning_rate");
  t.inner_epochs = get<std::size_t>(j, "train.inner_epochs");
  t.grad_accum_chunk = get<std::size_t>(j, "train.grad_accum_chunk");
  t.std_eps = get<double>(j, "train.std_eps");
  t.replay_rollouts = get<std::size_t>(j, "train.replay_rollouts");
  t.replay_capacity = get<std::size_t>(j, "train.replay_capacity");
  t.length_normalize = get<bool>(j, "train.length_normalize");
  t.adam_beta1 = get<double>(j, "train.adam_beta1");
  t.adam_beta2 = get<double>(j, "train.adam_beta2");
  t.adam_eps = get<double>(j, "train.adam_eps");
  t.sampling.temperature = get<double>(j, "train.sampling.temperature");
  t.sampling.top_p = get<double>(j, "train.sampling.top_p");
  t.sampling.max_len = get<std::size_t>(j, "train.sampling.max_len");

  auto& k = c.task;
  k.family = get_enum(j, "task.family", parse_task_family);
  k.structure = get_enum(j, "task.structure", parse_answer_structure);
  k.feature_kind = get_enum(j, "task.feature_kind", parse_feature_kind);
  k.n_train = get<std::size_t>(j, "task.n_train");
  k.n_test = get<std::size_t>(j, "task.n_test");
  k.vocab_size = get<std::size_t>(j, "task.vocab_size");
  k.response_len = get<std::size_t>(j, "task.response_len");
  k.latent_dim = get<std::size_t>(j, "task.latent_dim");
  k.n_clusters = get<std::size_t>(j, "task.n_clusters");
  k.centroid_scale = get<double>(j, "task.centroid_scale");
  k.noise_scale = get<double>(j, "task.noise_scale");
  k.eos_token = get<Token>(j, "task.eos_token");
  k.seed = get<std::uint64_t>(j, "task.seed");
  return c;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("artifact_version") && j.contains("config"))
    return j["config"];
  return j;
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* cur = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot - start);
    if (!cur->is_object() || !cur->contains(key))
      throw ConfigError("unknown config key '" + path + "'");
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (cur->is_object())
    throw ConfigError("config key '" + path + "' is a section, not a value");
  json value;
  try {
    value = json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  *cur = value;
}

Preset effective_preset(const std::optional<json>& file,
                        const std::optional<std::string>& preset) {
  if (preset) return parse_preset(*preset);
  if (file && file->is_object() && file->contains("preset")) {
    const auto& node = (*file)["preset"];
    if (!node.is_string()) throw ConfigError("config key 'preset' must be a string");
    return parse_preset(node.get<std::string>());
  }
  return Preset::custom;
}

ExperimentConfig resolve_config(const std::optional<json>& file,
                                const std::optional<std::string>& preset,
                                const std::vector<std::string>& overrides) {
  const Preset p = effective_preset(file, preset);
  json tree = config_to_json(preset_config(p));
  if (file) {
    merge_strict(tree, *file, "");
    tree["preset"] = to_string(p);
  }
  bool lr_given = file && file->is_object() && file->contains("train") &&
                  (*file)["train"].is_object() && (*file)["train"].contains("learning_rate");
  for (const auto& o : overrides) {
    apply_override(tree, o);
    lr_given = lr_given || o.rfind("train.learning_rate=", 0) == 0;
  }
  // tabular features take the larger default step unless a rate was given
  if (!lr_given && tree["task"]["feature_kind"] == to_string(FeatureKind::tabular))
    tree["train"]["learning_rate"] = kTabularLearningRate;
  auto cfg = config_from_json(tree);
  cfg.validate();
  return cfg;
}

}  // namespace rftlab
