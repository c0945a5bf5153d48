#include "rftlab/environment.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include "rftlab/rng.hpp"
#include "rftlab/text.hpp"

namespace rftlab {

namespace {

// Largest tabular parameter table we are willing to allocate (rows).
constexpr std::size_t kMaxTabularRows = std::size_t{1} << 22;

std::size_t count_prefix_states(std::size_t vocab, std::size_t len) {
  // prefixes of length 0..len-1
  std::size_t total = 0;
  std::size_t power = 1;
  for (std::size_t j = 0; j < len; ++j) {
    total += power;
    if (total > kMaxTabularRows) return total;
    power *= vocab;
  }
  return total;
}

}  // namespace

void TaskSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("task.vocab_size must be >= 2");
  if (n_train == 0) throw ConfigError("task.n_train must be positive");
  if (n_test == 0) throw ConfigError("task.n_test must be positive");
  if (latent_dim == 0) throw ConfigError("task.latent_dim must be positive");
  if (n_clusters == 0) throw ConfigError("task.n_clusters must be positive");
  if (!(noise_scale >= 0.0)) throw ConfigError("task.noise_scale must be >= 0");
  if (!(centroid_scale > 0.0))
    throw ConfigError("task.centroid_scale must be positive");
  if (family == TaskFamily::contextual_bandit && response_len != 1)
    throw ConfigError(
        "task.response_len must be 1 for the contextual-bandit family");
  if (family == TaskFamily::sequence_reasoning && response_len < 2)
    throw ConfigError(
        "task.response_len must be > 1 for the sequence-reasoning family");
  if (eos_token >= 0 && static_cast<std::size_t>(eos_token) >= vocab_size)
    throw ConfigError("task.eos_token outside vocabulary");
  if (eos_token >= 0 && vocab_size < 3)
    throw ConfigError("task.vocab_size must be >= 3 when eos_token is set");
  // Without noise every query of a cluster has the same context.
  if (noise_scale == 0.0 && n_train + n_test > n_clusters)
    throw ConfigError(
        "task.n_train + task.n_test exceeds the number of distinct contexts "
        "(n_clusters) when noise_scale is 0");
  if (feature_kind == FeatureKind::tabular &&
      (n_train + n_test) * count_prefix_states(vocab_size, response_len) >
          kMaxTabularRows)
    throw ConfigError("tabular feature table too large for task shape");
}

FeatureMap::FeatureMap(FeatureKind kind, std::size_t query_dim,
                       std::size_t vocab_size, std::size_t response_len,
                       std::size_t n_queries, Token eos)
    : kind_(kind),
      query_dim_(query_dim),
      vocab_size_(vocab_size),
      response_len_(response_len),
      n_queries_(n_queries),
      eos_(eos) {
  if (kind_ == FeatureKind::linear) {
    dim_ = query_dim_ * response_len_;
  } else {
    prefix_states_ = count_prefix_states(vocab_size_, response_len_);
    dim_ = n_queries_ * prefix_states_;
  }
}

void FeatureMap::features(const Query& q, std::span<const Token> prefix,
                          Sparse& out) const {
  out.clear();
  const std::size_t pos = prefix.size();
  if (pos >= response_len_)
    throw ConfigError("prefix length must be below the response length");
  if (kind_ == FeatureKind::linear) {
    if (q.features.size() != query_dim_)
      throw ConfigError("query feature length does not match feature_dim");
    const std::size_t base = pos * query_dim_;
    out.index.reserve(query_dim_);
    out.value.reserve(query_dim_);
    for (std::size_t j = 0; j < query_dim_; ++j) {
      if (q.features[j] == 0.0) continue;
      out.index.push_back(static_cast<std::uint32_t>(base + j));
      out.value.push_back(q.features[j]);
    }
    return;
  }
  if (q.id < 0 || static_cast<std::size_t>(q.id) >= n_queries_)
    throw ConfigError("query id outside the tabular feature table");
  // offset of length-pos prefixes plus their base-K rank
  std::size_t offset = 0;
  std::size_t power = 1;
  for (std::size_t j = 0; j < pos; ++j) {
    offset += power;
    power *= vocab_size_;
  }
  std::size_t rank = 0;
  for (Token t : prefix) rank = rank * vocab_size_ + static_cast<std::size_t>(t);
  const std::size_t row =
      static_cast<std::size_t>(q.id) * prefix_states_ + offset + rank;
  out.index.push_back(static_cast<std::uint32_t>(row));
  out.value.push_back(1.0);
}

FeatureMap Dataset::feature_map() const {
  return FeatureMap(feature_kind, feature_dim, vocab_size, response_len,
                    train.size() + test.size(), eos_token);
}

Dataset generate_task(const TaskSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, Stream::dataset));

  Dataset ds;
  ds.vocab_size = spec.vocab_size;
  ds.response_len = spec.response_len;
  ds.feature_dim = spec.latent_dim + 1;
  ds.feature_kind = spec.feature_kind;
  ds.eos_token = spec.eos_token;

  auto draw_answer = [&](Rng& r) {
    TokenSequence a(spec.response_len);
    for (auto& t : a) {
      do {
        t = static_cast<Token>(r.index(spec.vocab_size));
      } while (t == spec.eos_token);
    }
    return a;
  };

  std::vector<std::vector<double>> centroids(spec.n_clusters);
  std::vector<TokenSequence> cluster_answers(spec.n_clusters);
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    centroids[c].resize(spec.latent_dim);
    for (auto& x : centroids[c]) x = spec.centroid_scale * rng.normal();
    cluster_answers[c] = draw_answer(rng);
  }

  const std::size_t total = spec.n_train + spec.n_test;
  std::vector<Query> all(total);
  for (std::size_t i = 0; i < total; ++i) {
    Query& q = all[i];
    q.id = static_cast<QueryId>(i);
    // with zero noise, cycle through clusters so contexts stay distinct
    const std::size_t c = spec.noise_scale == 0.0 ? i % spec.n_clusters
                                                  : rng.index(spec.n_clusters);
    q.features.resize(ds.feature_dim);
    for (std::size_t j = 0; j < spec.latent_dim; ++j)
      q.features[j] = centroids[c][j] + spec.noise_scale * rng.normal();
    q.features[spec.latent_dim] = 1.0;
    q.answer = spec.structure == AnswerStructure::clustered ? cluster_answers[c]
                                                            : draw_answer(rng);
  }
  ds.train.assign(all.begin(), all.begin() + spec.n_train);
  ds.test.assign(all.begin() + spec.n_train, all.end());
  return ds;
}

int verify(const Query& query, std::span<const Token> response) {
  return std::ranges::equal(query.answer, response) ? 1 : 0;
}

void export_dataset(std::ostream& os, const Dataset& ds) {
  os << "# rftlab-dataset v1 vocab_size=" << ds.vocab_size
     << " response_len=" << ds.response_len
     << " feature_dim=" << ds.feature_dim
     << " feature_kind=" << to_string(ds.feature_kind)
     << " eos_token=" << ds.eos_token << '\n';
  auto emit = [&](const char* split, const Query& q) {
    os << split << '\t' << q.id << '\t';
    for (std::size_t j = 0; j < q.features.size(); ++j)
      os << (j ? " " : "") << format_double(q.features[j]);
    os << '\t';
    for (std::size_t j = 0; j < q.answer.size(); ++j)
      os << (j ? " " : "") << q.answer[j];
    os << '\n';
  };
  for (const auto& q : ds.train) emit("train", q);
  for (const auto& q : ds.test) emit("test", q);
}

Dataset import_dataset(std::istream& is) {
  Dataset ds;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# rftlab-dataset v1", 0) != 0)
    throw ConfigError("dataset: missing or unsupported header");
  {
    std::istringstream hs(line.substr(19));
    std::string kv;
    while (hs >> kv) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      auto key = kv.substr(0, eq);
      auto val = kv.substr(eq + 1);
      if (key == "vocab_size") ds.vocab_size = std::stoul(val);
      else if (key == "response_len") ds.response_len = std::stoul(val);
      else if (key == "feature_dim") ds.feature_dim = std::stoul(val);
      else if (key == "feature_kind") ds.feature_kind = parse_feature_kind(val);
      else if (key == "eos_token") ds.eos_token = std::stoi(val);
    }
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string split, id, feats, answer;
    if (!std::getline(ls, split, '\t') || !std::getline(ls, id, '\t') ||
        !std::getline(ls, feats, '\t') || !std::getline(ls, answer))
      throw ConfigError("dataset: malformed line: " + line);
    Query q;
    q.id = std::stoll(id);
    std::istringstream fs(feats);
    std::string tok;
    while (fs >> tok) {
      double x;
      if (!parse_double(tok, x)) throw ConfigError("dataset: bad feature " + tok);
      q.features.push_back(x);
    }
    std::istringstream as(answer);
    Token t;
    while (as >> t) q.answer.push_back(t);
    if (q.features.size() != ds.feature_dim ||
        q.answer.size() > ds.response_len || q.answer.empty())
      throw ConfigError("dataset: query shape mismatch on id " + id);
    if (split == "train") ds.train.push_back(std::move(q));
    else if (split == "test") ds.test.push_back(std::move(q));
    else throw ConfigError("dataset: unknown split " + split);
  }
  return ds;
}

std::string to_string(TaskFamily f) {
  return f == TaskFamily::contextual_bandit ? "contextual-bandit"
                                            : "sequence-reasoning";
}
std::string to_string(AnswerStructure s) {
  return s == AnswerStructure::clustered ? "clustered" : "none";
}
std::string to_string(FeatureKind k) {
  return k == FeatureKind::linear ? "linear" : "tabular";
}

TaskFamily parse_task_family(const std::string& s) {
  if (s == "contextual-bandit") return TaskFamily::contextual_bandit;
  if (s == "sequence-reasoning") return TaskFamily::sequence_reasoning;
  throw ConfigError("unknown task family '" + s + "'");
}
AnswerStructure parse_answer_structure(const std::string& s) {
  if (s == "clustered") return AnswerStructure::clustered;
  if (s == "none") return AnswerStructure::none;
  throw ConfigError("unknown answer structure '" + s + "'");
}
FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "linear") return FeatureKind::linear;
  if (s == "tabular") return FeatureKind::tabular;
  throw ConfigError("unknown feature kind '" + s + "'");
}

}  // namespace rftlab
