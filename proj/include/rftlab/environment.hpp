#ifndef RFTLAB_ENVIRONMENT_HPP
#define RFTLAB_ENVIRONMENT_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rftlab/types.hpp"

namespace rftlab {

enum class TaskFamily { contextual_bandit, sequence_reasoning };

/// clustered: the answer is a function of the query's latent cluster, so a
/// linear policy generalizes to held-out queries. none: answers are drawn
/// independently per query and carry no feature signal.
enum class AnswerStructure { clustered, none };

enum class FeatureKind { linear, tabular };

struct TaskSpec {
  TaskFamily family = TaskFamily::contextual_bandit;
  AnswerStructure structure = AnswerStructure::clustered;
  FeatureKind feature_kind = FeatureKind::linear;
  std::size_t n_train = 256;
  std::size_t n_test = 64;
  std::size_t vocab_size = 16;
  std::size_t response_len = 1;
  std::size_t latent_dim = 16;
  std::size_t n_clusters = 16;
  double centroid_scale = 1.0;
  double noise_scale = 0.3;
  /// Optional end-of-sequence token; -1 disables early stopping.
  Token eos_token = -1;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Query {
  QueryId id = 0;
  std::vector<double> features;
  TokenSequence answer;
};

/// Maps a (query, prefix) context to a sparse feature vector.
///
/// linear: features of the query copied into the block of the current
/// position, so each response position owns its own weight rows.
/// tabular: a single one-hot row per (query id, exact prefix).
class FeatureMap {
 public:
  struct Sparse {
    std::vector<std::uint32_t> index;
    std::vector<double> value;
    void clear() {
      index.clear();
      value.clear();
    }
  };

  FeatureMap() = default;
  FeatureMap(FeatureKind kind, std::size_t query_dim, std::size_t vocab_size,
             std::size_t response_len, std::size_t n_queries, Token eos);

  FeatureKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  std::size_t query_dim() const { return query_dim_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t response_len() const { return response_len_; }
  Token eos() const { return eos_; }

  void features(const Query& q, std::span<const Token> prefix,
                Sparse& out) const;

 private:
  FeatureKind kind_ = FeatureKind::linear;
  std::size_t query_dim_ = 0;
  std::size_t vocab_size_ = 0;
  std::size_t response_len_ = 0;
  std::size_t n_queries_ = 0;
  std::size_t prefix_states_ = 0;
  std::size_t dim_ = 0;
  Token eos_ = -1;
};

struct Dataset {
  std::vector<Query> train;
  std::vector<Query> test;
  std::size_t vocab_size = 0;
  std::size_t response_len = 0;
  /// Length of each query's feature vector (latent dims + bias).
  std::size_t feature_dim = 0;
  FeatureKind feature_kind = FeatureKind::linear;
  Token eos_token = -1;

  FeatureMap feature_map() const;
};

/// Deterministic in spec.seed.
Dataset generate_task(const TaskSpec& spec);

/// Outcome reward: 1 iff the response equals the answer exactly.
int verify(const Query& query, std::span<const Token> response);

/// Line format: a `#` header with the dataset shape, then one query per line
/// as `split<TAB>id<TAB>features (space separated)<TAB>answer tokens`.
void export_dataset(std::ostream& os, const Dataset& ds);
Dataset import_dataset(std::istream& is);

std::string to_string(TaskFamily f);
std::string to_string(AnswerStructure s);
std::string to_string(FeatureKind k);
TaskFamily parse_task_family(const std::string& s);
AnswerStructure parse_answer_structure(const std::string& s);
FeatureKind parse_feature_kind(const std::string& s);

}  // namespace rftlab

#endif  // RFTLAB_ENVIRONMENT_HPP
