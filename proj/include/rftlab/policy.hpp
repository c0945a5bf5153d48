#ifndef RFTLAB_POLICY_HPP
#define RFTLAB_POLICY_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "rftlab/environment.hpp"
#include "rftlab/rng.hpp"
#include "rftlab/types.hpp"

namespace rftlab {

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  /// Cap on generated length; the task's response length applies first.
  std::size_t max_len = 64;

  void validate() const;
};

/// Weights of a linear-softmax policy, row-major (feature_dim x vocab_size):
/// logits(context) = W^T phi(context).
class PolicyParams {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  PolicyParams() = default;
  PolicyParams(std::size_t feature_dim, std::size_t vocab_size);

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t size() const { return weights_.size(); }

  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }
  std::span<const double> row(std::size_t f) const {
    return std::span<const double>(weights_).subspan(f * vocab_size_,
                                                     vocab_size_);
  }

  bool all_finite() const;
  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  std::size_t feature_dim_ = 0;
  std::size_t vocab_size_ = 0;
  std::vector<double> weights_;
};

/// A sampled response plus the log-probabilities of each token under the
/// generating parameters (the behaviour-policy record).
struct SampledResponse {
  TokenSequence tokens;
  std::vector<double> logprobs;
};

/// Throws ConfigError when params and the feature map disagree in shape.
void check_compatible(const PolicyParams& params, const FeatureMap& fmap);

std::vector<double> logits(const PolicyParams& params, const FeatureMap& fmap,
                           const Query& query, std::span<const Token> prefix);

/// Max-subtracted log-softmax.
void log_softmax(std::span<const double> z, std::span<double> out);

/// Restricts probs to the smallest highest-probability set whose mass reaches
/// top_p and renormalizes. The top token always survives; ties keep the lower
/// token id first.
void nucleus(std::span<double> probs, double top_p);

/// Next-token sampling distribution: softmax(logits / T) then nucleus(top_p).
std::vector<double> next_token_distribution(const PolicyParams& params,
                                            const FeatureMap& fmap,
                                            const Query& query,
                                            std::span<const Token> prefix,
                                            const SamplingParams& sp);

SampledResponse sample_response(const PolicyParams& params,
                                const FeatureMap& fmap, const Query& query,
                                const SamplingParams& sp, Rng& rng);

/// log pi(o_t | q, o_<t) under the untempered softmax.
std::vector<double> sequence_logprobs(const PolicyParams& params,
                                      const FeatureMap& fmap,
                                      const Query& query,
                                      std::span<const Token> seq);

/// Sum over visited positions of the exact KL(pi_params || pi_ref).
double kl_to_reference(const PolicyParams& params, const PolicyParams& ref,
                       const FeatureMap& fmap, const Query& query,
                       std::span<const Token> seq);

namespace detail {
/// z = W^T phi for one context.
void logits_from_features(const PolicyParams& params,
                          const FeatureMap::Sparse& phi, std::span<double> z);
/// Inverse-CDF draw from an unnormalized nonnegative weight vector.
Token draw_token(std::span<const double> weights, double u);
}  // namespace detail

class ByteWriter;
class ByteReader;
void encode_params(ByteWriter& w, const PolicyParams& params);
PolicyParams decode_params(ByteReader& r);

/// Header (magic, version, feature_dim, vocab_size) followed by the weights
/// as little-endian IEEE-754 doubles.
void write_params(std::ostream& os, const PolicyParams& params);
PolicyParams read_params(std::istream& is);

}  // namespace rftlab

#endif  // RFTLAB_POLICY_HPP
