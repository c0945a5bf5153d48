#include "rftlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <iterator>
#include <limits>
#include <numeric>
#include <ostream>

#include "rftlab/binary_io.hpp"

namespace rftlab {

namespace {
constexpr char kParamsMagic[] = "RFTP";
}

void SamplingParams::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ConfigError("sampling.temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0))
    throw ConfigError("sampling.top_p must lie in (0, 1]");
  if (max_len == 0) throw ConfigError("sampling.max_len must be positive");
}

PolicyParams::PolicyParams(std::size_t feature_dim, std::size_t vocab_size)
    : feature_dim_(feature_dim),
      vocab_size_(vocab_size),
      weights_(feature_dim * vocab_size, 0.0) {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
}

bool PolicyParams::all_finite() const {
  return std::ranges::all_of(weights_, [](double w) { return std::isfinite(w); });
}

void check_compatible(const PolicyParams& params, const FeatureMap& fmap) {
  if (params.feature_dim() != fmap.dim() ||
      params.vocab_size() != fmap.vocab_size())
    throw ConfigError("policy parameter shape does not match the feature map");
}

namespace detail {

void logits_from_features(const PolicyParams& params,
                          const FeatureMap::Sparse& phi, std::span<double> z) {
  std::fill(z.begin(), z.end(), 0.0);
  const std::size_t k = params.vocab_size();
  const double* w = params.weights().data();
  for (std::size_t n = 0; n < phi.index.size(); ++n) {
    const double v = phi.value[n];
    const double* row = w + static_cast<std::size_t>(phi.index[n]) * k;
    for (std::size_t j = 0; j < k; ++j) z[j] += v * row[j];
  }
}

Token draw_token(std::span<const double> weights, double u) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double target = u * total;
  double cum = 0.0;
  Token last = 0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (weights[j] <= 0.0) continue;
    cum += weights[j];
    last = static_cast<Token>(j);
    if (target < cum) return last;
  }
  return last;
}

}  // namespace detail

std::vector<double> logits(const PolicyParams& params, const FeatureMap& fmap,
                           const Query& query, std::span<const Token> prefix) {
  check_compatible(params, fmap);
  FeatureMap::Sparse phi;
  fmap.features(query, prefix, phi);
  std::vector<double> z(params.vocab_size());
  detail::logits_from_features(params, phi, z);
  return z;
}

void log_softmax(std::span<const double> z, std::span<double> out) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double x : z) s += std::exp(x - m);
  const double ls = std::log(s);
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = (z[j] - m) - ls;
}

void nucleus(std::span<double> probs, double top_p) {
  if (top_p >= 1.0) return;
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs[a] > probs[b];
  });
  double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    cum += probs[order[keep]];
    ++keep;
    if (cum >= top_p * total) break;
  }
  for (std::size_t n = keep; n < order.size(); ++n) probs[order[n]] = 0.0;
  for (auto& p : probs) p /= cum;
}

namespace {

void sampling_weights(std::span<const double> z, std::span<const double> logp,
                      const SamplingParams& sp, std::span<double> out) {
  if (sp.temperature == 1.0) {
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = std::exp(logp[j]);
  } else {
    std::vector<double> scaled(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) scaled[j] = z[j] / sp.temperature;
    log_softmax(scaled, out);
    for (auto& x : out) x = std::exp(x);
  }
  nucleus(out, sp.top_p);
}

}  // namespace

std::vector<double> next_token_distribution(const PolicyParams& params,
                                            const FeatureMap& fmap,
                                            const Query& query,
                                            std::span<const Token> prefix,
                                            const SamplingParams& sp) {
  sp.validate();
  const auto z = logits(params, fmap, query, prefix);
  std::vector<double> logp(z.size()), probs(z.size());
  log_softmax(z, logp);
  sampling_weights(z, logp, sp, probs);
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  for (auto& p : probs) p /= total;
  return probs;
}

SampledResponse sample_response(const PolicyParams& params,
                                const FeatureMap& fmap, const Query& query,
                                const SamplingParams& sp, Rng& rng) {
  check_compatible(params, fmap);
  const std::size_t k = params.vocab_size();
  const std::size_t len = std::min(sp.max_len, fmap.response_len());
  SampledResponse out;
  out.tokens.reserve(len);
  out.logprobs.reserve(len);
  FeatureMap::Sparse phi;
  std::vector<double> z(k), logp(k), weights(k);
  for (std::size_t pos = 0; pos < len; ++pos) {
    fmap.features(query, out.tokens, phi);
    detail::logits_from_features(params, phi, z);
    log_softmax(z, logp);
    sampling_weights(z, logp, sp, weights);
    const Token t = detail::draw_token(weights, rng.uniform());
    out.tokens.push_back(t);
    out.logprobs.push_back(logp[static_cast<std::size_t>(t)]);
    if (t == fmap.eos()) break;
  }
  return out;
}

std::vector<double> sequence_logprobs(const PolicyParams& params,
                                      const FeatureMap& fmap,
                                      const Query& query,
                                      std::span<const Token> seq) {
  check_compatible(params, fmap);
  const std::size_t k = params.vocab_size();
  std::vector<double> out(seq.size());
  FeatureMap::Sparse phi;
  std::vector<double> z(k), logp(k);
  for (std::size_t pos = 0; pos < seq.size(); ++pos) {
    fmap.features(query, seq.first(pos), phi);
    detail::logits_from_features(params, phi, z);
    log_softmax(z, logp);
    out[pos] = logp[static_cast<std::size_t>(seq[pos])];
  }
  return out;
}

double kl_to_reference(const PolicyParams& params, const PolicyParams& ref,
                       const FeatureMap& fmap, const Query& query,
                       std::span<const Token> seq) {
  check_compatible(params, fmap);
  check_compatible(ref, fmap);
  const std::size_t k = params.vocab_size();
  FeatureMap::Sparse phi;
  std::vector<double> z(k), zr(k), logp(k), logr(k);
  double total = 0.0;
  for (std::size_t pos = 0; pos < seq.size(); ++pos) {
    fmap.features(query, seq.first(pos), phi);
    detail::logits_from_features(params, phi, z);
    detail::logits_from_features(ref, phi, zr);
    log_softmax(z, logp);
    log_softmax(zr, logr);
    double kl = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      kl += std::exp(logp[j]) * (logp[j] - logr[j]);
    total += std::max(kl, 0.0);
  }
  return total;
}

void encode_params(ByteWriter& w, const PolicyParams& params) {
  w.bytes(std::string_view(kParamsMagic, 4));
  w.u32(PolicyParams::kFormatVersion);
  w.u64(params.feature_dim());
  w.u64(params.vocab_size());
  for (double x : params.weights()) w.f64(x);
}

PolicyParams decode_params(ByteReader& r) {
  if (r.bytes(4) != std::string_view(kParamsMagic, 4))
    throw CheckpointError("policy parameters: bad magic");
  if (r.u32() != PolicyParams::kFormatVersion)
    throw CheckpointError("policy parameters: unsupported format version");
  const auto fd = r.u64();
  const auto vs = r.u64();
  if (fd == 0 || vs < 2 || r.remaining() / 8 < fd * vs)
    throw CheckpointError("policy parameters: inconsistent header");
  PolicyParams p(fd, vs);
  for (auto& x : p.weights()) x = r.f64();
  return p;
}

void write_params(std::ostream& os, const PolicyParams& params) {
  ByteWriter w;
  encode_params(w, params);
  os.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
}

PolicyParams read_params(std::istream& is) {
  std::string data((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  ByteReader r(data);
  return decode_params(r);
}

}  // namespace rftlab
