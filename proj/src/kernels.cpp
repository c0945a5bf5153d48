#include "rftlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rftlab::kernels {

namespace {

struct Term {
  std::size_t group;
  std::size_t rollout;
  double signal;
};

std::vector<Term> masked_terms(std::span<const RolloutGroup> groups,
                               std::span<const double> signals) {
  std::vector<Term> terms;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    g.validate();
    for (std::size_t r = 0; r < g.rollouts.size(); ++r)
      if (g.gradient_mask[r]) terms.push_back({gi, r, 0.0});
  }
  if (terms.size() != signals.size())
    throw std::invalid_argument(
        "objective: signal count does not match the masked rollouts");
  for (std::size_t n = 0; n < terms.size(); ++n) terms[n].signal = signals[n];
  return terms;
}

struct Scratch {
  FeatureMap::Sparse phi;
  std::vector<double> z, zr, logp, logr, dz;
  explicit Scratch(std::size_t k) : z(k), zr(k), logp(k), logr(k), dz(k) {}
};

struct PositionOut {
  double surrogate = 0.0;
  double kl = 0.0;
  bool clipped = false;
};

// Value and logit-gradient of one visited position of one rollout.
PositionOut position_terms(const PolicyParams& params, const PolicyParams& ref,
                           Token token, double old_logprob, double signal,
                           double weight, const ObjectiveSpec& spec,
                           Scratch& s) {
  const std::size_t k = params.vocab_size();
  PositionOut out;
  detail::logits_from_features(params, s.phi, s.z);
  log_softmax(s.z, s.logp);
  const auto o = static_cast<std::size_t>(token);
  const double ratio = std::exp(s.logp[o] - old_logprob);
  bool binds = false;
  out.surrogate = weight * clipped_term(ratio, signal, spec.clip_eps, binds);
  out.clipped = binds && signal != 0.0;

  if (spec.want_gradient) {
    const double c = (binds || signal == 0.0) ? 0.0 : weight * signal * ratio;
    for (std::size_t j = 0; j < k; ++j)
      s.dz[j] = -c * std::exp(s.logp[j]);
    s.dz[o] += c;
  }
  if (spec.kl_coeff != 0.0) {
    detail::logits_from_features(ref, s.phi, s.zr);
    log_softmax(s.zr, s.logr);
    double kl = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      kl += std::exp(s.logp[j]) * (s.logp[j] - s.logr[j]);
    out.kl = std::max(kl, 0.0);
    if (spec.want_gradient) {
      // d KL / d z_j = p_j (log p_j - log r_j - KL)
      for (std::size_t j = 0; j < k; ++j)
        s.dz[j] -= spec.kl_coeff * std::exp(s.logp[j]) *
                   (s.logp[j] - s.logr[j] - kl);
    }
  }
  return out;
}

struct TermResult {
  double surrogate = 0.0;
  double kl = 0.0;
  std::size_t tokens = 0;
  std::size_t clipped = 0;
  // logit gradient per visited position, K entries each
  std::vector<double> dz;
};

void check_rollout(const Rollout& ro) {
  if (ro.old_logprobs.size() != ro.tokens.size())
    throw std::invalid_argument(
        "objective: rollout is missing its behaviour log-probabilities");
}

}  // namespace

std::vector<Rollout> sample_rollouts(Exec exec, const PolicyParams& params,
                                     const FeatureMap& fmap,
                                     std::span<const Query> queries,
                                     std::span<const std::size_t> batch,
                                     std::size_t per_query,
                                     const SamplingParams& sp,
                                     std::uint64_t seed, std::int64_t round) {
  check_compatible(params, fmap);
  sp.validate();
  const std::size_t n = batch.size() * per_query;
  std::vector<Rollout> out(n);
  auto one = [&](std::size_t item) {
    const std::size_t b = item / per_query;
    const std::size_t g = item % per_query;
    const Query& q = queries[batch[b]];
    Rng rng(derive_seed(seed, Stream::rollout,
                        {static_cast<std::uint64_t>(round), b, g}));
    auto resp = sample_response(params, fmap, q, sp, rng);
    Rollout& ro = out[item];
    ro.query_index = batch[b];
    ro.query_id = q.id;
    ro.reward = verify(q, resp.tokens);
    ro.tokens = std::move(resp.tokens);
    ro.old_logprobs = std::move(resp.logprobs);
    ro.round = round;
  };
  if (exec == Exec::parallel) {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16) if (count > 64)
    for (std::ptrdiff_t i = 0; i < count; ++i) one(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) one(i);
  }
  return out;
}

ObjectiveEval objective(Exec exec, const PolicyParams& params,
                        const PolicyParams& ref, const FeatureMap& fmap,
                        std::span<const Query> queries,
                        std::span<const RolloutGroup> groups,
                        std::span<const double> signals,
                        const ObjectiveSpec& spec) {
  check_compatible(params, fmap);
  if (spec.kl_coeff != 0.0) check_compatible(ref, fmap);
  const auto terms = masked_terms(groups, signals);
  const std::size_t k = params.vocab_size();

  ObjectiveEval eval;
  eval.rollouts = terms.size();
  if (spec.want_gradient) eval.gradient.assign(params.size(), 0.0);

  if (exec == Exec::serial) {
    // reference: accumulate straight into the dense gradient
    Scratch s(k);
    for (const auto& t : terms) {
      const Rollout& ro = groups[t.group].rollouts[t.rollout];
      check_rollout(ro);
      const Query& q = queries[ro.query_index];
      const double w =
          spec.length_normalize ? 1.0 / static_cast<double>(ro.tokens.size())
                                : 1.0;
      double sur = 0.0, kl = 0.0;
      for (std::size_t pos = 0; pos < ro.tokens.size(); ++pos) {
        fmap.features(q, std::span(ro.tokens).first(pos), s.phi);
        const auto p = position_terms(params, ref, ro.tokens[pos],
                                      ro.old_logprobs[pos], t.signal, w, spec, s);
        sur += p.surrogate;
        kl += p.kl;
        eval.clipped_tokens += p.clipped;
        ++eval.tokens;
        if (!spec.want_gradient) continue;
        for (std::size_t n = 0; n < s.phi.index.size(); ++n) {
          double* g = eval.gradient.data() +
                      static_cast<std::size_t>(s.phi.index[n]) * k;
          const double v = s.phi.value[n];
          for (std::size_t j = 0; j < k; ++j) g[j] += v * s.dz[j];
        }
      }
      eval.surrogate += sur;
      eval.kl += kl;
    }
    eval.value = eval.surrogate - spec.kl_coeff * eval.kl;
    return eval;
  }

  std::vector<TermResult> results(terms.size());
  for (const auto& t : terms) check_rollout(groups[t.group].rollouts[t.rollout]);
  const auto count = static_cast<std::ptrdiff_t>(terms.size());
#pragma omp parallel if (count > 32)
  {
    Scratch s(k);
#pragma omp for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      const auto& t = terms[static_cast<std::size_t>(i)];
      const Rollout& ro = groups[t.group].rollouts[t.rollout];
      const Query& q = queries[ro.query_index];
      const double w =
          spec.length_normalize ? 1.0 / static_cast<double>(ro.tokens.size())
                                : 1.0;
      TermResult& res = results[static_cast<std::size_t>(i)];
      if (spec.want_gradient) res.dz.reserve(ro.tokens.size() * k);
      for (std::size_t pos = 0; pos < ro.tokens.size(); ++pos) {
        fmap.features(q, std::span(ro.tokens).first(pos), s.phi);
        const auto p = position_terms(params, ref, ro.tokens[pos],
                                      ro.old_logprobs[pos], t.signal, w, spec, s);
        res.surrogate += p.surrogate;
        res.kl += p.kl;
        res.clipped += p.clipped;
        ++res.tokens;
        if (spec.want_gradient) res.dz.insert(res.dz.end(), s.dz.begin(), s.dz.end());
      }
    }
  }

  // ordered reduction; features are recomputed so phi x dz is formed exactly
  // as in the serial reference
  FeatureMap::Sparse phi;
  for (std::size_t n = 0; n < terms.size(); ++n) {
    const auto& res = results[n];
    eval.surrogate += res.surrogate;
    eval.kl += res.kl;
    eval.tokens += res.tokens;
    eval.clipped_tokens += res.clipped;
    if (!spec.want_gradient) continue;
    const Rollout& ro = groups[terms[n].group].rollouts[terms[n].rollout];
    const Query& q = queries[ro.query_index];
    for (std::size_t pos = 0; pos < ro.tokens.size(); ++pos) {
      fmap.features(q, std::span(ro.tokens).first(pos), phi);
      const double* dz = res.dz.data() + pos * k;
      for (std::size_t f = 0; f < phi.index.size(); ++f) {
        double* g = eval.gradient.data() + static_cast<std::size_t>(phi.index[f]) * k;
        const double v = phi.value[f];
        for (std::size_t j = 0; j < k; ++j) g[j] += v * dz[j];
      }
    }
  }
  eval.value = eval.surrogate - spec.kl_coeff * eval.kl;
  return eval;
}

std::uint64_t count_successes(Exec exec, const PolicyParams& params,
                              const FeatureMap& fmap,
                              std::span<const Query> queries,
                              const SamplingParams& sp,
                              std::size_t samples_per_query, std::uint64_t seed,
                              Stream stream) {
  check_compatible(params, fmap);
  sp.validate();
  const std::size_t n = queries.size() * samples_per_query;
  auto one = [&](std::size_t item) -> std::uint64_t {
    const std::size_t i = item / samples_per_query;
    const std::size_t r = item % samples_per_query;
    Rng rng(derive_seed(seed, stream, {i, r}));
    const auto resp = sample_response(params, fmap, queries[i], sp, rng);
    return static_cast<std::uint64_t>(verify(queries[i], resp.tokens));
  };
  std::uint64_t total = 0;
  if (exec == Exec::parallel) {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 64) reduction(+ : total) if (count > 256)
    for (std::ptrdiff_t i = 0; i < count; ++i) total += one(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) total += one(i);
  }
  return total;
}

}  // namespace rftlab::kernels
