#ifndef RFTLAB_KERNELS_HPP
#define RFTLAB_KERNELS_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rftlab/learner.hpp"

// Data-parallel inner loops of a training round. Each kernel has an OpenMP
// version and a plain serial reference used by the tests and the benchmark.
// Randomness is keyed per work item, and reductions run in item order after
// the parallel region, so both versions return identical bits regardless of
// the thread count.
namespace rftlab::kernels {

enum class Exec { serial, parallel };

/// Samples `per_query` rollouts for each listed train query. Item (b, g)
/// draws from derive_seed(seed, Stream::rollout, {round, b, g}).
std::vector<Rollout> sample_rollouts(Exec exec, const PolicyParams& params,
                                     const FeatureMap& fmap,
                                     std::span<const Query> queries,
                                     std::span<const std::size_t> batch,
                                     std::size_t per_query,
                                     const SamplingParams& sp,
                                     std::uint64_t seed, std::int64_t round);

struct ObjectiveSpec {
  double clip_eps = 0.2;
  double kl_coeff = 0.0;
  bool length_normalize = false;
  bool want_gradient = true;
};

ObjectiveEval objective(Exec exec, const PolicyParams& params,
                        const PolicyParams& ref, const FeatureMap& fmap,
                        std::span<const Query> queries,
                        std::span<const RolloutGroup> groups,
                        std::span<const double> signals,
                        const ObjectiveSpec& spec);

/// Number of correct responses over `samples_per_query` draws per query.
/// Draw (i, r) uses derive_seed(seed, stream, {i, r}).
std::uint64_t count_successes(Exec exec, const PolicyParams& params,
                              const FeatureMap& fmap,
                              std::span<const Query> queries,
                              const SamplingParams& sp,
                              std::size_t samples_per_query, std::uint64_t seed,
                              Stream stream);

}  // namespace rftlab::kernels

#endif  // RFTLAB_KERNELS_HPP
