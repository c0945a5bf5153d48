#ifndef RFTLAB_RNG_HPP
#define RFTLAB_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace rftlab {

/// Stream tags. Every random draw in a run comes from a generator seeded by
/// derive_seed(run_seed, {tag, ...coordinates}), so results do not depend on
/// thread scheduling and a resumed run needs no serialized engine state.
enum class Stream : std::uint64_t {
  dataset = 1,
  shuffle = 2,
  rollout = 3,
  eval_train = 4,
  eval_test = 5,
  test = 99,
};

std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                          std::initializer_list<std::uint64_t> coords = {});

/// mt19937_64 with portable derived distributions. The standard library
/// distributions are implementation-defined, so they are avoided.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform integer in [0, n), unbiased.
  std::size_t index(std::size_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rftlab

#endif  // RFTLAB_RNG_HPP
