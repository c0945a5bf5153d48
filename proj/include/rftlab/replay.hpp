#ifndef RFTLAB_REPLAY_HPP
#define RFTLAB_REPLAY_HPP

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <vector>

#include "rftlab/types.hpp"

namespace rftlab {

class ByteWriter;
class ByteReader;

/// (batch size, current rollouts, replay rollouts), e.g. (32, 1, 7).
struct ReplayTuple {
  std::size_t batch_size = 32;
  std::size_t current = 1;
  std::size_t replay = 7;

  void validate() const;
};

/// Per-query ring buffers of recent outcome rewards. Only rewards are kept:
/// replayed rollouts feed the advantage statistics and never a ratio term.
class ReplayBuffer {
 public:
  struct Entry {
    int reward = 0;
    std::int64_t round = 0;
    std::uint32_t position = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  ReplayBuffer() = default;
  explicit ReplayBuffer(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }

  /// Appends in order and evicts the oldest entries beyond capacity.
  void push(QueryId query, std::span<const int> rewards, std::int64_t round);

  /// The k most recent rewards, oldest first.
  std::vector<double> support_set(QueryId query, std::size_t k) const;

  std::size_t size(QueryId query) const;
  const std::deque<Entry>* entries(QueryId query) const;
  std::size_t num_queries() const { return buffers_.size(); }

  /// Mean age in rounds of the stored entries of `query` relative to `now`.
  double mean_staleness(QueryId query, std::int64_t now) const;

  void encode(ByteWriter& w) const;
  static ReplayBuffer decode(ByteReader& r);

  friend bool operator==(const ReplayBuffer&, const ReplayBuffer&) = default;

 private:
  std::size_t capacity_ = 0;
  std::map<QueryId, std::deque<Entry>> buffers_;
};

/// GRPO advantage over current ++ replayed, returning only the entries
/// aligned with `current`.
std::vector<double> advantage_with_replay(std::span<const double> current,
                                          std::span<const double> replayed,
                                          double std_eps);

}  // namespace rftlab

#endif  // RFTLAB_REPLAY_HPP
