#include "rftlab/replay.hpp"

#include "rftlab/binary_io.hpp"
#include "rftlab/learner.hpp"

namespace rftlab {

void ReplayTuple::validate() const {
  if (batch_size == 0) throw ConfigError("replay tuple: batch size must be >= 1");
  if (current == 0) throw ConfigError("replay tuple: current rollouts must be >= 1");
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
}

void ReplayBuffer::push(QueryId query, std::span<const int> rewards,
                        std::int64_t round) {
  auto& buf = buffers_[query];
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    buf.push_back(Entry{rewards[i], round, static_cast<std::uint32_t>(i)});
    if (buf.size() > capacity_) buf.pop_front();
  }
}

std::vector<double> ReplayBuffer::support_set(QueryId query,
                                              std::size_t k) const {
  std::vector<double> out;
  auto it = buffers_.find(query);
  if (it == buffers_.end()) return out;
  const auto& buf = it->second;
  const std::size_t n = std::min(k, buf.size());
  out.reserve(n);
  for (std::size_t i = buf.size() - n; i < buf.size(); ++i)
    out.push_back(static_cast<double>(buf[i].reward));
  return out;
}

std::size_t ReplayBuffer::size(QueryId query) const {
  auto it = buffers_.find(query);
  return it == buffers_.end() ? 0 : it->second.size();
}

const std::deque<ReplayBuffer::Entry>* ReplayBuffer::entries(
    QueryId query) const {
  auto it = buffers_.find(query);
  return it == buffers_.end() ? nullptr : &it->second;
}

double ReplayBuffer::mean_staleness(QueryId query, std::int64_t now) const {
  auto it = buffers_.find(query);
  if (it == buffers_.end() || it->second.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : it->second) s += static_cast<double>(now - e.round);
  return s / static_cast<double>(it->second.size());
}

void ReplayBuffer::encode(ByteWriter& w) const {
  w.u64(capacity_);
  w.u64(buffers_.size());
  for (const auto& [q, buf] : buffers_) {
    w.i64(q);
    w.u64(buf.size());
    for (const auto& e : buf) {
      w.u8(static_cast<std::uint8_t>(e.reward));
      w.i64(e.round);
      w.u32(e.position);
    }
  }
}

ReplayBuffer ReplayBuffer::decode(ByteReader& r) {
  ReplayBuffer b;
  b.capacity_ = r.u64();
  const auto nq = r.u64();
  for (std::uint64_t i = 0; i < nq; ++i) {
    const QueryId q = r.i64();
    const auto n = r.u64();
    if (n > b.capacity_) throw CheckpointError("replay buffer exceeds capacity");
    auto& buf = b.buffers_[q];
    for (std::uint64_t j = 0; j < n; ++j) {
      Entry e;
      e.reward = r.u8();
      e.round = r.i64();
      e.position = r.u32();
      buf.push_back(e);
    }
  }
  return b;
}

std::vector<double> advantage_with_replay(std::span<const double> current,
                                          std::span<const double> replayed,
                                          double std_eps) {
  std::vector<double> all(current.begin(), current.end());
  all.insert(all.end(), replayed.begin(), replayed.end());
  auto adv = grpo_advantage(all, std_eps);
  adv.resize(current.size());
  return adv;
}

}  // namespace rftlab
