#ifndef RFTLAB_CHECKPOINT_HPP
#define RFTLAB_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rftlab/learner.hpp"
#include "rftlab/pipeline.hpp"

namespace rftlab {

/// Everything needed to continue a run bit-exactly: the resolved config, the
/// sweep point and seed, optimizer/replay/sampler state, and the metric
/// records and averaging window so far. RNG streams are derived from
/// (seed, round, item), so no engine state is stored.
struct RunCheckpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;
  std::string point_label;
  std::uint64_t seed = 0;
  TrainState state;
  std::vector<MetricRecord> records;
  RunSession::Window window;
};

RunCheckpoint make_checkpoint(const RunSession& session);

/// Layout: "RFTLCKPT", u32 version, u64 payload size, payload, u64 FNV-1a of
/// the payload. All integers little-endian.
std::string encode_checkpoint(const RunCheckpoint& ckpt);
RunCheckpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const RunCheckpoint& ckpt);
RunCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rftlab

#endif  // RFTLAB_CHECKPOINT_HPP
