#include "rftlab/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "json.hpp"
#include "rftlab/binary_io.hpp"
#include "rftlab/config.hpp"

namespace rftlab {

namespace {

constexpr std::string_view kMagic = "RFTLCKPT";

void encode_state(ByteWriter& w, const TrainState& s) {
  encode_params(w, s.params);
  encode_params(w, s.reference);
  const auto& o = s.optimizer;
  w.f64(o.beta1);
  w.f64(o.beta2);
  w.f64(o.eps);
  w.i64(o.step);
  w.u64(o.m.size());
  for (double x : o.m) w.f64(x);
  for (double x : o.v) w.f64(x);
  s.replay.encode(w);
  w.u64(s.sampler.epoch);
  w.u64(s.sampler.position);
  w.u64(s.sampler.order.size());
  for (auto i : s.sampler.order) w.u64(i);
  w.i64(s.round);
  w.u64(s.rollouts_consumed);
}

TrainState decode_state(ByteReader& r) {
  TrainState s;
  s.params = decode_params(r);
  s.reference = decode_params(r);
  auto& o = s.optimizer;
  o.beta1 = r.f64();
  o.beta2 = r.f64();
  o.eps = r.f64();
  o.step = r.i64();
  const auto n = r.u64();
  if (n != s.params.size() || r.remaining() / 16 < n)
    throw CheckpointError("optimizer state does not match parameter shape");
  o.m.resize(n);
  o.v.resize(n);
  for (auto& x : o.m) x = r.f64();
  for (auto& x : o.v) x = r.f64();
  s.replay = ReplayBuffer::decode(r);
  s.sampler.epoch = r.u64();
  s.sampler.position = r.u64();
  const auto k = r.u64();
  if (r.remaining() / 8 < k) throw CheckpointError("truncated sampler state");
  s.sampler.order.resize(k);
  for (auto& i : s.sampler.order) i = r.u64();
  s.round = r.i64();
  s.rollouts_consumed = r.u64();
  return s;
}

}  // namespace

RunCheckpoint make_checkpoint(const RunSession& session) {
  RunCheckpoint c;
  c.config_json = config_to_json(session.config()).dump();
  c.point_label = session.point().label;
  c.seed = session.seed();
  c.state = session.state();
  c.records = session.records();
  c.window = session.window();
  return c;
}

std::string encode_checkpoint(const RunCheckpoint& ckpt) {
  ByteWriter p;
  p.str(ckpt.config_json);
  p.str(ckpt.point_label);
  p.u64(ckpt.seed);
  encode_state(p, ckpt.state);
  p.u64(ckpt.records.size());
  for (const auto& m : ckpt.records) {
    p.i64(m.round);
    p.f64(m.train_pass1);
    p.f64(m.test_pass1);
    p.f64(m.objective);
    p.f64(m.kl);
    p.u64(m.rollouts_consumed);
  }
  p.f64(ckpt.window.objective_sum);
  p.f64(ckpt.window.kl_sum);
  p.i64(ckpt.window.rounds);

  ByteWriter w;
  w.bytes(kMagic);
  w.u32(RunCheckpoint::kVersion);
  w.u64(p.data().size());
  w.bytes(p.data());
  w.u64(fnv1a64(p.data()));
  return w.take();
}

RunCheckpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != RunCheckpoint::kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(RunCheckpoint::kVersion) + ")");
  const auto size = r.u64();
  if (r.remaining() < 8 || r.remaining() - 8 < size)
    throw CheckpointError("checkpoint truncated");
  const auto payload = r.bytes(size);
  if (r.u64() != fnv1a64(payload))
    throw CheckpointError("checkpoint checksum mismatch");
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint");

  ByteReader p(payload);
  RunCheckpoint c;
  c.config_json = p.str();
  c.point_label = p.str();
  c.seed = p.u64();
  c.state = decode_state(p);
  const auto n = p.u64();
  if (p.remaining() / 48 < n) throw CheckpointError("truncated metric records");
  c.records.resize(n);
  for (auto& m : c.records) {
    m.round = p.i64();
    m.train_pass1 = p.f64();
    m.test_pass1 = p.f64();
    m.objective = p.f64();
    m.kl = p.f64();
    m.rollouts_consumed = p.u64();
  }
  c.window.objective_sum = p.f64();
  c.window.kl_sum = p.f64();
  c.window.rounds = p.i64();
  if (p.remaining() != 0) throw CheckpointError("checkpoint payload has extra bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const RunCheckpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

RunCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return decode_checkpoint(data);
}

}  // namespace rftlab
