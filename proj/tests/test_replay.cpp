#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "rftlab/binary_io.hpp"
#include "rftlab/replay.hpp"

using namespace rftlab;

TEST_CASE("replay ring keeps the most recent rewards per query") {
  ReplayBuffer buf(10);
  CHECK(buf.support_set(5, 7).empty());
  CHECK(buf.size(5) == 0);
  for (int round = 1; round <= 4; ++round) {
    const std::vector<int> r{round % 2, 1, 0, round % 2};
    buf.push(5, r, round);
  }
  CHECK(buf.size(5) == 10);
  const auto* e = buf.entries(5);
  REQUIRE(e != nullptr);
  // 16 pushed, the first 6 evicted: round 2 positions 2..3 remain first
  CHECK(e->front().round == 2);
  CHECK(e->front().position == 2);
  CHECK(e->back().round == 4);
  CHECK(e->back().position == 3);

  CHECK(buf.support_set(5, 3) == std::vector<double>{1, 0, 0});
  CHECK(buf.support_set(5, 100).size() == 10);
  CHECK(buf.size(6) == 0);
  CHECK(buf.num_queries() == 1);
}

TEST_CASE("replay warm-up grows the support one round at a time") {
  ReplayBuffer buf(7);
  const std::vector<int> one{1};
  for (int round = 1; round <= 10; ++round) {
    CHECK(buf.support_set(0, 7).size() == std::min<std::size_t>(round - 1, 7));
    buf.push(0, one, round);
  }
}

TEST_CASE("replay staleness is the mean entry age") {
  ReplayBuffer buf(4);
  buf.push(1, std::vector<int>{1, 0}, 3);
  buf.push(1, std::vector<int>{1, 1}, 5);
  CHECK(buf.mean_staleness(1, 6) == doctest::Approx((3 + 3 + 1 + 1) / 4.0));
  CHECK(buf.mean_staleness(2, 6) == 0.0);
}

TEST_CASE("replay advantage equals the union advantage restricted to current") {
  Rng rng(31);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> cur(1 + rng.index(8)), rep(rng.index(9));
    for (auto& x : cur) x = static_cast<double>(rng.index(2));
    for (auto& x : rep) x = static_cast<double>(rng.index(2));
    const auto got = advantage_with_replay(cur, rep, 1e-8);
    std::vector<double> all = cur;
    all.insert(all.end(), rep.begin(), rep.end());
    const auto want = oracle::direct_advantage(all, 1e-8);
    REQUIRE(got.size() == cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);

    // the union is a multiset: order of the replayed part is irrelevant
    std::reverse(rep.begin(), rep.end());
    const auto again = advantage_with_replay(cur, rep, 1e-8);
    for (std::size_t i = 0; i < cur.size(); ++i) CHECK(std::abs(got[i] - again[i]) < 1e-12);
  }
  const std::vector<double> cur{1, 0};
  CHECK(advantage_with_replay(cur, {}, 1e-8) == grpo_advantage(cur, 1e-8));
}

TEST_CASE("replay buffer serializes exactly") {
  ReplayBuffer buf(3);
  buf.push(2, std::vector<int>{1, 0, 1, 1}, 9);
  buf.push(-4, std::vector<int>{0}, 10);
  ByteWriter w;
  buf.encode(w);
  ByteReader r(w.data());
  CHECK(ReplayBuffer::decode(r) == buf);

  ByteReader cut(std::string_view(w.data()).substr(0, w.data().size() - 2));
  CHECK_THROWS_AS(ReplayBuffer::decode(cut), CheckpointError);
}

TEST_CASE("replay shapes are validated") {
  CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
  ReplayTuple t{32, 0, 7};
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t.current = 1;
  CHECK_NOTHROW(t.validate());
}
