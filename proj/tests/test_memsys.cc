#include <random>

#include "doctest.h"
#include "oracles.h"

using namespace amoeba;

TEST_CASE("coalesce matches the distinct line count") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 500; ++t) {
    std::vector<Addr> a(kWarpSize);
    const Addr base = rng() % (1 << 20);
    for (auto& x : a) x = rng() % 5 == 0 ? kNullAddr : base + rng() % 2048;
    const auto reqs = coalesce(a);
    CHECK(reqs.size() == oracle::distinct_lines(a));
    for (std::size_t i = 1; i < reqs.size(); ++i) CHECK(reqs[i - 1].line < reqs[i].line);
  }
}

TEST_CASE("stride one is one line per 32 words") {
  std::vector<Addr> a(kWarpSize);
  for (unsigned l = 0; l < kWarpSize; ++l) a[l] = 4096 + 4 * l;
  CHECK(coalesce(a).size() == 1);
  for (unsigned l = 0; l < kWarpSize; ++l) a[l] = 128 * l;
  CHECK(coalesce(a).size() == 32);
  std::vector<Addr> none(kWarpSize, kNullAddr);
  CHECK(coalesce(none).empty());
}

TEST_CASE("cross warp merging respects the window") {
  auto req = [](Addr line, std::uint64_t cycle, std::uint32_t warp) {
    MemRequest r;
    r.line = line;
    r.issue_cycle = cycle;
    r.warp_id = warp;
    r.lanes = {0};
    r.threads = {warp * 32};
    return r;
  };
  const auto merged = cross_warp_coalesce({req(0, 0, 1), req(0, 3, 2), req(0, 20, 3), req(128, 1, 4)}, 8);
  REQUIRE(merged.size() == 3);
  unsigned total = 0;
  for (const auto& m : merged) total += m.merged_warp_count;
  CHECK(total == 4);

  CoalescingQueue q(8);
  CHECK_FALSE(q.push(req(0, 0, 1)));
  CHECK(q.push(req(0, 4, 2)));
  CHECK_FALSE(q.push(req(0, 30, 3)));
  CHECK(q.size() == 2);
  CHECK(q.front().threads.size() == 2);
}

TEST_CASE("cache replay agrees with an explicit LRU") {
  std::mt19937_64 rng(11);
  CacheGeometry g;
  g.sets = 8;
  g.ways = 4;
  g.mshr_entries = 1 << 20;
  Cache c(g);
  oracle::LruCache ref(8, 4);
  for (int i = 0; i < 5000; ++i) {
    MemRequest r;
    r.id = i;
    r.line = (rng() % 96) * kLineSize;
    const bool expect = ref.access(r.line);
    const AccessResult res = c.access(r, i);
    CHECK((res.outcome == AccessOutcome::Hit) == expect);
    if (res.outcome != AccessOutcome::Hit) c.fill(r.line, i);
  }
}

TEST_CASE("MSHR merges same-line misses and refuses when full") {
  CacheGeometry g;
  g.sets = 4;
  g.ways = 2;
  g.mshr_entries = 2;
  g.mshr_merge_cap = 2;
  Cache c(g);
  MemRequest r;
  r.line = 0;
  r.id = 1;
  CHECK(c.access(r, 0).outcome == AccessOutcome::MissNew);
  r.id = 2;
  CHECK(c.access(r, 0).outcome == AccessOutcome::MissMerged);
  r.id = 3;
  CHECK(c.access(r, 0).outcome == AccessOutcome::MissMerged);
  r.id = 9;
  CHECK(c.access(r, 0).outcome == AccessOutcome::MshrFull);
  r.line = 128;
  r.id = 4;
  CHECK(c.access(r, 0).outcome == AccessOutcome::MissNew);
  r.line = 256;
  r.id = 5;
  CHECK(c.access(r, 0).outcome == AccessOutcome::MshrFull);
  CHECK(c.fill(0, 10) == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(c.contains(0));
  CHECK(c.mshr_in_use() == 1);
}

TEST_CASE("fusing keeps every resident line and adds a cycle") {
  CacheGeometry g;
  g.sets = 4;
  g.ways = 2;
  Cache a(g), b(g);
  for (Addr l : {0, 512, 128}) {
    MemRequest r;
    r.line = l;
    a.access(r, 0);
    a.fill(l, 0);
  }
  for (Addr l : {1024, 0}) {
    MemRequest r;
    r.line = l;
    b.access(r, 0);
    b.fill(l, 0);
  }
  const Cache f = fuse_l1(a, b);
  CHECK(f.geometry().ways == 4);
  CHECK(f.geometry().hit_latency == g.hit_latency + 1);
  for (Addr l : {0, 512, 128, 1024}) CHECK(f.contains(l));
  CHECK(f.tags().resident_lines().size() == 4);
  auto [lo, hi] = split_l1(f);
  CHECK(lo.geometry().ways == 2);
  CHECK(lo.tags().resident_lines().size() + hi.tags().resident_lines().size() == 4);
  CacheGeometry other = g;
  other.sets = 8;
  CHECK_THROWS_AS(fuse_l1(a, Cache(other)), ConfigError);
}

TEST_CASE("instruction cache charges the miss latency once") {
  InstructionCache ic(4, 2, 40);
  CHECK(ic.fetch(0, 100) == 140);
  CHECK(ic.fetch(0, 150) == 150);
  ic.prefetch(128, 150);
  CHECK(ic.fetch(128, 150) == 190);
  CHECK(ic.misses() == 1);
  CHECK(ic.accesses() == 3);
}

TEST_CASE("memory controller serves reads and counts blocked replies") {
  McConfig cfg;
  MemoryController mc(0, 1, cfg);
  MemRequest r;
  r.id = 7;
  r.line = 0;
  mc.accept(r);
  bool allow = false;
  std::uint64_t got = 0, at = 0;
  for (std::uint64_t t = 0; t < 2000 && !got; ++t) {
    if (t == 1000) allow = true;
    auto out = mc.service(t, [&](const McReply&) { return allow; });
    if (!out.empty()) {
      got = out[0].request_id;
      at = t;
    }
  }
  CHECK(got == 7);
  CHECK(at == 1000);
  CHECK(mc.stats().icnt_stall_cycles > 0);
  CHECK(mc.stats().l2_misses == 1);
  CHECK(mc.idle());

  mc.accept(r);
  std::uint64_t first = 0;
  for (std::uint64_t t = 3000; t < 4000 && !first; ++t)
    if (!mc.service(t, [](const McReply&) { return true; }).empty()) first = t - 3000;
  CHECK(first > 0);
  CHECK(first <= cfg.l2_latency + 1);
  CHECK(mc.stats().l2_hits == 1);
}
