#include "doctest.h"
#include "oracles.h"

using namespace amoeba;

namespace {

std::vector<std::uint32_t> iota_threads(std::uint32_t first, unsigned n) {
  std::vector<std::uint32_t> v(n);
  for (unsigned i = 0; i < n; ++i) v[i] = first + i;
  return v;
}

LaneMask lanes(std::initializer_list<std::pair<unsigned, unsigned>> ranges) {
  LaneMask m;
  for (auto [a, b] : ranges)
    for (unsigned i = a; i < b; ++i) m.set(i);
  return m;
}

// Fused SM with one 64-lane warp per entry of `taken` (empty mask: convergent).
struct FusedPair {
  Sm sm{0, SmConfig{}, 2};
  WarpPool pool;
  ThreadTable tt{1024};
  PairState pair;

  explicit FusedPair(const std::vector<LaneMask>& taken) {
    pair.mode = PairMode::Fused;
    for (std::size_t i = 0; i < taken.size(); ++i) {
      WarpContext w = make_warp(0, 0, iota_threads(static_cast<std::uint32_t>(64 * i), 64));
      if (taken[i].any()) apply_branch(w, 10, taken[i]);
      const auto id = pool.add(w);
      pool[id].origin = id;
      for (std::uint32_t t : pool[id].threads) tt.owner[t] = id;
      sm.subcores[0].warps.push_back(id);
    }
  }
};

}  // namespace

TEST_CASE("classification uses both divergence rules") {
  const ReconfigParams p;
  WarpContext w = make_warp(0, 0, iota_threads(0, 32));
  CHECK_FALSE(classify_divergent(w, 1000, p));
  apply_branch(w, 5, lanes({{0, 8}}));
  CHECK(classify_divergent(w, 1000, p));

  WarpContext m = make_warp(1, 0, iota_threads(32, 32));
  m.pending_lanes = 4;
  m.load_issue_cycle = 800;
  CHECK_FALSE(classify_divergent(m, 1000, p));
  CHECK(classify_divergent(m, 1001, p));
  m.done = true;
  CHECK_FALSE(classify_divergent(m, 5000, p));
}

TEST_CASE("split needs strictly more than theta") {
  CHECK(check_split(1, 4, 0.25) == SplitDecision::Stay);
  CHECK(check_split(2, 4, 0.25) == SplitDecision::Split);
  CHECK(check_split(0, 0, 0.25) == SplitDecision::Stay);
}

TEST_CASE("direct split halves by lane index") {
  WarpContext w = make_warp(4, 0, iota_threads(0, 64));
  apply_branch(w, 9, lanes({{0, 8}, {40, 48}}));
  auto [lo, hi] = direct_split(w);
  CHECK(lo.lanes() == 32);
  CHECK(hi.threads.front() == 32);
  CHECK(lo.active().count() == 8);
  CHECK(hi.active().count() == 8);
}

TEST_CASE("regrouping puts waiting groups in the slow half") {
  WarpContext w = make_warp(0, 0, iota_threads(0, 64));
  apply_branch(w, 9, lanes({{0, 8}, {16, 24}, {40, 48}, {56, 64}}));
  ThreadTable tt(64);
  const auto scores = group_scores(w, tt, 8, 0);
  CHECK(scores == std::vector<std::uint64_t>{0, 1, 0, 1, 1, 0, 1, 0});
  const Regrouped r = regroup_warps(w, tt, 8, 0);
  CHECK(r.slow_groups == std::vector<unsigned>{1, 3, 4, 6});
  CHECK(r.fast_groups == std::vector<unsigned>{0, 2, 5, 7});
  CHECK(r.fast.active().count() == 32);
  CHECK(r.slow.depth() == 0);

  tt.pending[20] = 1;
  w.load_issue_cycle = 3;
  const auto mem = group_scores(w, tt, 8, 10);
  CHECK(mem[2] == (std::uint64_t{1} << 32) + 7);
  CHECK_THROWS_AS(group_scores(w, tt, 7, 0), ConfigError);
}

TEST_CASE("ties keep lower group indices fast") {
  CHECK(slowness_order({0, 0, 0, 0}) == std::vector<unsigned>{3, 2, 1, 0});
  CHECK(slowness_order({5, 1, 5, 0}) == std::vector<unsigned>{2, 0, 1, 3});
}

TEST_CASE("split, migrate and re-fuse conserve lanes") {
  for (Scheme policy : {Scheme::DirectSplit, Scheme::WarpRegroup}) {
    const LaneMask div = lanes({{0, 8}, {32, 40}});
    FusedPair f({div, div, LaneMask{}, LaneMask{}});
    const ReconfigParams p;
    f.pair.divergence_bin = {0, 1};
    const unsigned before = resident_lanes(f.sm, f.pool);
    const SplitOutcome out = execute_split(f.pair, f.sm, f.pool, f.tt, policy, 100, p);
    CHECK(f.pair.mode == PairMode::SplitRunning);
    CHECK(f.sm.subcores.size() == 2);
    CHECK(f.sm.subcores[0].simd_width == 8);
    CHECK(f.sm.stall_until == 100 + p.split_cost);
    CHECK(resident_lanes(f.sm, f.pool) == before);
    CHECK(f.pair.log.back().lanes_before == f.pair.log.back().lanes_after);
    if (policy == Scheme::DirectSplit) {
      CHECK(out.to_sm1 == 4);
      CHECK(out.fast_kept == 0);
      CHECK(f.sm.subcores[0].warps.size() == 2);
    } else {
      CHECK(out.to_sm1 == 2);
      CHECK(out.fast_kept == 2);
      CHECK(f.sm.subcores[0].warps.size() == 4);
    }
    for (std::uint32_t t = 0; t < 256; ++t) CHECK_FALSE(f.pool[f.tt.owner[t]].replaced);

    CHECK(migrate_fast_warps(f.pair, f.sm, f.pool, 100, p) == 0);
    f.sm.subcores[1].idle_cycles = 900;
    const std::size_t on1 = f.sm.subcores[1].warps.size();
    CHECK(migrate_fast_warps(f.pair, f.sm, f.pool, 100 + p.migration_period, p) == 1);
    CHECK(f.sm.subcores[1].warps.size() == on1 + 1);

    CHECK_FALSE(check_refuse(f.pair, f.pool));
    for (std::uint32_t id : f.pair.sm1_divergent) f.pool[id].done = true;
    CHECK(check_refuse(f.pair, f.pool));
    execute_refuse(f.pair, f.sm, f.pool, 2000);
    CHECK(f.pair.mode == PairMode::Fused);
    CHECK(f.sm.subcores.size() == 1);
    CHECK(f.sm.subcores[0].simd_width == 16);
    CHECK(f.pair.count(PairMode::Fused, PairMode::SplitRunning) == 1);
    CHECK(f.pair.count(PairMode::SplitRunning, PairMode::Fused) == 1);
  }
}

TEST_CASE("siblings merge back after a re-fuse") {
  FusedPair f({lanes({{0, 8}, {32, 40}})});
  const ReconfigParams p;
  f.pair.divergence_bin = {0};
  execute_split(f.pair, f.sm, f.pool, f.tt, Scheme::DirectSplit, 0, p);
  // Move both halves past the branch body so their stacks agree.
  for (std::uint32_t id : f.sm.subcores[1].warps) {
    WarpContext& w = f.pool[id];
    while (w.depth() > 0) advance(w, 10);
  }
  std::set<std::uint32_t> halves = f.pair.sm1_divergent;
  f.pair.sm1_divergent.clear();
  execute_refuse(f.pair, f.sm, f.pool, 100);
  CHECK(merge_siblings(f.sm, f.pool, f.tt, 100) == 1);
  REQUIRE(f.sm.subcores[0].warps.size() == 1);
  const WarpContext& m = f.pool[f.sm.subcores[0].warps[0]];
  CHECK(m.lanes() == 64);
  CHECK(m.threads == iota_threads(0, 64));
  for (std::uint32_t id : halves) CHECK(f.pool[id].replaced);
}

TEST_CASE("schemes parse by name") {
  for (Scheme s : all_schemes()) CHECK(scheme_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(scheme_from_string("fast"), ConfigError);
  CHECK(is_dynamic(Scheme::WarpRegroup));
  CHECK_FALSE(is_dynamic(Scheme::StaticFuse));
}
