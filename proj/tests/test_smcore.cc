#include <map>

#include "doctest.h"
#include "oracles.h"

using namespace amoeba;

namespace {

// One shared stream for every thread; memory and barriers are recorded.
struct FakeHost : SmHost {
  InstrStream stream;
  WarpPool pool;
  ThreadTable tt{256};
  std::vector<MemRequest> sent;
  unsigned barriers = 0, exits = 0;

  const AbstractInstr& instr(std::uint32_t, std::uint32_t pc) const override { return stream.at(pc); }
  WarpPool& warps() override { return pool; }
  ThreadTable& threads() override { return tt; }
  void submit(Sm&, MemRequest req) override { sent.push_back(std::move(req)); }
  void on_barrier(Sm&, WarpContext& w) override {
    ++barriers;
    w.at_barrier = false;
  }
  void on_exit(Sm&, WarpContext&) override { ++exits; }
};

std::vector<std::uint32_t> iota_threads(std::uint32_t first, unsigned n) {
  std::vector<std::uint32_t> v(n);
  for (unsigned i = 0; i < n; ++i) v[i] = first + i;
  return v;
}

AbstractInstr compute(std::uint32_t lat = 4) {
  AbstractInstr i;
  i.latency = lat;
  return i;
}

}  // namespace

TEST_CASE("occupancy is ceil of active lanes over SIMD width") {
  CHECK(occupancy(32, 8) == 4);
  CHECK(occupancy(9, 8) == 2);
  CHECK(occupancy(1, 8) == 1);
  CHECK(occupancy(64, 16) == 4);
  CHECK(occupancy(0, 8) == 1);
}

TEST_CASE("scaling doubles per-SM resources") {
  const SmConfig b;
  const SmConfig f = scaled(b, 2);
  CHECK(f.warp_size == 64);
  CHECK(f.simd_width == 16);
  CHECK(f.max_threads == 2048);
  CHECK(f.l1d_ways == 8);
  CHECK(f.mshr_entries == 128);
  CHECK(l1d_geometry(f).sets == l1d_geometry(b).sets);
  CHECK_THROWS_AS(scaled(b, 8), ConfigError);
}

TEST_CASE("CTA admission honours thread and CTA limits") {
  Sm sm(0, SmConfig{});
  CHECK(sm.can_accept_cta(256));
  sm.resident_threads = 900;
  CHECK_FALSE(sm.can_accept_cta(256));
  sm.resident_threads = 0;
  sm.resident_ctas = 8;
  CHECK_FALSE(sm.can_accept_cta(32));
}

TEST_CASE("SIMT stack serializes a divergent branch and reconverges") {
  WarpContext w = make_warp(0, 0, iota_threads(0, 32));
  LaneMask taken;
  for (unsigned l = 0; l < 8; ++l) taken.set(l);
  CHECK(apply_branch(w, 5, taken));
  CHECK(w.depth() == 1);
  CHECK(w.pc() == 1);
  CHECK(w.active().count() == 8);
  CHECK(w.active_fraction() == doctest::Approx(0.25));
  advance(w, 2);
  advance(w, 5);
  CHECK(w.depth() == 0);
  CHECK(w.pc() == 5);
  CHECK(w.active().count() == 32);

  CHECK_FALSE(apply_branch(w, 9, full_mask(32)));
  CHECK(w.pc() == 6);
  CHECK_FALSE(apply_branch(w, 9, LaneMask{}));
  CHECK(w.pc() == 9);
}

TEST_CASE("slicing and merging restore the original warp") {
  WarpContext w = make_warp(3, 1, iota_threads(0, 64));
  LaneMask taken;
  for (unsigned l = 0; l < 64; l += 3) taken.set(l);
  apply_branch(w, 10, taken);
  std::vector<unsigned> lo(32), hi(32);
  for (unsigned i = 0; i < 32; ++i) {
    lo[i] = i;
    hi[i] = 32 + i;
  }
  const WarpContext a = slice_warp(w, lo, 7);
  const WarpContext b = slice_warp(w, hi, 8);
  CHECK(a.lanes() == 32);
  CHECK(a.origin == 3);
  CHECK(a.active().count() + b.active().count() == taken.count());
  REQUIRE(can_merge(a, b, 0));
  const WarpContext m = merge_warps(a, b);
  CHECK(m.threads == w.threads);
  CHECK(m.stack == w.stack);

  std::vector<unsigned> none_taken = {1, 2};
  const WarpContext c = slice_warp(w, none_taken, 9);
  CHECK(c.depth() == 0);
  CHECK(c.pc() == 10);
}

TEST_CASE("GTO keeps the greedy warp and then picks the oldest") {
  WarpPool pool;
  Subcore sc;
  for (int i = 0; i < 3; ++i) sc.warps.push_back(pool.add(make_warp(0, 0, iota_threads(32 * i, 32))));
  pool[0].last_issue_cycle = 5;
  pool[1].last_issue_cycle = 2;
  pool[2].last_issue_cycle = 2;
  CHECK(*schedule(sc, pool, 10) == 1);
  sc.last_issued = 0;
  CHECK(*schedule(sc, pool, 10) == 0);
  pool[0].ready_at = 20;
  CHECK(*schedule(sc, pool, 10) == 1);
  pool[1].done = true;
  pool[2].done = true;
  CHECK_FALSE(schedule(sc, pool, 10).has_value());
}

TEST_CASE("pipeline retires per lane and reports memory and barriers") {
  FakeHost h;
  h.stream.push_back(compute());
  AbstractInstr ld;
  ld.kind = InstrKind::Load;
  ld.addrs.resize(kWarpSize);
  for (unsigned l = 0; l < kWarpSize; ++l) ld.addrs[l] = 4 * l + (l >= 16 ? 4096 : 0);
  h.stream.push_back(ld);
  AbstractInstr bar;
  bar.kind = InstrKind::Barrier;
  h.stream.push_back(bar);
  AbstractInstr ex;
  ex.kind = InstrKind::Exit;
  h.stream.push_back(ex);

  Sm sm(0, SmConfig{});
  const auto id = h.pool.add(make_warp(0, 0, iota_threads(0, 32)));
  sm.subcores[0].warps.push_back(id);
  for (std::uint64_t c = 0; c < 500 && !h.pool[id].done; ++c) {
    if (h.pool[id].pending_lanes && c > 200) {
      for (std::uint32_t t = 0; t < 32; ++t) h.tt.pending[t] = 0;
      h.pool[id].pending_lanes = 0;
    }
    step_sm(sm, c, h);
  }
  CHECK(h.pool[id].done);
  CHECK(h.sent.size() == 2);
  CHECK(h.barriers == 1);
  CHECK(h.exits == 1);
  for (std::uint32_t t = 0; t < 32; ++t) CHECK(h.tt.retired[t] == 4);
  CHECK(sm.counters.thread_insns == 4 * 32);
  CHECK(sm.counters.load_insns == 1);
  CHECK(sm.counters.lane_accesses == 32);
}

TEST_CASE("divergent branch costs a bubble and inactive lanes") {
  FakeHost h;
  AbstractInstr br;
  br.kind = InstrKind::Branch;
  br.reconv = 3;
  br.taken_mask = 0xffu;
  h.stream = {br, compute(), compute(), compute()};
  AbstractInstr ex;
  ex.kind = InstrKind::Exit;
  h.stream.push_back(ex);
  Sm sm(0, SmConfig{});
  const auto id = h.pool.add(make_warp(0, 0, iota_threads(0, 32)));
  sm.subcores[0].warps.push_back(id);
  for (std::uint64_t c = 0; c < 500 && !h.pool[id].done; ++c) step_sm(sm, c, h);
  CHECK(sm.counters.divergent_branches == 1);
  CHECK(sm.counters.control_stall_cycles == 2);
  CHECK(sm.counters.inactive_thread_cycles == 2 * 24);
  CHECK(h.tt.retired[0] == 5);
  CHECK(h.tt.retired[31] == 3);
  CHECK(h.tt.retired[0] == oracle::thread_instructions(h.stream, 0));
  CHECK(h.tt.retired[31] == oracle::thread_instructions(h.stream, 31));
}
