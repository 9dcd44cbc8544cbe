#include "amoeba/reconfig.h"

#include <algorithm>
#include <cassert>
#include <numeric>

namespace amoeba {

const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::Baseline: return "baseline";
    case Scheme::ScaleUp: return "scale_up";
    case Scheme::StaticFuse: return "static_fuse";
    case Scheme::DirectSplit: return "direct_split";
    case Scheme::WarpRegroup: return "warp_regroup";
  }
  return "?";
}

Scheme scheme_from_string(const std::string& s) {
  for (Scheme k : all_schemes())
    if (s == to_string(k)) return k;
  throw ConfigError("unknown scheme '" + s +
                    "' (expected baseline, scale_up, static_fuse, direct_split or warp_regroup)");
}

const std::vector<Scheme>& all_schemes() {
  static const std::vector<Scheme> v = {Scheme::Baseline, Scheme::ScaleUp, Scheme::StaticFuse,
                                        Scheme::DirectSplit, Scheme::WarpRegroup};
  return v;
}

bool is_fusing(Scheme s) { return s != Scheme::Baseline; }
bool is_dynamic(Scheme s) { return s == Scheme::DirectSplit || s == Scheme::WarpRegroup; }

const char* to_string(PairMode m) {
  switch (m) {
    case PairMode::Baseline: return "BASELINE";
    case PairMode::Fused: return "FUSED";
    case PairMode::SplitRunning: return "SPLIT_RUNNING";
  }
  return "?";
}

unsigned PairState::count(PairMode from, PairMode to) const {
  return static_cast<unsigned>(std::count_if(log.begin(), log.end(), [&](const PairEvent& e) {
    return e.from == from && e.to == to;
  }));
}

void PairState::transition(PairMode to, std::uint64_t cycle, unsigned lanes_before,
                           unsigned lanes_after) {
  [[maybe_unused]] const bool legal =
      (mode == PairMode::Baseline && to == PairMode::Fused) ||
      (mode == PairMode::Fused && to == PairMode::SplitRunning) ||
      (mode == PairMode::SplitRunning && to == PairMode::Fused) ||
      (mode != PairMode::Baseline && to == PairMode::Baseline);
  assert(legal);
  assert(log.empty() || log.back().cycle <= cycle);
  log.push_back({cycle, mode, to, lanes_before, lanes_after});
  mode = to;
  divergence_bin.clear();
}

bool classify_divergent(const WarpContext& w, std::uint64_t now, const ReconfigParams& p) {
  if (w.done) return false;
  if (w.active_fraction() < p.control_frac) return true;
  return w.pending_lanes > 0 && now - w.load_issue_cycle > p.mem_age;
}

SplitDecision check_split(std::size_t binned, std::size_t resident, double theta) {
  if (resident == 0) return SplitDecision::Stay;
  return static_cast<double>(binned) / static_cast<double>(resident) > theta ? SplitDecision::Split
                                                                             : SplitDecision::Stay;
}

std::pair<WarpContext, WarpContext> direct_split(const WarpContext& w) {
  assert(w.lanes() >= 2);
  const unsigned half = w.lanes() / 2;
  std::vector<unsigned> lo(half);
  std::vector<unsigned> hi(w.lanes() - half);
  std::iota(lo.begin(), lo.end(), 0u);
  std::iota(hi.begin(), hi.end(), half);
  return {slice_warp(w, lo, w.id), slice_warp(w, hi, w.id)};
}

std::vector<std::uint64_t> group_scores(const WarpContext& w, const ThreadTable& tt,
                                        unsigned group_size, std::uint64_t now) {
  if (group_size == 0 || kWarpSize % group_size != 0 || w.lanes() % group_size != 0)
    throw ConfigError("group_size must divide 32, got " + std::to_string(group_size));
  constexpr std::uint64_t kMemory = std::uint64_t{1} << 32;
  std::vector<std::uint64_t> scores(w.lanes() / group_size, 0);
  for (unsigned l = 0; l < w.lanes(); ++l) {
    std::uint64_t s = 0;
    if (tt.pending[w.threads[l]]) {
      s = kMemory + (now - w.load_issue_cycle);
    } else {
      for (std::size_t k = w.stack.size(); k-- > 0;) {
        if (w.stack[k].mask.test(l)) break;
        ++s;
      }
    }
    scores[l / group_size] = std::max(scores[l / group_size], s);
  }
  return scores;
}

std::vector<unsigned> slowness_order(const std::vector<std::uint64_t>& scores) {
  std::vector<unsigned> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](unsigned a, unsigned b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a > b;
  });
  return order;
}

Regrouped regroup_warps(const WarpContext& w, const ThreadTable& tt, unsigned group_size,
                        std::uint64_t now) {
  const std::vector<std::uint64_t> scores = group_scores(w, tt, group_size, now);
  const std::vector<unsigned> order = slowness_order(scores);
  const std::size_t half = order.size() / 2;
  Regrouped r;
  r.slow_groups.assign(order.begin(), order.begin() + static_cast<long>(half));
  r.fast_groups.assign(order.begin() + static_cast<long>(half), order.end());
  std::sort(r.slow_groups.begin(), r.slow_groups.end());
  std::sort(r.fast_groups.begin(), r.fast_groups.end());
  auto lanes_of = [group_size](const std::vector<unsigned>& groups) {
    std::vector<unsigned> lanes;
    for (unsigned g : groups)
      for (unsigned i = 0; i < group_size; ++i) lanes.push_back(g * group_size + i);
    return lanes;
  };
  r.fast = slice_warp(w, lanes_of(r.fast_groups), w.id);
  r.slow = slice_warp(w, lanes_of(r.slow_groups), w.id);
  return r;
}

unsigned resident_lanes(const Sm& sm, const WarpPool& pool) {
  unsigned n = 0;
  for (const Subcore& sc : sm.subcores)
    for (std::uint32_t id : sc.warps)
      if (!pool[id].done) n += pool[id].lanes();
  return n;
}

namespace {

// Registers a carved warp and points its threads at it.
std::uint32_t adopt(WarpContext w, WarpPool& pool, ThreadTable& tt) {
  w.pending_lanes = 0;
  for (std::uint32_t t : w.threads) w.pending_lanes += tt.pending[t];
  const std::uint32_t id = pool.add(std::move(w));
  for (std::uint32_t t : pool[id].threads) tt.owner[t] = id;
  return id;
}

void erase_id(std::vector<std::uint32_t>& v, std::uint32_t id) {
  v.erase(std::remove(v.begin(), v.end(), id), v.end());
}

}  // namespace

SplitOutcome execute_split(PairState& pair, Sm& sm, WarpPool& pool, ThreadTable& tt, Scheme policy,
                           std::uint64_t now, const ReconfigParams& p) {
  assert(pair.mode == PairMode::Fused && sm.subcores.size() == 1);
  assert(policy == Scheme::DirectSplit || policy == Scheme::WarpRegroup);
  SplitOutcome out;
  std::vector<std::uint32_t> chosen;
  for (std::uint32_t id : pair.divergence_bin) {
    const auto& ws = sm.subcores[0].warps;
    if (std::find(ws.begin(), ws.end(), id) != ws.end() && !pool[id].done) chosen.push_back(id);
  }
  if (chosen.empty()) {
    pair.divergence_bin.clear();
    return out;
  }
  const unsigned before = resident_lanes(sm, pool);
  const unsigned half_width = std::max(1u, sm.subcores[0].simd_width / 2);
  sm.subcores[0].simd_width = half_width;
  sm.subcores.push_back(Subcore{half_width, {}, std::nullopt, 0, 0});
  Subcore& sm0 = sm.subcores[0];
  Subcore& sm1 = sm.subcores[1];
  pair.sm1_idle_mark = 0;
  pair.sm1_divergent.clear();

  for (std::uint32_t id : chosen) {
    erase_id(sm0.warps, id);
    if (pool[id].lanes() <= kWarpSize) {
      sm1.warps.push_back(id);
      pair.sm1_divergent.insert(id);
      ++out.to_sm1;
      continue;
    }
    const WarpContext src = pool[id];
    pool[id].replaced = true;
    if (policy == Scheme::DirectSplit) {
      auto [lo, hi] = direct_split(src);
      for (WarpContext* part : {&lo, &hi}) {
        const std::uint32_t nid = adopt(std::move(*part), pool, tt);
        sm1.warps.push_back(nid);
        pair.sm1_divergent.insert(nid);
        ++out.to_sm1;
      }
    } else {
      Regrouped r = regroup_warps(src, tt, p.group_size, now);
      const std::uint32_t fast = adopt(std::move(r.fast), pool, tt);
      const std::uint32_t slow = adopt(std::move(r.slow), pool, tt);
      sm0.warps.push_back(fast);
      sm1.warps.push_back(slow);
      pair.sm1_divergent.insert(slow);
      ++out.to_sm1;
      ++out.fast_kept;
    }
  }
  sm.stall_until = std::max(sm.stall_until, now + p.split_cost);
  pair.next_migration = now + p.migration_period;
  pair.transition(PairMode::SplitRunning, now, before, resident_lanes(sm, pool));
  return out;
}

bool check_refuse(PairState& pair, const WarpPool& pool) {
  assert(pair.mode == PairMode::SplitRunning);
  std::erase_if(pair.sm1_divergent, [&](std::uint32_t id) {
    const WarpContext& w = pool[id];
    return w.done || w.replaced;
  });
  return pair.sm1_divergent.empty();
}

void execute_refuse(PairState& pair, Sm& sm, const WarpPool& pool, std::uint64_t now) {
  assert(pair.mode == PairMode::SplitRunning && sm.subcores.size() == 2);
  const unsigned before = resident_lanes(sm, pool);
  Subcore& sm0 = sm.subcores[0];
  Subcore& sm1 = sm.subcores[1];
  sm0.warps.insert(sm0.warps.end(), sm1.warps.begin(), sm1.warps.end());
  sm0.simd_width += sm1.simd_width;
  sm0.busy_until = std::max(sm0.busy_until, sm1.busy_until);
  sm0.idle_cycles += sm1.idle_cycles;
  sm.subcores.pop_back();
  pair.sm1_divergent.clear();
  pair.transition(PairMode::Fused, now, before, resident_lanes(sm, pool));
}

unsigned migrate_fast_warps(PairState& pair, Sm& sm, const WarpPool& pool, std::uint64_t now,
                            const ReconfigParams& p) {
  assert(pair.mode == PairMode::SplitRunning && sm.subcores.size() == 2);
  if (now < pair.next_migration) return 0;
  Subcore& sm0 = sm.subcores[0];
  Subcore& sm1 = sm.subcores[1];
  const std::uint64_t idle = sm1.idle_cycles - pair.sm1_idle_mark;
  pair.sm1_idle_mark = sm1.idle_cycles;
  pair.next_migration = now + p.migration_period;
  const double frac = static_cast<double>(idle) / static_cast<double>(p.migration_period);
  if (frac <= p.migrate_idle_frac) return 0;
  std::vector<std::uint32_t> ready;
  for (std::uint32_t id : sm0.warps)
    if (pool[id].can_issue(now)) ready.push_back(id);
  if (ready.size() <= 1) return 0;
  // Leave the greedy warp where it is; move the least recently issued.
  std::uint32_t pick = ready.front();
  for (std::uint32_t id : ready) {
    if (sm0.last_issued && id == *sm0.last_issued) continue;
    if (sm0.last_issued && pick == *sm0.last_issued) pick = id;
    if (pool[id].last_issue_cycle < pool[pick].last_issue_cycle) pick = id;
  }
  erase_id(sm0.warps, pick);
  sm1.warps.push_back(pick);
  ++pair.migrated;
  return 1;
}

unsigned merge_siblings(Sm& sm, WarpPool& pool, ThreadTable& tt, std::uint64_t now) {
  if (sm.subcores.size() != 1) return 0;
  Subcore& sc = sm.subcores[0];
  unsigned merges = 0;
  for (std::size_t i = 0; i < sc.warps.size(); ++i) {
    const WarpContext& a = pool[sc.warps[i]];
    if (a.origin == a.id) continue;
    for (std::size_t j = i + 1; j < sc.warps.size(); ++j) {
      const WarpContext& b = pool[sc.warps[j]];
      if (a.lanes() + b.lanes() > sm.warp_width() || !can_merge(a, b, now)) continue;
      WarpContext m = merge_warps(a, b);
      pool[sc.warps[i]].replaced = true;
      pool[sc.warps[j]].replaced = true;
      const std::uint32_t nid = adopt(std::move(m), pool, tt);
      if (sc.last_issued && (*sc.last_issued == sc.warps[i] || *sc.last_issued == sc.warps[j]))
        sc.last_issued = nid;
      sc.warps[i] = nid;
      sc.warps.erase(sc.warps.begin() + static_cast<long>(j));
      ++merges;
      break;
    }
  }
  return merges;
}

}  // namespace amoeba
