#include "amoeba/smcore.h"

#include <algorithm>
#include <cassert>
#include <map>

namespace amoeba {

SmConfig scaled(const SmConfig& base, unsigned k) {
  assert(k >= 1);
  SmConfig c = base;
  c.warp_size *= k;
  c.simd_width *= k;
  c.max_threads *= k;
  c.max_ctas *= k;
  c.registers *= k;
  c.l1d_kb *= k;
  c.shared_kb *= k;
  c.mshr_entries *= k;
  c.l1d_ways *= k;
  c.l1i_kb *= k;
  c.l1i_ways *= k;
  c.ldst_ports *= k;
  if (k > 1) c.l1d_hit_latency += 1;
  if (c.warp_size > kMaxLanes) throw ConfigError("warp width above " + std::to_string(kMaxLanes));
  return c;
}

CacheGeometry l1d_geometry(const SmConfig& cfg) {
  CacheGeometry g;
  g.ways = cfg.l1d_ways;
  g.line_size = kLineSize;
  g.sets = std::max(1u, cfg.l1d_kb * 1024 / (kLineSize * cfg.l1d_ways));
  g.hit_latency = cfg.l1d_hit_latency;
  g.mshr_entries = cfg.mshr_entries;
  g.mshr_merge_cap = cfg.mshr_merge_cap;
  return g;
}

InstructionCache make_l1i(const SmConfig& cfg) {
  unsigned sets = std::max(1u, cfg.l1i_kb * 1024 / (kLineSize * cfg.l1i_ways));
  return InstructionCache(sets, cfg.l1i_ways, cfg.l1i_miss_latency);
}

const char* to_string(WarpState s) {
  switch (s) {
    case WarpState::Ready: return "READY";
    case WarpState::WaitingMem: return "WAITING_MEM";
    case WarpState::WaitingBarrier: return "WAITING_BARRIER";
    case WarpState::AtBranchStall: return "AT_BRANCH_STALL";
    case WarpState::Done: return "DONE";
  }
  return "?";
}

double WarpContext::active_fraction() const {
  return threads.empty() ? 0.0 : static_cast<double>(active().count()) / threads.size();
}

WarpState WarpContext::state(std::uint64_t now) const {
  if (done) return WarpState::Done;
  if (pending_lanes > 0) return WarpState::WaitingMem;
  if (at_barrier) return WarpState::WaitingBarrier;
  if (bubble_until > now) return WarpState::AtBranchStall;
  return WarpState::Ready;
}

bool WarpContext::can_issue(std::uint64_t now) const {
  return state(now) == WarpState::Ready && !scoreboard_pending(now);
}

LaneMask full_mask(unsigned lanes) {
  LaneMask m;
  for (unsigned i = 0; i < lanes; ++i) m.set(i);
  return m;
}

WarpContext make_warp(std::uint32_t id, std::uint32_t cta_id, std::vector<std::uint32_t> threads) {
  assert(!threads.empty() && threads.size() <= kMaxLanes);
  WarpContext w;
  w.id = id;
  w.cta_id = cta_id;
  w.origin = id;
  w.stack.push_back({0, kNoReconv, full_mask(static_cast<unsigned>(threads.size()))});
  w.threads = std::move(threads);
  return w;
}

bool apply_branch(WarpContext& w, std::uint32_t reconv, const LaneMask& taken) {
  const LaneMask active = w.active();
  assert((taken & ~active).none());
  const std::uint32_t pc = w.pc();
  assert(reconv > pc);
  if (taken == active) {
    advance(w, pc + 1);
    return false;
  }
  if (taken.none()) {
    advance(w, reconv);
    return false;
  }
  w.stack.back().pc = reconv;
  w.stack.push_back({pc + 1, reconv, taken});
  reconverge(w);
  return true;
}

void reconverge(WarpContext& w) {
  assert(!w.stack.empty());
  while (w.stack.size() > 1 && w.stack.back().pc == w.stack.back().rpc) w.stack.pop_back();
}

void advance(WarpContext& w, std::uint32_t next_pc) {
  w.stack.back().pc = next_pc;
  reconverge(w);
}

WarpContext slice_warp(const WarpContext& w, std::span<const unsigned> lanes, std::uint32_t new_id) {
  assert(!lanes.empty());
  WarpContext out = w;
  out.id = new_id;
  out.threads.clear();
  out.stack.clear();
  for (unsigned l : lanes) out.threads.push_back(w.threads[l]);
  for (const StackEntry& e : w.stack) {
    StackEntry s{e.pc, e.rpc, {}};
    for (unsigned i = 0; i < lanes.size(); ++i)
      if (e.mask.test(lanes[i])) s.mask.set(i);
    if (s.mask.any() || out.stack.empty()) out.stack.push_back(s);
  }
  reconverge(out);
  return out;
}

bool can_merge(const WarpContext& a, const WarpContext& b, std::uint64_t now) {
  if (a.done || b.done || a.origin != b.origin || a.lanes() + b.lanes() > kMaxLanes) return false;
  if (!a.can_issue(now) || !b.can_issue(now)) return false;
  if (a.stack.size() != b.stack.size()) return false;
  for (std::size_t i = 0; i < a.stack.size(); ++i)
    if (a.stack[i].pc != b.stack[i].pc || a.stack[i].rpc != b.stack[i].rpc) return false;
  return true;
}

WarpContext merge_warps(const WarpContext& a, const WarpContext& b) {
  WarpContext out = a;
  out.threads.insert(out.threads.end(), b.threads.begin(), b.threads.end());
  const unsigned shift = a.lanes();
  for (std::size_t i = 0; i < out.stack.size(); ++i) out.stack[i].mask |= b.stack[i].mask << shift;
  out.ready_at = std::max(a.ready_at, b.ready_at);
  out.bubble_until = std::max(a.bubble_until, b.bubble_until);
  out.last_issue_cycle = std::min(a.last_issue_cycle, b.last_issue_cycle);
  return out;
}

std::uint32_t WarpPool::add(WarpContext w) {
  w.id = next_id();
  warps_.push_back(std::move(w));
  return warps_.back().id;
}

SmCounters& SmCounters::operator+=(const SmCounters& o) {
  cycles += o.cycles;
  subcore_cycles += o.subcore_cycles;
  warp_insns += o.warp_insns;
  thread_insns += o.thread_insns;
  idle_cycles += o.idle_cycles;
  control_stall_cycles += o.control_stall_cycles;
  active_thread_cycles += o.active_thread_cycles;
  inactive_thread_cycles += o.inactive_thread_cycles;
  load_insns += o.load_insns;
  store_insns += o.store_insns;
  divergent_branches += o.divergent_branches;
  lane_accesses += o.lane_accesses;
  coalesced_requests += o.coalesced_requests;
  requests_sent += o.requests_sent;
  mshr_full_stalls += o.mshr_full_stalls;
  resident_cta_cycles += o.resident_cta_cycles;
  ctas_completed += o.ctas_completed;
  return *this;
}

SmCounters SmCounters::operator-(const SmCounters& o) const {
  SmCounters d;
  d.cycles = cycles - o.cycles;
  d.subcore_cycles = subcore_cycles - o.subcore_cycles;
  d.warp_insns = warp_insns - o.warp_insns;
  d.thread_insns = thread_insns - o.thread_insns;
  d.idle_cycles = idle_cycles - o.idle_cycles;
  d.control_stall_cycles = control_stall_cycles - o.control_stall_cycles;
  d.active_thread_cycles = active_thread_cycles - o.active_thread_cycles;
  d.inactive_thread_cycles = inactive_thread_cycles - o.inactive_thread_cycles;
  d.load_insns = load_insns - o.load_insns;
  d.store_insns = store_insns - o.store_insns;
  d.divergent_branches = divergent_branches - o.divergent_branches;
  d.lane_accesses = lane_accesses - o.lane_accesses;
  d.coalesced_requests = coalesced_requests - o.coalesced_requests;
  d.requests_sent = requests_sent - o.requests_sent;
  d.mshr_full_stalls = mshr_full_stalls - o.mshr_full_stalls;
  d.resident_cta_cycles = resident_cta_cycles - o.resident_cta_cycles;
  d.ctas_completed = ctas_completed - o.ctas_completed;
  return d;
}

Sm::Sm(unsigned id_, const SmConfig& base, unsigned scale_)
    : id(id_),
      scale(scale_),
      cfg(scaled(base, scale_)),
      l1d(l1d_geometry(cfg)),
      l1i(make_l1i(cfg)),
      ldst(cfg.coalesce_window) {
  subcores.push_back(Subcore{cfg.simd_width, {}, std::nullopt, 0, 0});
}

bool Sm::can_accept_cta(unsigned threads) const {
  return resident_ctas < cfg.max_ctas && resident_threads + threads <= cfg.max_threads;
}

std::size_t Sm::resident_warps() const {
  std::size_t n = 0;
  for (const Subcore& sc : subcores) n += sc.warps.size();
  return n;
}

std::optional<std::uint32_t> schedule(const Subcore& sc, const WarpPool& warps, std::uint64_t now) {
  if (sc.last_issued) {
    auto it = std::find(sc.warps.begin(), sc.warps.end(), *sc.last_issued);
    if (it != sc.warps.end() && warps[*it].can_issue(now)) return *it;
  }
  std::optional<std::uint32_t> best;
  for (std::uint32_t id : sc.warps) {
    const WarpContext& w = warps[id];
    if (!w.can_issue(now)) continue;
    if (!best) {
      best = id;
      continue;
    }
    const WarpContext& b = warps[*best];
    if (w.last_issue_cycle < b.last_issue_cycle ||
        (w.last_issue_cycle == b.last_issue_cycle && id < *best))
      best = id;
  }
  return best;
}

unsigned occupancy(unsigned active_lanes, unsigned simd_width) {
  assert(simd_width > 0);
  return std::max(1u, (active_lanes + simd_width - 1) / simd_width);
}

namespace {

unsigned lane_in_stream(std::uint32_t thread) { return thread % kWarpSize; }

void issue_memory(Sm& sm, WarpContext& w, const LaneMask& active, bool is_write,
                  std::uint64_t now, SmHost& host) {
  std::map<Addr, std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>>> lines;
  const std::uint32_t pc = w.pc();
  for (unsigned l = 0; l < w.lanes(); ++l) {
    if (!active.test(l)) continue;
    const std::uint32_t t = w.threads[l];
    const Addr a = host.instr(t, pc).addrs[lane_in_stream(t)];
    if (a == kNullAddr) continue;
    auto& slot = lines[line_of(a)];
    slot.first.push_back(l);
    slot.second.push_back(t);
  }
  ThreadTable& tt = host.threads();
  for (auto& [line, lanes_threads] : lines) {
    sm.counters.lane_accesses += lanes_threads.second.size();
    MemRequest req;
    req.warp_id = w.id;
    req.sm_id = sm.id;
    req.line = line;
    req.is_write = is_write;
    req.issue_cycle = now;
    req.lanes = std::move(lanes_threads.first);
    if (!is_write) {
      for (std::uint32_t t : lanes_threads.second) {
        tt.pending[t] = 1;
        tt.owner[t] = w.id;
      }
      w.pending_lanes += static_cast<std::uint32_t>(lanes_threads.second.size());
      w.load_issue_cycle = now;
    }
    req.threads = std::move(lanes_threads.second);
    host.submit(sm, std::move(req));
  }
}

}  // namespace

unsigned issue(Sm& sm, unsigned subcore, std::uint32_t warp_id, std::uint64_t now, SmHost& host) {
  Subcore& sc = sm.subcores[subcore];
  WarpContext& w = host.warps()[warp_id];
  assert(w.can_issue(now) && "issue to a warp that is not ready");
  const LaneMask active = w.active();
  const unsigned pop = static_cast<unsigned>(active.count());
  assert(pop > 0);
  const std::uint32_t pc = w.pc();
  unsigned lead = 0;
  while (!active.test(lead)) ++lead;
  const AbstractInstr& ins = host.instr(w.threads[lead], pc);

  const unsigned occ = occupancy(pop, sc.simd_width);
  sc.busy_until = now + occ;
  sc.last_issued = warp_id;
  w.last_issue_cycle = now;

  SmCounters& c = sm.counters;
  ++c.warp_insns;
  c.thread_insns += pop;
  c.active_thread_cycles += pop;
  c.inactive_thread_cycles += w.lanes() - pop;
  ThreadTable& tt = host.threads();
  for (unsigned l = 0; l < w.lanes(); ++l)
    if (active.test(l)) ++tt.retired[w.threads[l]];

  switch (ins.kind) {
    case InstrKind::Compute:
      w.ready_at = now + ins.latency;
      advance(w, pc + 1);
      break;
    case InstrKind::Load:
    case InstrKind::Store: {
      const bool is_write = ins.kind == InstrKind::Store;
      if (is_write) ++c.store_insns;
      else ++c.load_insns;
      issue_memory(sm, w, active, is_write, now, host);
      w.ready_at = now + 1;
      advance(w, pc + 1);
      break;
    }
    case InstrKind::Branch: {
      LaneMask taken;
      for (unsigned l = 0; l < w.lanes(); ++l) {
        if (!active.test(l)) continue;
        const std::uint32_t t = w.threads[l];
        if (host.instr(t, pc).taken_mask >> lane_in_stream(t) & 1u) taken.set(l);
      }
      w.ready_at = now + 1;
      if (apply_branch(w, ins.reconv, taken)) {
        ++c.divergent_branches;
        c.control_stall_cycles += sm.cfg.branch_bubble;
        w.bubble_until = now + occ + sm.cfg.branch_bubble;
      }
      break;
    }
    case InstrKind::Barrier:
      w.at_barrier = true;
      w.ready_at = now + 1;
      advance(w, pc + 1);
      host.on_barrier(sm, w);
      break;
    case InstrKind::Exit:
      assert(w.depth() == 0);
      w.done = true;
      host.on_exit(sm, w);
      return occ;
  }

  const Addr line = line_of(Addr{w.pc()} * sm.cfg.instr_bytes);
  w.ready_at = std::max(w.ready_at, sm.l1i.fetch(line, now));
  sm.l1i.prefetch(line + kLineSize, now);
  return occ;
}

StepEvents step_sm(Sm& sm, std::uint64_t now, SmHost& host) {
  StepEvents ev;
  SmCounters& c = sm.counters;
  ++c.cycles;
  c.resident_cta_cycles += sm.resident_ctas;
  for (unsigned s = 0; s < sm.subcores.size(); ++s) {
    Subcore& sc = sm.subcores[s];
    ++c.subcore_cycles;
    if (sc.busy_until > now || sm.stall_until > now) continue;
    std::optional<std::uint32_t> pick = schedule(sc, host.warps(), now);
    if (!pick) {
      ++sc.idle_cycles;
      ++c.idle_cycles;
      ++ev.idle;
      continue;
    }
    issue(sm, s, *pick, now, host);
    ++ev.issued;
  }
  return ev;
}

}  // namespace amoeba
