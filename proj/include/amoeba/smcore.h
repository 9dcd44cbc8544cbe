// In-order SIMT core: warp contexts with a reconvergence stack, GTO
// scheduling and issue into SIMD subcores.

#pragma once

#include <bitset>
#include <deque>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "amoeba/memsys.h"
#include "amoeba/workload.h"

namespace amoeba {

inline constexpr unsigned kMaxLanes = 128;
using LaneMask = std::bitset<kMaxLanes>;

struct SmConfig {
  unsigned warp_size = 32;
  unsigned simd_width = 8;
  unsigned max_threads = 1024;
  unsigned max_ctas = 8;
  unsigned registers = 16384;
  unsigned schedulers = 1;
  unsigned l1d_kb = 16;
  unsigned shared_kb = 48;
  unsigned mshr_entries = 64;

  unsigned l1d_ways = 4;
  unsigned l1d_hit_latency = 28;
  unsigned mshr_merge_cap = 8;
  unsigned l1i_kb = 2;
  unsigned l1i_ways = 4;
  unsigned l1i_miss_latency = 40;
  unsigned instr_bytes = 8;
  unsigned branch_bubble = 2;
  unsigned coalesce_window = 8;
  unsigned ldst_ports = 1;

  bool operator==(const SmConfig&) const = default;
};

// A k-times wider SM: lanes, per-SM capacities and cache ways all scale by k.
SmConfig scaled(const SmConfig& base, unsigned k);
CacheGeometry l1d_geometry(const SmConfig& cfg);
InstructionCache make_l1i(const SmConfig& cfg);

// Per-thread bookkeeping shared by every SM.
struct ThreadTable {
  std::vector<std::uint32_t> retired;
  std::vector<std::uint8_t> pending;  // outstanding load
  std::vector<std::uint32_t> owner;   // warp holding the thread

  explicit ThreadTable(std::size_t n = 0) : retired(n, 0), pending(n, 0), owner(n, 0) {}
};

struct StackEntry {
  std::uint32_t pc = 0;
  std::uint32_t rpc = 0;
  LaneMask mask;

  bool operator==(const StackEntry&) const = default;
};

inline constexpr std::uint32_t kNoReconv = ~std::uint32_t{0};

enum class WarpState : std::uint8_t { Ready, WaitingMem, WaitingBarrier, AtBranchStall, Done };

const char* to_string(WarpState s);

struct WarpContext {
  std::uint32_t id = 0;
  std::uint32_t cta_id = 0;
  std::uint32_t origin = 0;  // warp this one was carved from (itself if never split)
  std::vector<std::uint32_t> threads;  // global thread id per lane
  std::vector<StackEntry> stack;
  std::uint64_t last_issue_cycle = 0;
  std::uint64_t ready_at = 0;      // scoreboard: earliest cycle the next instruction may issue
  std::uint64_t bubble_until = 0;  // branch resolve stall
  std::uint64_t load_issue_cycle = 0;
  std::uint32_t pending_lanes = 0;
  bool at_barrier = false;
  bool done = false;
  bool replaced = false;  // split or merged into other warps

  unsigned lanes() const { return static_cast<unsigned>(threads.size()); }
  std::uint32_t pc() const { return stack.back().pc; }
  const LaneMask& active() const { return stack.back().mask; }
  std::size_t depth() const { return stack.size() - 1; }
  double active_fraction() const;
  bool scoreboard_pending(std::uint64_t now) const { return ready_at > now; }
  WarpState state(std::uint64_t now) const;
  // Ready and scoreboard clear.
  bool can_issue(std::uint64_t now) const;
};

LaneMask full_mask(unsigned lanes);

WarpContext make_warp(std::uint32_t id, std::uint32_t cta_id, std::vector<std::uint32_t> threads);

// Divergent branch: the current entry waits at reconv while the taken lanes
// run the body. Uniform outcomes just move the pc. Returns true on divergence.
bool apply_branch(WarpContext& w, std::uint32_t reconv, const LaneMask& taken);
// Pops every entry that has reached its reconvergence point.
void reconverge(WarpContext& w);
void advance(WarpContext& w, std::uint32_t next_pc);

// New warp made of the given lanes (in order); stack masks are remapped and
// entries left empty are dropped.
WarpContext slice_warp(const WarpContext& w, std::span<const unsigned> lanes, std::uint32_t new_id);
bool can_merge(const WarpContext& a, const WarpContext& b, std::uint64_t now);
WarpContext merge_warps(const WarpContext& a, const WarpContext& b);

// Stable warp storage; SMs refer to warps by id.
class WarpPool {
 public:
  std::uint32_t add(WarpContext w);
  WarpContext& operator[](std::uint32_t id) { return warps_[id]; }
  const WarpContext& operator[](std::uint32_t id) const { return warps_[id]; }
  std::size_t size() const { return warps_.size(); }
  std::uint32_t next_id() const { return static_cast<std::uint32_t>(warps_.size()); }

 private:
  std::deque<WarpContext> warps_;  // references stay valid across add()
};

struct Subcore {
  unsigned simd_width = 8;
  std::vector<std::uint32_t> warps;
  std::optional<std::uint32_t> last_issued;
  std::uint64_t busy_until = 0;
  std::uint64_t idle_cycles = 0;
};

struct SmCounters {
  std::uint64_t cycles = 0;
  std::uint64_t subcore_cycles = 0;
  std::uint64_t warp_insns = 0;
  std::uint64_t thread_insns = 0;
  std::uint64_t idle_cycles = 0;
  std::uint64_t control_stall_cycles = 0;
  std::uint64_t active_thread_cycles = 0;
  std::uint64_t inactive_thread_cycles = 0;
  std::uint64_t load_insns = 0;
  std::uint64_t store_insns = 0;
  std::uint64_t divergent_branches = 0;
  std::uint64_t lane_accesses = 0;
  std::uint64_t coalesced_requests = 0;  // after the coalescing queue
  std::uint64_t requests_sent = 0;       // new misses and stores put on the network
  std::uint64_t mshr_full_stalls = 0;
  std::uint64_t resident_cta_cycles = 0;
  std::uint64_t ctas_completed = 0;

  SmCounters& operator+=(const SmCounters& o);
  SmCounters operator-(const SmCounters& o) const;
};

struct Sm {
  Sm(unsigned id, const SmConfig& base, unsigned scale = 1);

  unsigned id = 0;
  unsigned scale = 1;
  SmConfig cfg;  // already scaled
  std::vector<Subcore> subcores;
  Cache l1d;
  InstructionCache l1i;
  CoalescingQueue ldst;
  unsigned resident_ctas = 0;
  unsigned resident_threads = 0;
  std::uint64_t stall_until = 0;  // reconfiguration in progress
  SmCounters counters;

  unsigned warp_width() const { return cfg.warp_size; }
  bool can_accept_cta(unsigned threads) const;
  std::size_t resident_warps() const;
  bool has_warps() const { return resident_warps() != 0; }
};

// What the pipeline needs from the rest of the machine.
class SmHost {
 public:
  virtual ~SmHost() = default;
  virtual const AbstractInstr& instr(std::uint32_t thread, std::uint32_t pc) const = 0;
  virtual WarpPool& warps() = 0;
  virtual ThreadTable& threads() = 0;
  virtual void submit(Sm& sm, MemRequest req) = 0;
  virtual void on_barrier(Sm& sm, WarpContext& w) = 0;
  virtual void on_exit(Sm& sm, WarpContext& w) = 0;
};

// GTO: the last issued warp if it can issue, else the one with the oldest
// last issue (lower id on ties).
std::optional<std::uint32_t> schedule(const Subcore& sc, const WarpPool& warps, std::uint64_t now);

unsigned occupancy(unsigned active_lanes, unsigned simd_width);

// Issues one instruction of warp id on subcore sc; returns the occupancy.
unsigned issue(Sm& sm, unsigned subcore, std::uint32_t warp_id, std::uint64_t now, SmHost& host);

struct StepEvents {
  unsigned issued = 0;
  unsigned idle = 0;
};

// One cycle of every subcore: schedule and issue, update the counters.
StepEvents step_sm(Sm& sm, std::uint64_t now, SmHost& host);

}  // namespace amoeba
