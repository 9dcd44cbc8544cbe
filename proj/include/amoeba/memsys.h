// Memory-side model: coalescing, L1 caches with MSHRs, L2 slices and the
// memory controllers in front of a fixed-latency DRAM.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "amoeba/workload.h"

namespace amoeba {

struct MemRequest {
  std::uint64_t id = 0;
  std::uint32_t warp_id = 0;
  std::uint32_t sm_id = 0;
  Addr line = 0;  // line-aligned
  bool is_write = false;
  std::uint64_t issue_cycle = 0;
  std::uint32_t merged_warp_count = 1;
  std::vector<std::uint32_t> lanes;    // lanes of the issuing warp served by this line
  std::vector<std::uint32_t> threads;  // global thread ids waiting for the fill
};

inline Addr line_of(Addr addr, unsigned line_size = kLineSize) {
  return addr - addr % line_size;
}

// One request per distinct line touched by the non-null lanes, ascending by line.
std::vector<MemRequest> coalesce(std::span<const Addr> lane_addrs,
                                 unsigned line_size = kLineSize);

// Merges requests to the same line (and direction) whose issue cycles fall
// within `window` of the first request of the group.
std::vector<MemRequest> cross_warp_coalesce(std::vector<MemRequest> pending,
                                            std::uint64_t window);

// Load/store front end of an SM: holds coalesced requests until the L1 takes
// them, merging same-line requests that arrive within the window.
class CoalescingQueue {
 public:
  explicit CoalescingQueue(std::uint64_t window = 8) : window_(window) {}

  // Returns true when the request merged into an already queued one.
  bool push(MemRequest req);
  bool empty() const { return queue_.empty(); }
  std::size_t size() const { return queue_.size(); }
  MemRequest& front() { return queue_.front(); }
  void pop() { queue_.pop_front(); }
  std::uint64_t window() const { return window_; }

 private:
  std::uint64_t window_;
  std::deque<MemRequest> queue_;
};

// Set-associative tag store with true LRU.
class TagArray {
 public:
  struct Way {
    Addr line = 0;
    bool valid = false;
    std::uint64_t stamp = 0;
    std::uint64_t ready_at = 0;
  };

  TagArray(unsigned sets, unsigned ways, unsigned line_size = kLineSize);

  unsigned sets() const { return sets_; }
  unsigned ways() const { return ways_; }
  unsigned line_size() const { return line_size_; }
  unsigned set_of(Addr line) const;

  // Index of the way holding line, or -1.
  int find(Addr line) const;
  void touch(int way_index);
  // Installs line over the invalid or least recently used way of its set.
  int insert(Addr line, std::uint64_t ready_at = 0);
  void invalidate(Addr line);

  const std::vector<Way>& ways_raw() const { return ways_store_; }
  std::vector<Way>& ways_raw() { return ways_store_; }
  std::uint64_t clock() const { return clock_; }
  void set_clock(std::uint64_t c) { clock_ = c; }
  std::vector<Addr> resident_lines() const;

 private:
  unsigned sets_;
  unsigned ways_;
  unsigned line_size_;
  std::uint64_t clock_ = 0;
  std::vector<Way> ways_store_;  // set-major
};

enum class AccessOutcome { Hit, MissNew, MissMerged, MshrFull };

struct AccessResult {
  AccessOutcome outcome = AccessOutcome::Hit;
  std::uint64_t mshr = 0;  // line address of the MSHR entry for misses
};

struct CacheGeometry {
  unsigned sets = 32;
  unsigned ways = 4;
  unsigned line_size = kLineSize;
  unsigned hit_latency = 28;
  unsigned mshr_entries = 64;
  unsigned mshr_merge_cap = 8;

  bool operator==(const CacheGeometry&) const = default;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses_new = 0;
  std::uint64_t misses_merged = 0;
  std::uint64_t mshr_full = 0;

  std::uint64_t accesses() const { return hits + misses_new + misses_merged; }
  std::uint64_t misses() const { return misses_new + misses_merged; }
};

// L1 data cache: read-allocate, write-through without allocation.
class Cache {
 public:
  explicit Cache(CacheGeometry geometry);

  AccessResult access(const MemRequest& req, std::uint64_t now);
  // Installs a returning line and retires its MSHR entry; returns the ids of
  // every request merged into it, primary first.
  std::vector<std::uint64_t> fill(Addr line, std::uint64_t now);
  bool contains(Addr line) const { return tags_.find(line) >= 0; }
  bool has_mshr(Addr line) const { return mshr_.count(line) != 0; }
  std::size_t mshr_in_use() const { return mshr_.size(); }

  const CacheGeometry& geometry() const { return geometry_; }
  const CacheStats& stats() const { return stats_; }
  CacheStats& stats() { return stats_; }
  const TagArray& tags() const { return tags_; }
  TagArray& tags() { return tags_; }

  friend Cache fuse_l1(const Cache& a, const Cache& b);
  friend std::pair<Cache, Cache> split_l1(const Cache& fused);

 private:
  struct MshrEntry {
    std::vector<std::uint64_t> requests;
  };

  CacheGeometry geometry_;
  TagArray tags_;
  std::map<Addr, MshrEntry> mshr_;
  CacheStats stats_;
};

// Twice the ways over the same sets, one extra cycle of hit latency, all
// resident lines of both inputs retained. Throws ConfigError on geometry mismatch.
Cache fuse_l1(const Cache& a, const Cache& b);
// Inverse of fuse_l1: even-indexed ways go to the first half, odd to the second.
std::pair<Cache, Cache> split_l1(const Cache& fused);

// Instruction cache: misses are served after a fixed fill latency.
class InstructionCache {
 public:
  InstructionCache(unsigned sets, unsigned ways, unsigned miss_latency);

  // Cycle at which the line is available to the fetch stage.
  std::uint64_t fetch(Addr line, std::uint64_t now);
  // Starts a fill for line if absent; not counted as an access.
  void prefetch(Addr line, std::uint64_t now);
  std::uint64_t accesses() const { return accesses_; }
  std::uint64_t misses() const { return misses_; }
  const TagArray& tags() const { return tags_; }
  TagArray& tags() { return tags_; }
  unsigned miss_latency() const { return miss_latency_; }
  void reset_counters() { accesses_ = misses_ = 0; }

  friend InstructionCache fuse_l1i(const InstructionCache& a, const InstructionCache& b);

 private:
  TagArray tags_;
  unsigned miss_latency_;
  std::uint64_t accesses_ = 0;
  std::uint64_t misses_ = 0;
};

InstructionCache fuse_l1i(const InstructionCache& a, const InstructionCache& b);

struct McConfig {
  unsigned l2_kb = 128;  // per slice
  unsigned l2_ways = 8;
  unsigned l2_latency = 120;
  unsigned dram_latency = 220;
  unsigned dram_interval = 4;  // cycles between DRAM line transfers
  unsigned queue_capacity = 32;
  unsigned max_in_service = 64;

  bool operator==(const McConfig&) const = default;
};

struct McReply {
  std::uint64_t request_id = 0;
  Addr line = 0;
  std::uint32_t sm_id = 0;
  std::uint64_t ready_cycle = 0;
};

struct McStats {
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  std::uint64_t l2_hits = 0;
  std::uint64_t l2_misses = 0;
  std::uint64_t icnt_stall_cycles = 0;
};

class MemoryController {
 public:
  MemoryController(unsigned id, unsigned mc_count, McConfig config);

  bool can_accept() const { return queue_.size() < config_.queue_capacity; }
  void accept(const MemRequest& req);

  // One cycle: start at most one queued request (FCFS), then inject ready
  // replies in order through try_inject until it refuses. Returns the
  // replies injected this cycle.
  std::vector<McReply> service(std::uint64_t now,
                               const std::function<bool(const McReply&)>& try_inject);

  bool idle() const { return queue_.empty() && in_service_.empty(); }
  std::size_t queued() const { return queue_.size(); }
  const McStats& stats() const { return stats_; }
  unsigned id() const { return id_; }

 private:
  unsigned id_;
  unsigned mc_count_;
  McConfig config_;
  TagArray l2_;
  std::deque<MemRequest> queue_;
  std::multimap<std::pair<std::uint64_t, std::uint64_t>, McReply> in_service_;
  std::uint64_t dram_free_at_ = 0;
  std::uint64_t seq_ = 0;
  McStats stats_;
};

inline unsigned mc_of(Addr line, unsigned mc_count) {
  return static_cast<unsigned>((line / kLineSize) % mc_count);
}

}  // namespace amoeba
