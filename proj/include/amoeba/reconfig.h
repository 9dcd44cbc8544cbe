// Fuse/split machinery for pairs of neighboring SMs: divergent-warp
// collection, the two split policies, re-fusing and fast-warp migration.

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "amoeba/smcore.h"

namespace amoeba {

enum class Scheme : std::uint8_t { Baseline, ScaleUp, StaticFuse, DirectSplit, WarpRegroup };

const char* to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);
const std::vector<Scheme>& all_schemes();
bool is_fusing(Scheme s);
bool is_dynamic(Scheme s);

enum class PairMode : std::uint8_t { Baseline, Fused, SplitRunning };
const char* to_string(PairMode m);

struct ReconfigParams {
  double theta = 0.25;
  std::uint64_t check_period = 500;
  std::uint64_t migration_period = 1000;
  std::uint64_t reconfig_cost = 500;
  std::uint64_t split_cost = 50;
  double control_frac = 0.5;
  std::uint64_t mem_age = 200;
  unsigned group_size = 8;
  std::uint64_t sample_window = 10000;
  unsigned max_window_doublings = 3;
  double migrate_idle_frac = 0.5;

  bool operator==(const ReconfigParams&) const = default;
};

struct PairEvent {
  std::uint64_t cycle = 0;
  PairMode from = PairMode::Baseline;
  PairMode to = PairMode::Baseline;
  unsigned lanes_before = 0;  // resident lanes across the pair
  unsigned lanes_after = 0;
};

struct PairState {
  unsigned pair_id = 0;
  unsigned sm_a = 0;
  unsigned sm_b = 0;
  PairMode mode = PairMode::Baseline;
  std::set<std::uint32_t> divergence_bin;
  std::set<std::uint32_t> sm1_divergent;  // warps placed on SM_1 by the last split
  std::vector<PairEvent> log;
  std::uint64_t next_check = 0;
  std::uint64_t next_migration = 0;
  std::uint64_t sm1_idle_mark = 0;
  std::uint64_t migrated = 0;

  unsigned count(PairMode from, PairMode to) const;
  void transition(PairMode to, std::uint64_t cycle, unsigned lanes_before, unsigned lanes_after);
};

// Control divergence (active fraction) or memory divergence (oldest load age).
bool classify_divergent(const WarpContext& w, std::uint64_t now, const ReconfigParams& p);

enum class SplitDecision : std::uint8_t { Stay, Split };
SplitDecision check_split(std::size_t binned, std::size_t resident, double theta);

// Lanes [0, half) and [half, lanes).
std::pair<WarpContext, WarpContext> direct_split(const WarpContext& w);

// Per-group slowness: max over lanes of outstanding-load age, else the
// number of stack levels the lane waits below the top.
std::vector<std::uint64_t> group_scores(const WarpContext& w, const ThreadTable& tt,
                                        unsigned group_size, std::uint64_t now);
// Groups ordered slowest first; equal scores put the higher index first so
// lower indices land in the fast half.
std::vector<unsigned> slowness_order(const std::vector<std::uint64_t>& scores);

struct Regrouped {
  WarpContext fast;
  WarpContext slow;
  std::vector<unsigned> fast_groups;
  std::vector<unsigned> slow_groups;
};
Regrouped regroup_warps(const WarpContext& w, const ThreadTable& tt, unsigned group_size,
                        std::uint64_t now);

unsigned resident_lanes(const Sm& sm, const WarpPool& pool);

struct SplitOutcome {
  unsigned to_sm1 = 0;       // warps placed on SM_1
  unsigned fast_kept = 0;    // regrouped fast warps left on SM_0
};

// Moves the binned warps of a fused SM to a second subcore and halves the
// SIMD width of each. Policy is DirectSplit or WarpRegroup.
SplitOutcome execute_split(PairState& pair, Sm& sm, WarpPool& pool, ThreadTable& tt, Scheme policy,
                           std::uint64_t now, const ReconfigParams& p);

// Drops exited warps from SM_1's set; true once every one has finished.
bool check_refuse(PairState& pair, const WarpPool& pool);
void execute_refuse(PairState& pair, Sm& sm, const WarpPool& pool, std::uint64_t now);

// Moves one ready warp from SM_0 to SM_1 when SM_1 idled enough.
unsigned migrate_fast_warps(PairState& pair, Sm& sm, const WarpPool& pool, std::uint64_t now,
                            const ReconfigParams& p);

// Re-joins ready sibling warps that sit at the same point; returns merges done.
unsigned merge_siblings(Sm& sm, WarpPool& pool, ThreadTable& tt, std::uint64_t now);

}  // namespace amoeba
