// Whole-chip model: SMs, memory controllers and the mesh stepped by one
// cycle loop, with the kernel-level fuse decision and the per-pair
// split/re-fuse controller.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "json.hpp"
#include "amoeba/memsys.h"
#include "amoeba/noc.h"
#include "amoeba/predictor.h"
#include "amoeba/reconfig.h"
#include "amoeba/smcore.h"
#include "amoeba/workload.h"

namespace amoeba {

struct GpuConfig {
  unsigned sm_count = 48;
  unsigned mc_count = 8;
  unsigned sm_scale = 1;  // every SM k times wider (budget sweeps)
  Scheme scheme = Scheme::Baseline;
  bool perfect_noc = false;
  std::string model_path;  // empty: built-in default coefficients
  PredictorModel model = PredictorModel::defaults();
  SmConfig sm;
  McConfig mc;
  NocConfig noc;
  ReconfigParams reconfig;
  unsigned mc_eject_queue = 4;
  std::uint64_t seed = 1;
  std::uint64_t max_cycles = 50'000'000;
};

GpuConfig full_config();
GpuConfig desk_config();  // 8 SMs, 4 MCs

void validate(const GpuConfig& cfg);
nlohmann::json config_to_json(const GpuConfig& cfg);
// Missing fields keep their defaults; unknown fields are rejected.
GpuConfig config_from_json(const nlohmann::json& j);
GpuConfig load_config(const std::filesystem::path& path);

struct TimelineRow {
  unsigned pair = 0;
  PairEvent event;
};

struct RunReport {
  std::string kernel;
  std::string scheme;
  double ipc = 0;
  double l1i_miss_rate = 0;
  double l1d_miss_rate = 0;
  double actual_memory_access_rate = 0;
  double control_stall_fraction = 0;
  double icnt_stall_rate = 0;
  double noc_injection_rate = 0;
  double avg_noc_latency = 0;
  double sm_idle_fraction = 0;
  std::vector<TimelineRow> timeline;
  bool sampled = false;
  MetricVector metrics;
  PredictorModel model;
  double logit = 0;
  Decision decision = Decision::ScaleOut;
  bool sampling_inconclusive = false;
  std::uint64_t total_cycles = 0;
  std::uint64_t thread_insns = 0;
  std::uint64_t warp_insns = 0;
  unsigned split_events = 0;
  unsigned refuse_events = 0;
  double wall_seconds = 0;
};

class Gpu final : public SmHost {
 public:
  Gpu(GpuConfig cfg, const KernelSpec& kernel);

  RunReport run();
  bool finished() const;
  void step();

  std::uint64_t now() const { return now_; }
  const std::vector<Sm>& sms() const { return sms_; }
  const std::vector<PairState>& pairs() const { return pairs_; }
  const Noc& noc() const { return *noc_; }
  const ThreadTable& thread_table() const { return threads_; }
  const WarpPool& warp_pool() const { return pool_; }
  SimCounters counters() const;
  // Resident lanes across every SM, in units of 32-lane warps.
  double resident_warp_units() const;

  // SmHost
  const AbstractInstr& instr(std::uint32_t thread, std::uint32_t pc) const override;
  WarpPool& warps() override { return pool_; }
  ThreadTable& threads() override { return threads_; }
  void submit(Sm& sm, MemRequest req) override;
  void on_barrier(Sm& sm, WarpContext& w) override;
  void on_exit(Sm& sm, WarpContext& w) override;

 private:
  enum class Phase { Sampling, Draining, Running };

  struct CtaSlot {
    std::unique_ptr<CtaStream> stream;
    unsigned home = 0;
    unsigned live_lanes = 0;
    unsigned arrived = 0;
  };

  struct HitReturn {
    std::uint64_t ready;
    std::uint64_t seq;
    std::uint64_t request;
    bool operator>(const HitReturn& o) const {
      return ready != o.ready ? ready > o.ready : seq > o.seq;
    }
  };

  void build(bool fused);
  void fuse_all();
  void dispatch();
  void receive_replies();
  void step_memory_controllers();
  void step_ldst(Sm& sm);
  void complete(std::uint64_t request_id);
  void controller();
  void end_sampling(bool kernel_done);
  void pair_controller(PairState& pair);
  bool quiescent() const;
  void release_barrier(std::uint32_t cta);

  GpuConfig cfg_;
  KernelGenerator gen_;
  std::uint64_t now_ = 0;
  std::vector<Sm> sms_;
  std::vector<unsigned> sm_node_;
  std::unique_ptr<Noc> noc_;
  std::vector<MemoryController> mcs_;
  std::vector<PairState> pairs_;
  std::vector<int> pair_of_sm_;
  WarpPool pool_;
  ThreadTable threads_;
  std::vector<CtaSlot> ctas_;
  std::uint32_t next_cta_ = 0;
  std::uint32_t ctas_done_ = 0;
  std::vector<std::uint32_t> finished_ctas_;
  unsigned dispatch_rr_ = 0;
  std::uint64_t next_request_ = 1;
  std::uint64_t hit_seq_ = 0;
  std::map<std::uint64_t, MemRequest> in_flight_;
  std::vector<std::priority_queue<HitReturn, std::vector<HitReturn>, std::greater<>>> hits_;

  Phase phase_ = Phase::Running;
  std::uint64_t window_start_ = 0;
  std::uint64_t window_end_ = 0;
  unsigned doublings_ = 0;
  SimCounters window_base_;
  std::uint64_t resume_at_ = 0;

  // Totals of SMs and networks that were replaced by a reconfiguration.
  SmCounters retired_sm_;
  CacheStats retired_l1d_;
  std::uint64_t retired_l1i_accesses_ = 0;
  std::uint64_t retired_l1i_misses_ = 0;
  std::uint64_t retired_flits_ = 0;
  std::uint64_t retired_packets_ = 0;
  std::uint64_t retired_latency_ = 0;

  RunReport report_;
};

RunReport run(const GpuConfig& cfg, const KernelSpec& kernel);

}  // namespace amoeba
