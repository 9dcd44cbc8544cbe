#include "amoeba/gpu.h"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <fstream>
#include <initializer_list>
#include <stdexcept>

namespace amoeba {

GpuConfig full_config() { return GpuConfig{}; }

GpuConfig desk_config() {
  GpuConfig c;
  c.sm_count = 8;
  c.mc_count = 4;
  return c;
}

void validate(const GpuConfig& c) {
  if (c.sm_count == 0) throw ConfigError("sm_count must be positive");
  if (c.mc_count == 0) throw ConfigError("mc_count must be positive");
  if (c.sm_scale == 0) throw ConfigError("sm_scale must be positive");
  if (c.sm.warp_size != kWarpSize) throw ConfigError("sm.warp_size must be 32");
  if (c.sm.simd_width == 0) throw ConfigError("sm.simd_width must be positive");
  if (c.sm.l1d_ways == 0 || c.sm.l1i_ways == 0) throw ConfigError("cache ways must be positive");
  if (c.sm.ldst_ports == 0) throw ConfigError("sm.ldst_ports must be positive");
  if (is_fusing(c.scheme)) {
    if (c.sm_count % 2 != 0)
      throw ConfigError(std::string("scheme ") + to_string(c.scheme) + " needs an even sm_count");
    if (2 * c.sm_scale * kWarpSize > kMaxLanes)
      throw ConfigError("fused warps would exceed " + std::to_string(kMaxLanes) + " lanes");
  }
  if (c.sm_scale * kWarpSize > kMaxLanes)
    throw ConfigError("sm_scale too large: warps above " + std::to_string(kMaxLanes) + " lanes");
  if (!(c.reconfig.theta >= 0 && c.reconfig.theta <= 1))
    throw ConfigError("reconfig.theta must be in [0,1]");
  const unsigned g = c.reconfig.group_size;
  if (g == 0 || kWarpSize % g != 0) throw ConfigError("reconfig.group_size must divide 32");
  if (c.reconfig.check_period == 0 || c.reconfig.migration_period == 0)
    throw ConfigError("reconfig periods must be positive");
  if (c.noc.buffer_flits == 0) throw ConfigError("noc.buffer_flits must be positive");
}

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> keys, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError("unknown config field '" + ctx + k + "'");
  }
}

template <class T>
void opt(const json& j, const char* key, T& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + ctx + key + "' has the wrong type");
  }
}

json sm_json(const SmConfig& s) {
  return {{"warp_size", s.warp_size},       {"simd_width", s.simd_width},
          {"max_threads", s.max_threads},   {"max_ctas", s.max_ctas},
          {"registers", s.registers},       {"schedulers", s.schedulers},
          {"l1d_kb", s.l1d_kb},             {"shared_kb", s.shared_kb},
          {"mshr_entries", s.mshr_entries}, {"l1d_ways", s.l1d_ways},
          {"l1d_hit_latency", s.l1d_hit_latency}, {"mshr_merge_cap", s.mshr_merge_cap},
          {"l1i_kb", s.l1i_kb},             {"l1i_ways", s.l1i_ways},
          {"l1i_miss_latency", s.l1i_miss_latency}, {"instr_bytes", s.instr_bytes},
          {"branch_bubble", s.branch_bubble}, {"coalesce_window", s.coalesce_window},
          {"ldst_ports", s.ldst_ports}};
}

void sm_from(const json& j, SmConfig& s) {
  const std::string c = "sm.";
  check_keys(j, {"warp_size", "simd_width", "max_threads", "max_ctas", "registers", "schedulers",
                 "l1d_kb", "shared_kb", "mshr_entries", "l1d_ways", "l1d_hit_latency",
                 "mshr_merge_cap", "l1i_kb", "l1i_ways", "l1i_miss_latency", "instr_bytes",
                 "branch_bubble", "coalesce_window", "ldst_ports"},
             c);
  opt(j, "warp_size", s.warp_size, c);
  opt(j, "simd_width", s.simd_width, c);
  opt(j, "max_threads", s.max_threads, c);
  opt(j, "max_ctas", s.max_ctas, c);
  opt(j, "registers", s.registers, c);
  opt(j, "schedulers", s.schedulers, c);
  opt(j, "l1d_kb", s.l1d_kb, c);
  opt(j, "shared_kb", s.shared_kb, c);
  opt(j, "mshr_entries", s.mshr_entries, c);
  opt(j, "l1d_ways", s.l1d_ways, c);
  opt(j, "l1d_hit_latency", s.l1d_hit_latency, c);
  opt(j, "mshr_merge_cap", s.mshr_merge_cap, c);
  opt(j, "l1i_kb", s.l1i_kb, c);
  opt(j, "l1i_ways", s.l1i_ways, c);
  opt(j, "l1i_miss_latency", s.l1i_miss_latency, c);
  opt(j, "instr_bytes", s.instr_bytes, c);
  opt(j, "branch_bubble", s.branch_bubble, c);
  opt(j, "coalesce_window", s.coalesce_window, c);
  opt(j, "ldst_ports", s.ldst_ports, c);
}

json mc_json(const McConfig& m) {
  return {{"l2_kb", m.l2_kb},
          {"l2_ways", m.l2_ways},
          {"l2_latency", m.l2_latency},
          {"dram_latency", m.dram_latency},
          {"dram_interval", m.dram_interval},
          {"queue_capacity", m.queue_capacity},
          {"max_in_service", m.max_in_service}};
}

void mc_from(const json& j, McConfig& m) {
  const std::string c = "mc.";
  check_keys(j, {"l2_kb", "l2_ways", "l2_latency", "dram_latency", "dram_interval",
                 "queue_capacity", "max_in_service"},
             c);
  opt(j, "l2_kb", m.l2_kb, c);
  opt(j, "l2_ways", m.l2_ways, c);
  opt(j, "l2_latency", m.l2_latency, c);
  opt(j, "dram_latency", m.dram_latency, c);
  opt(j, "dram_interval", m.dram_interval, c);
  opt(j, "queue_capacity", m.queue_capacity, c);
  opt(j, "max_in_service", m.max_in_service, c);
}

json noc_json(const NocConfig& n) {
  return {{"router_stages", n.router_stages}, {"bypass_cycles", n.bypass_cycles},
          {"buffer_flits", n.buffer_flits},   {"request_flits", n.request_flits},
          {"reply_flits", n.reply_flits},     {"write_flits", n.write_flits}};
}

void noc_from(const json& j, NocConfig& n) {
  const std::string c = "noc.";
  check_keys(j, {"router_stages", "bypass_cycles", "buffer_flits", "request_flits", "reply_flits",
                 "write_flits"},
             c);
  opt(j, "router_stages", n.router_stages, c);
  opt(j, "bypass_cycles", n.bypass_cycles, c);
  opt(j, "buffer_flits", n.buffer_flits, c);
  opt(j, "request_flits", n.request_flits, c);
  opt(j, "reply_flits", n.reply_flits, c);
  opt(j, "write_flits", n.write_flits, c);
}

json reconfig_json(const ReconfigParams& r) {
  return {{"theta", r.theta},
          {"check_period", r.check_period},
          {"migration_period", r.migration_period},
          {"reconfig_cost", r.reconfig_cost},
          {"split_cost", r.split_cost},
          {"control_frac", r.control_frac},
          {"mem_age", r.mem_age},
          {"group_size", r.group_size},
          {"sample_window", r.sample_window},
          {"max_window_doublings", r.max_window_doublings},
          {"migrate_idle_frac", r.migrate_idle_frac}};
}

void reconfig_from(const json& j, ReconfigParams& r) {
  const std::string c = "reconfig.";
  check_keys(j, {"theta", "check_period", "migration_period", "reconfig_cost", "split_cost",
                 "control_frac", "mem_age", "group_size", "sample_window", "max_window_doublings",
                 "migrate_idle_frac"},
             c);
  opt(j, "theta", r.theta, c);
  opt(j, "check_period", r.check_period, c);
  opt(j, "migration_period", r.migration_period, c);
  opt(j, "reconfig_cost", r.reconfig_cost, c);
  opt(j, "split_cost", r.split_cost, c);
  opt(j, "control_frac", r.control_frac, c);
  opt(j, "mem_age", r.mem_age, c);
  opt(j, "group_size", r.group_size, c);
  opt(j, "sample_window", r.sample_window, c);
  opt(j, "max_window_doublings", r.max_window_doublings, c);
  opt(j, "migrate_idle_frac", r.migrate_idle_frac, c);
}

}  // namespace

nlohmann::json config_to_json(const GpuConfig& c) {
  json j = {{"sm_count", c.sm_count},
            {"mc_count", c.mc_count},
            {"sm_scale", c.sm_scale},
            {"scheme", to_string(c.scheme)},
            {"perfect_noc", c.perfect_noc},
            {"seed", c.seed},
            {"max_cycles", c.max_cycles},
            {"mc_eject_queue", c.mc_eject_queue},
            {"sm", sm_json(c.sm)},
            {"mc", mc_json(c.mc)},
            {"noc", noc_json(c.noc)},
            {"reconfig", reconfig_json(c.reconfig)}};
  if (c.model_path.empty()) j["model"] = model_to_json(c.model);
  else j["model_path"] = c.model_path;
  return j;
}

GpuConfig config_from_json(const nlohmann::json& j) {
  GpuConfig c;
  check_keys(j, {"sm_count", "mc_count", "sm_scale", "scheme", "perfect_noc", "seed", "max_cycles",
                 "mc_eject_queue", "model_path", "model", "sm", "mc", "noc", "reconfig"},
             "");
  opt(j, "sm_count", c.sm_count, "");
  opt(j, "mc_count", c.mc_count, "");
  opt(j, "sm_scale", c.sm_scale, "");
  std::string scheme = to_string(c.scheme);
  opt(j, "scheme", scheme, "");
  c.scheme = scheme_from_string(scheme);
  opt(j, "perfect_noc", c.perfect_noc, "");
  opt(j, "seed", c.seed, "");
  opt(j, "max_cycles", c.max_cycles, "");
  opt(j, "mc_eject_queue", c.mc_eject_queue, "");
  opt(j, "model_path", c.model_path, "");
  if (j.contains("model")) c.model = model_from_json(j["model"]);
  if (j.contains("sm")) sm_from(j["sm"], c.sm);
  if (j.contains("mc")) mc_from(j["mc"], c.mc);
  if (j.contains("noc")) noc_from(j["noc"], c.noc);
  if (j.contains("reconfig")) reconfig_from(j["reconfig"], c.reconfig);
  validate(c);
  return c;
}

GpuConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  GpuConfig c = config_from_json(j);
  if (!c.model_path.empty()) {
    std::filesystem::path mp = c.model_path;
    if (mp.is_relative()) mp = path.parent_path() / mp;
    c.model = load_model(mp);
  }
  return c;
}

Gpu::Gpu(GpuConfig cfg, const KernelSpec& kernel)
    : cfg_(std::move(cfg)), gen_(kernel), threads_(kernel.total_threads()) {
  validate(cfg_);
  const unsigned cta_threads = kernel.warps_per_cta * kWarpSize;
  if (cta_threads > cfg_.sm.max_threads * cfg_.sm_scale)
    throw ConfigError("a CTA of " + std::to_string(cta_threads) + " threads never fits an SM");
  ctas_.resize(kernel.cta_count);
  report_.kernel = kernel.name;
  report_.scheme = to_string(cfg_.scheme);
  report_.model = cfg_.model;
  for (unsigned m = 0; m < cfg_.mc_count; ++m) mcs_.emplace_back(m, cfg_.mc_count, cfg_.mc);
  build(cfg_.scheme == Scheme::ScaleUp);
  if (cfg_.scheme == Scheme::StaticFuse || is_dynamic(cfg_.scheme)) {
    phase_ = Phase::Sampling;
    window_start_ = 0;
    window_end_ = cfg_.reconfig.sample_window;
    window_base_ = counters();
  }
}

void Gpu::build(bool fused) {
  sms_.clear();
  pairs_.clear();
  NocConfig nc = cfg_.noc;
  nc.perfect = cfg_.perfect_noc;
  if (fused) {
    const auto pairs = neighbor_pairs(cfg_.sm_count);
    MeshTopology topo = build_topology(cfg_.sm_count, cfg_.mc_count, pairs);
    const unsigned n = cfg_.sm_count / 2;
    sm_node_.assign(n, 0);
    pair_of_sm_.assign(n, -1);
    for (unsigned i = 0; i < n; ++i) {
      sms_.emplace_back(i, cfg_.sm, 2 * cfg_.sm_scale);
      sm_node_[i] = topo.sm_node[2 * i];
      PairState p;
      p.pair_id = i;
      p.sm_a = 2 * i;
      p.sm_b = 2 * i + 1;
      p.mode = PairMode::Fused;
      p.next_check = now_ + cfg_.reconfig.check_period;
      pairs_.push_back(p);
      pair_of_sm_[i] = static_cast<int>(i);
    }
    noc_ = std::make_unique<Noc>(std::move(topo), nc);
  } else {
    MeshTopology topo = build_topology(cfg_.sm_count, cfg_.mc_count);
    sm_node_.assign(cfg_.sm_count, 0);
    pair_of_sm_.assign(cfg_.sm_count, -1);
    for (unsigned i = 0; i < cfg_.sm_count; ++i) {
      sms_.emplace_back(i, cfg_.sm, cfg_.sm_scale);
      sm_node_[i] = topo.sm_node[i];
    }
    noc_ = std::make_unique<Noc>(std::move(topo), nc);
  }
  for (unsigned m = 0; m < cfg_.mc_count; ++m)
    noc_->set_eject_limit(noc_->topology().mc_node[m], cfg_.mc_eject_queue);
  hits_.assign(sms_.size(), {});
}

void Gpu::fuse_all() {
  assert(sms_.size() == cfg_.sm_count && quiescent());
  for (const Sm& sm : sms_) {
    retired_sm_ += sm.counters;
    retired_l1d_.hits += sm.l1d.stats().hits;
    retired_l1d_.misses_new += sm.l1d.stats().misses_new;
    retired_l1d_.misses_merged += sm.l1d.stats().misses_merged;
    retired_l1d_.mshr_full += sm.l1d.stats().mshr_full;
    retired_l1i_accesses_ += sm.l1i.accesses();
    retired_l1i_misses_ += sm.l1i.misses();
  }
  retired_flits_ += noc_->stats().injected_flits;
  retired_packets_ += noc_->stats().delivered_packets;
  retired_latency_ += noc_->stats().total_latency;

  std::vector<Sm> old = std::move(sms_);
  build(true);
  const std::uint64_t until = now_ + cfg_.reconfig.reconfig_cost;
  for (unsigned i = 0; i < sms_.size(); ++i) {
    Sm& f = sms_[i];
    f.l1d = fuse_l1(old[2 * i].l1d, old[2 * i + 1].l1d);
    f.l1d.stats() = {};
    f.l1i = fuse_l1i(old[2 * i].l1i, old[2 * i + 1].l1i);
    f.l1i.reset_counters();
    f.stall_until = until;
  }
  for (PairState& p : pairs_) {
    p.mode = PairMode::Baseline;
    p.transition(PairMode::Fused, now_, 0, 0);
    p.next_check = until + cfg_.reconfig.check_period;
  }
  resume_at_ = until;
}

const AbstractInstr& Gpu::instr(std::uint32_t thread, std::uint32_t pc) const {
  const std::uint32_t per_cta = gen_.spec().warps_per_cta * kWarpSize;
  const std::uint32_t cta = thread / per_cta;
  const std::uint32_t warp = (thread % per_cta) / kWarpSize;
  const CtaSlot& slot = ctas_[cta];
  assert(slot.stream);
  return slot.stream->streams[warp][pc];
}

void Gpu::submit(Sm& sm, MemRequest req) {
  req.id = next_request_++;
  req.sm_id = sm.id;
  sm.ldst.push(std::move(req));
}

void Gpu::release_barrier(std::uint32_t cta) {
  CtaSlot& slot = ctas_[cta];
  for (Subcore& sc : sms_[slot.home].subcores)
    for (std::uint32_t id : sc.warps)
      if (pool_[id].cta_id == cta) pool_[id].at_barrier = false;
  slot.arrived = 0;
}

void Gpu::on_barrier(Sm& /*sm*/, WarpContext& w) {
  CtaSlot& slot = ctas_[w.cta_id];
  slot.arrived += w.lanes();
  if (slot.arrived >= slot.live_lanes) release_barrier(w.cta_id);
}

void Gpu::on_exit(Sm& sm, WarpContext& w) {
  for (Subcore& sc : sm.subcores) {
    auto it = std::find(sc.warps.begin(), sc.warps.end(), w.id);
    if (it != sc.warps.end()) {
      sc.warps.erase(it);
      break;
    }
  }
  CtaSlot& slot = ctas_[w.cta_id];
  assert(slot.live_lanes >= w.lanes());
  slot.live_lanes -= w.lanes();
  if (slot.live_lanes == 0) {
    Sm& home = sms_[slot.home];
    --home.resident_ctas;
    home.resident_threads -= gen_.spec().warps_per_cta * kWarpSize;
    ++home.counters.ctas_completed;
    ++ctas_done_;
    finished_ctas_.push_back(w.cta_id);  // stream freed next cycle
  } else if (slot.arrived > 0 && slot.arrived >= slot.live_lanes) {
    release_barrier(w.cta_id);
  }
}

void Gpu::dispatch() {
  if (phase_ == Phase::Draining || now_ < resume_at_) return;
  const KernelSpec& spec = gen_.spec();
  const unsigned cta_threads = spec.warps_per_cta * kWarpSize;
  const unsigned n = static_cast<unsigned>(sms_.size());
  for (unsigned k = 0; k < n && next_cta_ < spec.cta_count; ++k) {
    Sm& sm = sms_[(dispatch_rr_ + k) % n];
    if (sm.stall_until > now_ || !sm.can_accept_cta(cta_threads)) continue;
    const std::uint32_t c = next_cta_++;
    CtaSlot& slot = ctas_[c];
    slot.stream = std::make_unique<CtaStream>(gen_.cta(c));
    slot.home = sm.id;
    slot.live_lanes = cta_threads;
    slot.arrived = 0;
    const std::uint32_t base = c * cta_threads;
    const unsigned width = sm.warp_width();
    const std::uint64_t ready = sm.l1i.fetch(0, now_);
    for (unsigned off = 0; off < cta_threads; off += width) {
      std::vector<std::uint32_t> tids;
      for (unsigned t = off; t < std::min(off + width, cta_threads); ++t) tids.push_back(base + t);
      WarpContext w = make_warp(0, c, std::move(tids));
      w.ready_at = ready;
      const std::uint32_t id = pool_.add(std::move(w));
      pool_[id].origin = id;
      for (std::uint32_t t : pool_[id].threads) threads_.owner[t] = id;
      sm.subcores[0].warps.push_back(id);
    }
    ++sm.resident_ctas;
    sm.resident_threads += cta_threads;
  }
  dispatch_rr_ = (dispatch_rr_ + 1) % n;
}

void Gpu::complete(std::uint64_t request_id) {
  auto it = in_flight_.find(request_id);
  assert(it != in_flight_.end());
  for (std::uint32_t t : it->second.threads) {
    if (!threads_.pending[t]) continue;
    threads_.pending[t] = 0;
    WarpContext& w = pool_[threads_.owner[t]];
    assert(w.pending_lanes > 0);
    --w.pending_lanes;
  }
  in_flight_.erase(it);
}

void Gpu::receive_replies() {
  for (Sm& sm : sms_) {
    for (const Packet& p : noc_->pop_delivered(sm_node_[sm.id], Subnet::Reply, now_))
      for (std::uint64_t id : sm.l1d.fill(p.line, now_)) complete(id);
    auto& q = hits_[sm.id];
    while (!q.empty() && q.top().ready <= now_) {
      complete(q.top().request);
      q.pop();
    }
  }
}

void Gpu::step_memory_controllers() {
  const MeshTopology& topo = noc_->topology();
  for (unsigned m = 0; m < mcs_.size(); ++m) {
    const unsigned node = topo.mc_node[m];
    while (mcs_[m].can_accept()) {
      std::optional<Packet> p = noc_->pop_one(node, Subnet::Request, now_);
      if (!p) break;
      MemRequest r;
      r.id = p->payload;
      r.line = p->line;
      r.sm_id = p->sm_id;
      r.is_write = p->is_write;
      r.issue_cycle = now_;
      mcs_[m].accept(r);
    }
    mcs_[m].service(now_, [&](const McReply& reply) {
      Packet pk;
      pk.src = node;
      pk.dst = sm_node_[reply.sm_id];
      pk.flits = cfg_.noc.reply_flits;
      pk.subnet = Subnet::Reply;
      pk.payload = reply.request_id;
      pk.line = reply.line;
      pk.sm_id = reply.sm_id;
      return noc_->inject(pk, now_) == InjectResult::Accepted;
    });
  }
}

void Gpu::step_ldst(Sm& sm) {
  const unsigned node = sm_node_[sm.id];
  const MeshTopology& topo = noc_->topology();
  for (unsigned port = 0; port < sm.cfg.ldst_ports && !sm.ldst.empty(); ++port) {
    MemRequest& req = sm.ldst.front();
    Packet pk;
    pk.src = node;
    pk.dst = topo.mc_node[mc_of(req.line, cfg_.mc_count)];
    pk.subnet = Subnet::Request;
    pk.payload = req.id;
    pk.line = req.line;
    pk.sm_id = sm.id;
    if (req.is_write) {
      if (!noc_->can_inject(node, Subnet::Request)) break;
      pk.flits = cfg_.noc.write_flits;
      pk.is_write = true;
      noc_->inject(pk, now_);
      ++sm.counters.requests_sent;
      ++sm.counters.coalesced_requests;
      sm.ldst.pop();
      continue;
    }
    const bool needs_network = !sm.l1d.contains(req.line) && !sm.l1d.has_mshr(req.line);
    if (needs_network && sm.l1d.mshr_in_use() < sm.l1d.geometry().mshr_entries &&
        !noc_->can_inject(node, Subnet::Request))
      break;
    const AccessResult res = sm.l1d.access(req, now_);
    if (res.outcome == AccessOutcome::MshrFull) {
      ++sm.counters.mshr_full_stalls;
      break;
    }
    ++sm.counters.coalesced_requests;
    const std::uint64_t id = req.id;
    if (res.outcome == AccessOutcome::Hit) {
      hits_[sm.id].push({now_ + sm.l1d.geometry().hit_latency, hit_seq_++, id});
    } else if (res.outcome == AccessOutcome::MissNew) {
      pk.flits = cfg_.noc.request_flits;
      [[maybe_unused]] InjectResult r = noc_->inject(pk, now_);
      assert(r == InjectResult::Accepted);
      ++sm.counters.requests_sent;
    }
    in_flight_.emplace(id, std::move(req));
    sm.ldst.pop();
  }
}

SimCounters Gpu::counters() const {
  SimCounters c;
  c.sm = retired_sm_;
  c.l1d_hits = retired_l1d_.hits;
  c.l1d_misses_new = retired_l1d_.misses_new;
  c.l1d_misses_merged = retired_l1d_.misses_merged;
  c.l1i_accesses = retired_l1i_accesses_;
  c.l1i_misses = retired_l1i_misses_;
  for (const Sm& sm : sms_) {
    c.sm += sm.counters;
    c.l1d_hits += sm.l1d.stats().hits;
    c.l1d_misses_new += sm.l1d.stats().misses_new;
    c.l1d_misses_merged += sm.l1d.stats().misses_merged;
    c.l1i_accesses += sm.l1i.accesses();
    c.l1i_misses += sm.l1i.misses();
  }
  c.noc_flits = retired_flits_ + noc_->stats().injected_flits;
  c.noc_packets = retired_packets_ + noc_->stats().delivered_packets;
  c.noc_latency = retired_latency_ + noc_->stats().total_latency;
  c.live_nodes = noc_->topology().live_endpoint_count();
  c.sm_count = static_cast<unsigned>(sms_.size());
  return c;
}

double Gpu::resident_warp_units() const {
  unsigned lanes = 0;
  for (const Sm& sm : sms_) lanes += resident_lanes(sm, pool_);
  return static_cast<double>(lanes) / kWarpSize;
}

bool Gpu::quiescent() const {
  if (!noc_->empty() || !in_flight_.empty()) return false;
  for (const MemoryController& mc : mcs_)
    if (!mc.idle()) return false;
  for (const Sm& sm : sms_)
    if (!sm.ldst.empty() || sm.has_warps()) return false;
  return true;
}

bool Gpu::finished() const { return ctas_done_ == gen_.spec().cta_count && quiescent(); }

void Gpu::end_sampling(bool kernel_done) {
  const SimCounters window = counters() - window_base_;
  const std::uint64_t cycles = now_ + 1 - window_start_;
  MetricVector x;
  try {
    x = sample_metrics(window, cycles);
  } catch (const SamplingInconclusive&) {
    if (!kernel_done && doublings_ < cfg_.reconfig.max_window_doublings) {
      ++doublings_;
      window_end_ = window_start_ + (cfg_.reconfig.sample_window << doublings_);
      return;
    }
    report_.sampling_inconclusive = true;
    report_.decision = Decision::ScaleOut;
    phase_ = Phase::Running;
    return;
  }
  report_.sampled = true;
  report_.metrics = x;
  report_.logit = logit(cfg_.model, x);
  report_.decision = predict_fuse(cfg_.model, x);
  phase_ = report_.decision == Decision::ScaleUp && !kernel_done ? Phase::Draining : Phase::Running;
}

void Gpu::pair_controller(PairState& pair) {
  Sm& sm = sms_[pair.pair_id];
  const ReconfigParams& p = cfg_.reconfig;
  if (sm.stall_until > now_) return;
  if (pair.mode == PairMode::Fused) {
    merge_siblings(sm, pool_, threads_, now_);
    if (now_ < pair.next_check) return;
    pair.next_check = now_ + p.check_period;
    std::size_t resident = 0;
    for (std::uint32_t id : sm.subcores[0].warps) {
      const WarpContext& w = pool_[id];
      if (w.done) continue;
      ++resident;
      if (classify_divergent(w, now_, p)) pair.divergence_bin.insert(id);
    }
    std::size_t binned = 0;
    for (std::uint32_t id : pair.divergence_bin) {
      const auto& ws = sm.subcores[0].warps;
      binned += std::find(ws.begin(), ws.end(), id) != ws.end() && !pool_[id].done;
    }
    if (check_split(binned, resident, p.theta) == SplitDecision::Split)
      execute_split(pair, sm, pool_, threads_, cfg_.scheme, now_, p);
    else
      pair.divergence_bin.clear();
  } else if (pair.mode == PairMode::SplitRunning) {
    migrate_fast_warps(pair, sm, pool_, now_, p);
    if (check_refuse(pair, pool_)) {
      execute_refuse(pair, sm, pool_, now_);
      pair.next_check = std::max(pair.next_check, now_ + p.check_period);
    }
  }
}

void Gpu::controller() {
  switch (phase_) {
    case Phase::Sampling: {
      const bool kernel_done = ctas_done_ == gen_.spec().cta_count;
      bool every_sm = true;
      for (const Sm& sm : sms_) every_sm = every_sm && sm.counters.ctas_completed > 0;
      if (kernel_done || every_sm || now_ + 1 >= window_end_) end_sampling(kernel_done);
      break;
    }
    case Phase::Draining:
      if (quiescent()) {
        fuse_all();
        phase_ = Phase::Running;
      }
      break;
    case Phase::Running:
      if (is_dynamic(cfg_.scheme))
        for (PairState& pair : pairs_) pair_controller(pair);
      break;
  }
}

void Gpu::step() {
  for (std::uint32_t c : finished_ctas_) ctas_[c].stream.reset();
  finished_ctas_.clear();
  receive_replies();
  step_memory_controllers();
  for (Sm& sm : sms_) {
    step_ldst(sm);
    step_sm(sm, now_, *this);
  }
  controller();
  dispatch();
  noc_->step(now_);
  ++now_;
}

RunReport Gpu::run() {
  const auto t0 = std::chrono::steady_clock::now();
  while (!finished()) {
    if (now_ >= cfg_.max_cycles)
      throw std::runtime_error("simulation did not finish within " +
                               std::to_string(cfg_.max_cycles) + " cycles");
    step();
  }
  if (phase_ == Phase::Sampling) end_sampling(true);

  const SimCounters c = counters();
  RunReport& r = report_;
  const double cycles = static_cast<double>(std::max<std::uint64_t>(now_, 1));
  auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  r.total_cycles = now_;
  r.thread_insns = c.sm.thread_insns;
  r.warp_insns = c.sm.warp_insns;
  r.ipc = static_cast<double>(c.sm.thread_insns) / cycles;
  r.l1i_miss_rate = ratio(double(c.l1i_misses), double(c.l1i_accesses));
  const double misses = double(c.l1d_misses_new + c.l1d_misses_merged);
  r.l1d_miss_rate = ratio(misses, misses + double(c.l1d_hits));
  r.actual_memory_access_rate = ratio(double(c.sm.requests_sent), double(c.sm.lane_accesses));
  r.control_stall_fraction =
      ratio(double(c.sm.inactive_thread_cycles),
            double(c.sm.active_thread_cycles + c.sm.inactive_thread_cycles));
  std::uint64_t icnt = 0;
  for (const MemoryController& mc : mcs_) icnt += mc.stats().icnt_stall_cycles;
  r.icnt_stall_rate = ratio(double(icnt), cycles * cfg_.mc_count);
  r.noc_injection_rate = ratio(double(c.noc_flits), cycles * c.live_nodes);
  r.avg_noc_latency = ratio(double(c.noc_latency), double(c.noc_packets));
  if (cfg_.perfect_noc) r.avg_noc_latency = 1.0;  // also when nothing was sent
  r.sm_idle_fraction = ratio(double(c.sm.idle_cycles), double(c.sm.subcore_cycles));
  r.timeline.clear();
  r.split_events = 0;
  r.refuse_events = 0;
  for (const PairState& p : pairs_) {
    for (const PairEvent& e : p.log) r.timeline.push_back({p.pair_id, e});
    r.split_events += p.count(PairMode::Fused, PairMode::SplitRunning);
    r.refuse_events += p.count(PairMode::SplitRunning, PairMode::Fused);
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

RunReport run(const GpuConfig& cfg, const KernelSpec& kernel) { return Gpu(cfg, kernel).run(); }

}  // namespace amoeba
