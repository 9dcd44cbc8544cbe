#include "amoeba/memsys.h"

#include <algorithm>
#include <cassert>
#include <limits>

namespace amoeba {

std::vector<MemRequest> coalesce(std::span<const Addr> lane_addrs, unsigned line_size) {
  std::map<Addr, std::vector<std::uint32_t>> lines;
  for (std::uint32_t lane = 0; lane < lane_addrs.size(); ++lane) {
    if (lane_addrs[lane] == kNullAddr) continue;
    lines[line_of(lane_addrs[lane], line_size)].push_back(lane);
  }
  std::vector<MemRequest> out;
  out.reserve(lines.size());
  for (auto& [line, lanes] : lines) {
    MemRequest req;
    req.line = line;
    req.lanes = std::move(lanes);
    out.push_back(std::move(req));
  }
  return out;
}

namespace {

void absorb(MemRequest& into, MemRequest&& from) {
  into.merged_warp_count += from.merged_warp_count;
  into.threads.insert(into.threads.end(), from.threads.begin(), from.threads.end());
}

}  // namespace

std::vector<MemRequest> cross_warp_coalesce(std::vector<MemRequest> pending,
                                            std::uint64_t window) {
  std::stable_sort(pending.begin(), pending.end(),
                   [](const MemRequest& a, const MemRequest& b) {
                     return a.issue_cycle < b.issue_cycle;
                   });
  std::vector<MemRequest> out;
  for (MemRequest& req : pending) {
    auto hit = std::find_if(out.begin(), out.end(), [&](const MemRequest& kept) {
      return kept.line == req.line && kept.is_write == req.is_write &&
             req.issue_cycle - kept.issue_cycle <= window;
    });
    if (hit != out.end()) absorb(*hit, std::move(req));
    else out.push_back(std::move(req));
  }
  return out;
}

bool CoalescingQueue::push(MemRequest req) {
  for (MemRequest& queued : queue_) {
    if (queued.line == req.line && queued.is_write == req.is_write &&
        req.issue_cycle - queued.issue_cycle <= window_) {
      absorb(queued, std::move(req));
      return true;
    }
  }
  queue_.push_back(std::move(req));
  return false;
}

TagArray::TagArray(unsigned sets, unsigned ways, unsigned line_size)
    : sets_(sets), ways_(ways), line_size_(line_size), ways_store_(std::size_t{sets} * ways) {
  assert(sets > 0 && ways > 0);
}

unsigned TagArray::set_of(Addr line) const {
  return static_cast<unsigned>((line / line_size_) % sets_);
}

int TagArray::find(Addr line) const {
  const std::size_t base = std::size_t{set_of(line)} * ways_;
  for (unsigned w = 0; w < ways_; ++w) {
    const Way& way = ways_store_[base + w];
    if (way.valid && way.line == line) return static_cast<int>(base + w);
  }
  return -1;
}

void TagArray::touch(int way_index) { ways_store_[way_index].stamp = ++clock_; }

int TagArray::insert(Addr line, std::uint64_t ready_at) {
  const std::size_t base = std::size_t{set_of(line)} * ways_;
  std::size_t victim = base;
  for (unsigned w = 0; w < ways_; ++w) {
    const Way& way = ways_store_[base + w];
    if (!way.valid) {
      victim = base + w;
      break;
    }
    if (way.stamp < ways_store_[victim].stamp) victim = base + w;
  }
  ways_store_[victim] = Way{line, true, ++clock_, ready_at};
  return static_cast<int>(victim);
}

void TagArray::invalidate(Addr line) {
  int idx = find(line);
  if (idx >= 0) ways_store_[idx].valid = false;
}

std::vector<Addr> TagArray::resident_lines() const {
  std::vector<Addr> out;
  for (const Way& w : ways_store_)
    if (w.valid) out.push_back(w.line);
  std::sort(out.begin(), out.end());
  return out;
}

Cache::Cache(CacheGeometry geometry)
    : geometry_(geometry), tags_(geometry.sets, geometry.ways, geometry.line_size) {}

AccessResult Cache::access(const MemRequest& req, std::uint64_t /*now*/) {
  assert(req.line % geometry_.line_size == 0);
  int idx = tags_.find(req.line);
  if (idx >= 0) {
    tags_.touch(idx);
    ++stats_.hits;
    return {AccessOutcome::Hit, 0};
  }
  auto it = mshr_.find(req.line);
  if (it != mshr_.end()) {
    // The primary request is not a merge.
    if (it->second.requests.size() > geometry_.mshr_merge_cap) {
      ++stats_.mshr_full;
      return {AccessOutcome::MshrFull, req.line};
    }
    it->second.requests.push_back(req.id);
    ++stats_.misses_merged;
    return {AccessOutcome::MissMerged, req.line};
  }
  if (mshr_.size() >= geometry_.mshr_entries) {
    ++stats_.mshr_full;
    return {AccessOutcome::MshrFull, req.line};
  }
  mshr_[req.line].requests.push_back(req.id);
  ++stats_.misses_new;
  return {AccessOutcome::MissNew, req.line};
}

std::vector<std::uint64_t> Cache::fill(Addr line, std::uint64_t now) {
  std::vector<std::uint64_t> waiters;
  auto it = mshr_.find(line);
  if (it != mshr_.end()) {
    waiters = std::move(it->second.requests);
    mshr_.erase(it);
  }
  if (tags_.find(line) < 0) tags_.insert(line, now);
  return waiters;
}

Cache fuse_l1(const Cache& a, const Cache& b) {
  const CacheGeometry& ga = a.geometry_;
  const CacheGeometry& gb = b.geometry_;
  if (ga.sets != gb.sets || ga.ways != gb.ways || ga.line_size != gb.line_size)
    throw ConfigError("fuse_l1: cache geometries differ");
  CacheGeometry g = ga;
  g.ways = ga.ways * 2;
  g.hit_latency = std::max(ga.hit_latency, gb.hit_latency) + 1;
  g.mshr_entries = ga.mshr_entries + gb.mshr_entries;
  Cache out(g);
  const auto& wa = a.tags_.ways_raw();
  const auto& wb = b.tags_.ways_raw();
  auto& dst = out.tags_.ways_raw();
  for (unsigned s = 0; s < g.sets; ++s) {
    for (unsigned w = 0; w < ga.ways; ++w) {
      dst[std::size_t{s} * g.ways + w] = wa[std::size_t{s} * ga.ways + w];
      dst[std::size_t{s} * g.ways + ga.ways + w] = wb[std::size_t{s} * ga.ways + w];
    }
    // A line resident in both halves keeps its most recent copy.
    for (unsigned w = 0; w < ga.ways; ++w) {
      auto& left = dst[std::size_t{s} * g.ways + w];
      if (!left.valid) continue;
      for (unsigned v = 0; v < ga.ways; ++v) {
        auto& right = dst[std::size_t{s} * g.ways + ga.ways + v];
        if (right.valid && right.line == left.line) {
          (left.stamp >= right.stamp ? right : left).valid = false;
        }
      }
    }
  }
  out.tags_.set_clock(std::max(a.tags_.clock(), b.tags_.clock()));
  out.mshr_ = a.mshr_;
  for (const auto& [line, entry] : b.mshr_) {
    auto& merged = out.mshr_[line].requests;
    merged.insert(merged.end(), entry.requests.begin(), entry.requests.end());
  }
  return out;
}

std::pair<Cache, Cache> split_l1(const Cache& fused) {
  const CacheGeometry& g = fused.geometry_;
  if (g.ways % 2 != 0) throw ConfigError("split_l1: odd way count");
  CacheGeometry half = g;
  half.ways = g.ways / 2;
  half.hit_latency = g.hit_latency > 0 ? g.hit_latency - 1 : 0;
  half.mshr_entries = g.mshr_entries / 2;
  Cache lo(half);
  Cache hi(half);
  const auto& src = fused.tags_.ways_raw();
  for (unsigned s = 0; s < g.sets; ++s) {
    for (unsigned w = 0; w < g.ways; ++w) {
      Cache& dst = (w % 2 == 0) ? lo : hi;
      dst.tags_.ways_raw()[std::size_t{s} * half.ways + w / 2] = src[std::size_t{s} * g.ways + w];
    }
  }
  lo.tags_.set_clock(fused.tags_.clock());
  hi.tags_.set_clock(fused.tags_.clock());
  for (const auto& [line, entry] : fused.mshr_) {
    (lo.tags_.set_of(line) % 2 == 0 ? lo : hi).mshr_[line] = entry;
  }
  return {std::move(lo), std::move(hi)};
}

InstructionCache::InstructionCache(unsigned sets, unsigned ways, unsigned miss_latency)
    : tags_(sets, ways), miss_latency_(miss_latency) {}

std::uint64_t InstructionCache::fetch(Addr line, std::uint64_t now) {
  ++accesses_;
  int idx = tags_.find(line);
  if (idx >= 0) {
    tags_.touch(idx);
    return std::max(now, tags_.ways_raw()[idx].ready_at);
  }
  ++misses_;
  tags_.insert(line, now + miss_latency_);
  return now + miss_latency_;
}

void InstructionCache::prefetch(Addr line, std::uint64_t now) {
  if (tags_.find(line) < 0) tags_.insert(line, now + miss_latency_);
}

InstructionCache fuse_l1i(const InstructionCache& a, const InstructionCache& b) {
  if (a.tags_.sets() != b.tags_.sets() || a.tags_.ways() != b.tags_.ways())
    throw ConfigError("fuse_l1i: cache geometries differ");
  const unsigned sets = a.tags_.sets();
  const unsigned ways = a.tags_.ways();
  InstructionCache out(sets, ways * 2, a.miss_latency_);
  auto& dst = out.tags_.ways_raw();
  for (unsigned s = 0; s < sets; ++s) {
    for (unsigned w = 0; w < ways; ++w) {
      dst[std::size_t{s} * ways * 2 + w] = a.tags_.ways_raw()[std::size_t{s} * ways + w];
      dst[std::size_t{s} * ways * 2 + ways + w] = b.tags_.ways_raw()[std::size_t{s} * ways + w];
    }
    for (unsigned w = 0; w < ways; ++w) {
      auto& left = dst[std::size_t{s} * ways * 2 + w];
      if (!left.valid) continue;
      for (unsigned v = 0; v < ways; ++v) {
        auto& right = dst[std::size_t{s} * ways * 2 + ways + v];
        if (right.valid && right.line == left.line) right.valid = false;
      }
    }
  }
  out.tags_.set_clock(std::max(a.tags_.clock(), b.tags_.clock()));
  out.accesses_ = a.accesses_ + b.accesses_;
  out.misses_ = a.misses_ + b.misses_;
  return out;
}

namespace {

unsigned l2_sets(const McConfig& c) {
  return std::max(1u, c.l2_kb * 1024 / kLineSize / c.l2_ways);
}

}  // namespace

MemoryController::MemoryController(unsigned id, unsigned mc_count, McConfig config)
    : id_(id), mc_count_(mc_count), config_(config), l2_(l2_sets(config), config.l2_ways) {}

void MemoryController::accept(const MemRequest& req) {
  assert(can_accept());
  queue_.push_back(req);
}

std::vector<McReply> MemoryController::service(
    std::uint64_t now, const std::function<bool(const McReply&)>& try_inject) {
  if (!queue_.empty() && in_service_.size() < config_.max_in_service) {
    MemRequest req = std::move(queue_.front());
    queue_.pop_front();
    // Slice-local line index so interleaved lines use every set.
    const Addr local = (req.line / kLineSize) / mc_count_ * kLineSize;
    int idx = l2_.find(local);
    const bool hit = idx >= 0;
    if (hit) l2_.touch(idx);
    else l2_.insert(local);
    if (req.is_write) {
      ++stats_.writes;
    } else {
      ++stats_.reads;
      std::uint64_t ready = now + config_.l2_latency;
      if (hit) {
        ++stats_.l2_hits;
      } else {
        ++stats_.l2_misses;
        const std::uint64_t start = std::max(now, dram_free_at_);
        dram_free_at_ = start + config_.dram_interval;
        ready = start + config_.l2_latency + config_.dram_latency;
      }
      in_service_.emplace(std::make_pair(ready, seq_++),
                          McReply{req.id, req.line, req.sm_id, ready});
    }
  }
  std::vector<McReply> sent;
  while (!in_service_.empty() && in_service_.begin()->first.first <= now) {
    const McReply& reply = in_service_.begin()->second;
    if (!try_inject(reply)) {
      ++stats_.icnt_stall_cycles;
      break;
    }
    sent.push_back(reply);
    in_service_.erase(in_service_.begin());
  }
  return sent;
}

}  // namespace amoeba
