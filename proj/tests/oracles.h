// Slow, obviously-correct versions of things the simulator computes.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <list>
#include <map>
#include <set>
#include <vector>

#include "amoeba/gpu.h"

namespace oracle {

using namespace amoeba;

// Walks one thread through its stream: taken branches enter the body,
// others jump to the reconvergence point.
inline std::uint32_t thread_instructions(const InstrStream& s, unsigned lane) {
  std::uint32_t pc = 0, n = 0;
  for (;;) {
    const AbstractInstr& ins = s.at(pc);
    ++n;
    if (ins.kind == InstrKind::Exit) return n;
    if (ins.kind == InstrKind::Branch)
      pc = (ins.taken_mask >> lane & 1u) ? pc + 1 : ins.reconv;
    else
      ++pc;
  }
}

// Per-thread retired counts for the whole kernel, one SM, one thread at a time.
inline std::vector<std::uint32_t> reference_retired(const KernelSpec& spec) {
  std::vector<std::uint32_t> out(spec.total_threads(), 0);
  KernelGenerator gen(spec);
  for (std::uint32_t c = 0; c < spec.cta_count; ++c) {
    const CtaStream cta = gen.cta(c);
    for (std::uint32_t w = 0; w < spec.warps_per_cta; ++w)
      for (unsigned l = 0; l < kWarpSize; ++l)
        out[(std::uint64_t{c} * spec.warps_per_cta + w) * kWarpSize + l] =
            thread_instructions(cta.streams[w], l);
  }
  return out;
}

inline std::size_t distinct_lines(const std::vector<Addr>& addrs) {
  std::set<Addr> lines;
  for (Addr a : addrs)
    if (a != kNullAddr) lines.insert(a / kLineSize);
  return lines.size();
}

// Set-associative LRU by explicit recency lists.
class LruCache {
 public:
  LruCache(unsigned sets, unsigned ways) : sets_(sets), ways_(ways), lists_(sets) {}
  bool access(Addr line) {
    auto& l = lists_[(line / kLineSize) % sets_];
    auto it = std::find(l.begin(), l.end(), line);
    const bool hit = it != l.end();
    if (hit) l.erase(it);
    l.push_front(line);
    if (l.size() > ways_) l.pop_back();
    return hit;
  }

 private:
  unsigned sets_, ways_;
  std::vector<std::list<Addr>> lists_;
};

inline unsigned xy_hops(const MeshTopology& t, unsigned a, unsigned b) {
  const auto& na = t.nodes[a];
  const auto& nb = t.nodes[b];
  return static_cast<unsigned>(std::abs(int(na.x) - int(nb.x)) + std::abs(int(na.y) - int(nb.y)));
}

// Uncontended latency: pipeline stages of every router after the source,
// then the tail flits drain into the destination.
inline std::uint64_t uncontended_latency(const MeshTopology& t, unsigned src, unsigned dst,
                                         unsigned flits, unsigned stage = 2, unsigned bypass = 1) {
  if (src == dst) return 1;
  std::uint64_t cycles = 0;
  unsigned x = t.nodes[src].x, y = t.nodes[src].y;
  const unsigned dx = t.nodes[dst].x, dy = t.nodes[dst].y;
  while (x != dx || y != dy) {
    if (x != dx) x = x < dx ? x + 1 : x - 1;
    else y = y < dy ? y + 1 : y - 1;
    cycles += t.is_bypassed(t.node_at(x, y)) ? bypass : stage;
  }
  return cycles + flits;
}

// Central differences.
inline std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                            std::vector<double> w, double h = 1e-6) {
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    w[i] = keep + h;
    const double up = f(w);
    w[i] = keep - h;
    const double down = f(w);
    w[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace oracle
