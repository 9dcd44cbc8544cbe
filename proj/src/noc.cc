#include "amoeba/noc.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <string>

namespace amoeba {

namespace {

std::pair<unsigned, unsigned> grid_dims(unsigned total) {
  unsigned best_w = 0;
  unsigned best_h = 0;
  unsigned s = 1;
  while (s * s < total) ++s;
  for (unsigned a : {s - 1, s}) {
    for (unsigned b : {s - 1, s, s + 1}) {
      if (a == 0 || b == 0 || a * b < total) continue;
      if ((a > b ? a - b : b - a) > 1) continue;
      unsigned area = a * b;
      unsigned best_area = best_w * best_h;
      // Prefer the smaller area, then an even width so row-major SM pairs stay adjacent.
      bool better = best_w == 0 || area < best_area ||
                    (area == best_area && a % 2 == 0 && best_w % 2 != 0);
      if (better) {
        best_w = a;
        best_h = b;
      }
    }
  }
  return {best_w, best_h};
}

}  // namespace

unsigned MeshTopology::live_endpoint_count() const {
  return count(NodeKind::Sm) + count(NodeKind::Mc);
}

unsigned MeshTopology::live_sm_count() const { return count(NodeKind::Sm); }

unsigned MeshTopology::count(NodeKind kind) const {
  return static_cast<unsigned>(
      std::count_if(nodes.begin(), nodes.end(), [kind](const MeshNode& n) { return n.kind == kind; }));
}

MeshTopology build_topology(unsigned sm_count, unsigned mc_count,
                            std::span<const SmPair> fused_pairs) {
  if (sm_count == 0 || mc_count == 0) throw ConfigError("topology needs at least one SM and one MC");
  auto [w, h] = grid_dims(sm_count + mc_count);
  MeshTopology topo;
  topo.width = w;
  topo.height = h;
  topo.nodes.resize(std::size_t{w} * h);
  for (unsigned y = 0; y < h; ++y)
    for (unsigned x = 0; x < w; ++x) {
      MeshNode& n = topo.nodes[topo.node_at(x, y)];
      n.x = x;
      n.y = y;
    }

  const unsigned left = (mc_count + 1) / 2;
  const unsigned right = mc_count - left;
  if (left > h) throw ConfigError("too many memory controllers for the mesh perimeter");
  topo.mc_node.resize(mc_count);
  unsigned mc = 0;
  auto place_column = [&](unsigned column, unsigned k) {
    for (unsigned i = 0; i < k; ++i) {
      unsigned row = static_cast<unsigned>((i + 0.5) * h / k);
      MeshNode& n = topo.nodes[topo.node_at(column, row)];
      if (n.kind == NodeKind::Mc) throw ConfigError("memory controller placement collision");
      n.kind = NodeKind::Mc;
      n.index = mc;
      topo.mc_node[mc++] = topo.node_at(column, row);
    }
  };
  place_column(0, left);
  place_column(w - 1, right);

  topo.sm_node.resize(sm_count);
  unsigned sm = 0;
  for (unsigned id = 0; id < topo.nodes.size() && sm < sm_count; ++id) {
    MeshNode& n = topo.nodes[id];
    if (n.kind == NodeKind::Mc) continue;
    n.kind = NodeKind::Sm;
    n.index = sm;
    topo.sm_node[sm++] = id;
  }
  assert(sm == sm_count);

  for (auto [a, b] : fused_pairs) {
    if (a >= sm_count || b >= sm_count || a == b)
      throw ConfigError("fused pair references an invalid SM");
    const MeshNode& na = topo.nodes[topo.sm_node[a]];
    MeshNode& nb = topo.nodes[topo.sm_node[b]];
    if (na.kind != NodeKind::Sm || nb.kind != NodeKind::Sm)
      throw ConfigError("SM fused twice");
    unsigned dist = static_cast<unsigned>(std::abs(int(na.x) - int(nb.x)) +
                                          std::abs(int(na.y) - int(nb.y)));
    if (dist != 1)
      throw ConfigError("fused SMs " + std::to_string(a) + " and " + std::to_string(b) +
                        " are not mesh neighbors");
    nb.kind = NodeKind::Bypassed;
    nb.partner = topo.sm_node[a];
    topo.sm_node[b] = topo.sm_node[a];
  }
  return topo;
}

std::vector<SmPair> neighbor_pairs(unsigned sm_count) {
  std::vector<SmPair> pairs;
  for (unsigned i = 0; i + 1 < sm_count; i += 2) pairs.emplace_back(i, i + 1);
  return pairs;
}

std::vector<unsigned> route(const MeshTopology& topo, unsigned src, unsigned dst) {
  assert(!topo.is_bypassed(dst) && "traffic must be re-homed before routing");
  std::vector<unsigned> path;
  unsigned x = topo.nodes[src].x;
  unsigned y = topo.nodes[src].y;
  const unsigned dx = topo.nodes[dst].x;
  const unsigned dy = topo.nodes[dst].y;
  while (x != dx) {
    x = x < dx ? x + 1 : x - 1;
    path.push_back(topo.node_at(x, y));
  }
  while (y != dy) {
    y = y < dy ? y + 1 : y - 1;
    path.push_back(topo.node_at(x, y));
  }
  return path;
}

unsigned route_pipeline_cycles(const MeshTopology& topo, unsigned src, unsigned dst,
                               unsigned stages, unsigned bypass_cycles) {
  unsigned cycles = 0;
  for (unsigned node : route(topo, src, dst))
    cycles += topo.is_bypassed(node) ? bypass_cycles : stages;
  return cycles;
}

double mean_sm_mc_hops(const MeshTopology& topo) {
  std::uint64_t hops = 0;
  std::uint64_t pairs = 0;
  for (unsigned id = 0; id < topo.nodes.size(); ++id) {
    if (topo.nodes[id].kind != NodeKind::Sm) continue;
    for (unsigned mc : topo.mc_node) {
      for (auto [s, d] : {std::pair{id, mc}, std::pair{mc, id}}) {
        for (unsigned node : route(topo, s, d))
          if (!topo.is_bypassed(node)) ++hops;
        ++pairs;
      }
    }
  }
  return pairs ? static_cast<double>(hops) / pairs : 0.0;
}

Noc::Noc(MeshTopology topo, NocConfig config) : topo_(std::move(topo)), config_(config) {
  const std::size_t n = topo_.nodes.size();
  for (auto& r : routers_) r.resize(n);
  for (auto& e : eject_) e.resize(n);
  stats_.inject_attempts.assign(n, 0);
  stats_.inject_stalls_node.assign(n, 0);
}

void Noc::set_eject_limit(unsigned node, unsigned limit) {
  for (auto& e : eject_) e[node].limit = limit;
}

unsigned Noc::stage_cycles(unsigned node) const {
  return topo_.is_bypassed(node) ? config_.bypass_cycles : config_.router_stages;
}

std::uint32_t Noc::store(Packet p) {
  if (!free_slots_.empty()) {
    std::uint32_t slot = free_slots_.back();
    free_slots_.pop_back();
    slab_[slot] = p;
    return slot;
  }
  slab_.push_back(p);
  return static_cast<std::uint32_t>(slab_.size() - 1);
}

bool Noc::can_inject(unsigned node, Subnet subnet) const {
  if (config_.perfect) return true;
  const Router& r = routers_[static_cast<unsigned>(subnet)][node];
  return r.occupancy[kLocal] < config_.buffer_flits;
}

InjectResult Noc::inject(Packet packet, std::uint64_t now) {
  assert(!topo_.is_bypassed(packet.src) && !topo_.is_bypassed(packet.dst));
  ++stats_.inject_attempts[packet.src];
  if (!can_inject(packet.src, packet.subnet)) {
    ++stats_.inject_stalls;
    ++stats_.inject_stalls_node[packet.src];
    return InjectResult::Stalled;
  }
  packet.id = next_id_++;
  packet.inject_cycle = now;
  packet.ready_at = now;
  ++stats_.injected_packets;
  stats_.injected_flits += packet.flits;
  ++in_flight_;
  const unsigned net = static_cast<unsigned>(packet.subnet);
  if (config_.perfect || packet.src == packet.dst) {
    const unsigned dst = packet.dst;
    std::uint32_t slot = store(packet);
    deliver(slot, dst, packet.subnet, now + 1);
    return InjectResult::Accepted;
  }
  Router& r = routers_[net][packet.src];
  r.occupancy[kLocal] += packet.flits;
  r.in[kLocal].push_back(store(packet));
  return InjectResult::Accepted;
}

void Noc::deliver(std::uint32_t slot, unsigned node, Subnet subnet, std::uint64_t at) {
  slab_[slot].deliver_cycle = at;
  eject_[static_cast<unsigned>(subnet)][node].packets.push_back(slot);
}

unsigned Noc::output_port(unsigned node, unsigned dst) const {
  const MeshNode& a = topo_.nodes[node];
  const MeshNode& b = topo_.nodes[dst];
  if (a.x < b.x) return kEast;
  if (a.x > b.x) return kWest;
  if (a.y < b.y) return kSouth;
  if (a.y > b.y) return kNorth;
  return kLocal;
}

unsigned Noc::neighbor(unsigned node, unsigned port) const {
  const MeshNode& a = topo_.nodes[node];
  switch (port) {
    case kEast: return topo_.node_at(a.x + 1, a.y);
    case kWest: return topo_.node_at(a.x - 1, a.y);
    case kSouth: return topo_.node_at(a.x, a.y + 1);
    case kNorth: return topo_.node_at(a.x, a.y - 1);
    default: return node;
  }
}

namespace {

unsigned opposite(unsigned port) {
  switch (port) {
    case 1: return 2;
    case 2: return 1;
    case 3: return 4;
    case 4: return 3;
    default: return 0;
  }
}

}  // namespace

void Noc::step(std::uint64_t now) {
  if (config_.perfect) return;
  struct Move {
    unsigned node;
    unsigned in_port;
    unsigned out_port;
  };
  std::vector<Move> moves;
  for (unsigned net = 0; net < 2; ++net) {
    auto& routers = routers_[net];
    moves.clear();
    for (unsigned node = 0; node < routers.size(); ++node) {
      Router& r = routers[node];
      std::array<bool, kPorts> out_taken{};
      for (unsigned k = 0; k < kPorts; ++k) {
        const unsigned p = (r.rr + k) % kPorts;
        if (r.in[p].empty()) continue;
        const Packet& head = slab_[r.in[p].front()];
        if (head.ready_at > now) continue;
        stats_.max_head_wait = std::max(stats_.max_head_wait, now - head.ready_at);
        const unsigned o = output_port(node, head.dst);
        if (out_taken[o] || r.out_free_at[o] > now) continue;
        if (o == kLocal) {
          const Ejection& e = eject_[net][node];
          if (e.packets.size() >= e.limit) continue;
        } else {
          const unsigned d = neighbor(node, o);
          if (routers[d].occupancy[opposite(o)] >= config_.buffer_flits) continue;
        }
        out_taken[o] = true;
        moves.push_back({node, p, o});
      }
    }
    for (const Move& m : moves) {
      Router& r = routers[m.node];
      const std::uint32_t slot = r.in[m.in_port].front();
      r.in[m.in_port].pop_front();
      Packet& pkt = slab_[slot];
      r.occupancy[m.in_port] -= pkt.flits;
      r.out_free_at[m.out_port] = now + pkt.flits;
      r.rr = (m.in_port + 1) % kPorts;
      if (m.out_port == kLocal) {
        deliver(slot, m.node, pkt.subnet, now + pkt.flits);
      } else {
        const unsigned d = neighbor(m.node, m.out_port);
        const unsigned ip = opposite(m.out_port);
        pkt.ready_at = now + stage_cycles(d);
        routers[d].occupancy[ip] += pkt.flits;
        routers[d].in[ip].push_back(slot);
      }
    }
  }
}

std::vector<Packet> Noc::pop_delivered(unsigned node, Subnet subnet, std::uint64_t now) {
  std::vector<Packet> out;
  auto& q = eject_[static_cast<unsigned>(subnet)][node].packets;
  while (!q.empty() && slab_[q.front()].deliver_cycle <= now) {
    const std::uint32_t slot = q.front();
    q.pop_front();
    const Packet& p = slab_[slot];
    ++stats_.delivered_packets;
    stats_.total_latency += p.deliver_cycle - p.inject_cycle;
    --in_flight_;
    out.push_back(p);
    free_slots_.push_back(slot);
  }
  return out;
}

std::optional<Packet> Noc::pop_one(unsigned node, Subnet subnet, std::uint64_t now) {
  auto& q = eject_[static_cast<unsigned>(subnet)][node].packets;
  if (q.empty() || slab_[q.front()].deliver_cycle > now) return std::nullopt;
  const std::uint32_t slot = q.front();
  q.pop_front();
  const Packet p = slab_[slot];
  ++stats_.delivered_packets;
  stats_.total_latency += p.deliver_cycle - p.inject_cycle;
  --in_flight_;
  free_slots_.push_back(slot);
  return p;
}

double Noc::average_latency() const {
  return stats_.delivered_packets
             ? static_cast<double>(stats_.total_latency) / stats_.delivered_packets
             : 0.0;
}

}  // namespace amoeba
