// 2D mesh interconnect: request and reply subnets, XY routing, 2-stage
// routers, finite input buffers, router bypass for fused SM pairs and an
// ideal ("perfect") mode.

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "amoeba/workload.h"

namespace amoeba {

enum class NodeKind : std::uint8_t { Sm, Mc, Bypassed, Empty };

struct MeshNode {
  NodeKind kind = NodeKind::Empty;
  unsigned index = 0;    // SM or MC id; for Bypassed the SM id that was folded away
  unsigned x = 0;
  unsigned y = 0;
  unsigned partner = 0;  // Bypassed: node id that now serves this SM
};

struct MeshTopology {
  unsigned width = 0;
  unsigned height = 0;
  std::vector<MeshNode> nodes;   // id = y * width + x
  std::vector<unsigned> sm_node;  // SM id -> node serving it (re-homed when bypassed)
  std::vector<unsigned> mc_node;

  unsigned node_at(unsigned x, unsigned y) const { return y * width + x; }
  bool is_bypassed(unsigned node) const { return nodes[node].kind == NodeKind::Bypassed; }
  // Nodes with an endpoint attached: SMs (not folded away) and MCs.
  unsigned live_endpoint_count() const;
  unsigned live_sm_count() const;
  unsigned count(NodeKind kind) const;
};

using SmPair = std::pair<unsigned, unsigned>;

// Smallest near-square grid holding every SM and MC; MCs split over the two
// perimeter columns. Each pair's second SM becomes a bypassed router whose
// traffic is re-homed to the first. Throws ConfigError for non-adjacent pairs.
MeshTopology build_topology(unsigned sm_count, unsigned mc_count,
                            std::span<const SmPair> fused_pairs = {});

// (2i, 2i+1) for every i.
std::vector<SmPair> neighbor_pairs(unsigned sm_count);

// Routers entered on the X-then-Y path from src to dst (src excluded).
std::vector<unsigned> route(const MeshTopology& topo, unsigned src, unsigned dst);

// Pipeline cycles along the route: full stages per live router, one per bypassed one.
unsigned route_pipeline_cycles(const MeshTopology& topo, unsigned src, unsigned dst,
                               unsigned stages = 2, unsigned bypass_cycles = 1);

// Mean number of live routers entered over every (SM, MC) pair, both directions.
double mean_sm_mc_hops(const MeshTopology& topo);

enum class Subnet : std::uint8_t { Request = 0, Reply = 1 };
enum class InjectResult : std::uint8_t { Accepted, Stalled };

struct Packet {
  std::uint64_t id = 0;
  unsigned src = 0;
  unsigned dst = 0;
  unsigned flits = 1;
  Subnet subnet = Subnet::Request;
  std::uint64_t payload = 0;  // request id
  Addr line = 0;
  unsigned sm_id = 0;
  bool is_write = false;
  std::uint64_t inject_cycle = 0;
  std::uint64_t deliver_cycle = 0;
  std::uint64_t ready_at = 0;  // earliest cycle the head may leave its current router
};

struct NocConfig {
  unsigned router_stages = 2;
  unsigned bypass_cycles = 1;
  unsigned buffer_flits = 8;
  unsigned request_flits = 2;
  unsigned reply_flits = 10;
  unsigned write_flits = 10;
  bool perfect = false;

  bool operator==(const NocConfig&) const = default;
};

struct NocStats {
  std::uint64_t injected_packets = 0;
  std::uint64_t injected_flits = 0;
  std::uint64_t delivered_packets = 0;
  std::uint64_t total_latency = 0;
  std::uint64_t inject_stalls = 0;
  std::uint64_t max_head_wait = 0;
  std::vector<std::uint64_t> inject_attempts;      // per node
  std::vector<std::uint64_t> inject_stalls_node;   // per node
};

class Noc {
 public:
  Noc(MeshTopology topo, NocConfig config);

  // Source injection buffer has room; does not count as an attempt.
  bool can_inject(unsigned node, Subnet subnet) const;
  InjectResult inject(Packet packet, std::uint64_t now);

  // Advances every router by one cycle (compute all transfers, then commit).
  void step(std::uint64_t now);

  // Packets whose tail has reached node by `now`, in delivery order.
  std::vector<Packet> pop_delivered(unsigned node, Subnet subnet, std::uint64_t now);
  std::optional<Packet> pop_one(unsigned node, Subnet subnet, std::uint64_t now);
  // Bounds how many packets may wait in a node's ejection queue.
  void set_eject_limit(unsigned node, unsigned limit);

  std::uint64_t in_flight() const { return in_flight_; }
  bool empty() const { return in_flight_ == 0; }
  const NocStats& stats() const { return stats_; }
  const MeshTopology& topology() const { return topo_; }
  const NocConfig& config() const { return config_; }
  double average_latency() const;

 private:
  enum Port : unsigned { kLocal = 0, kNorth = 1, kSouth = 2, kEast = 3, kWest = 4, kPorts = 5 };

  struct Router {
    std::array<std::deque<std::uint32_t>, kPorts> in;  // packet slots
    std::array<unsigned, kPorts> occupancy{};
    std::array<std::uint64_t, kPorts> out_free_at{};
    unsigned rr = 0;
  };

  struct Ejection {
    std::deque<std::uint32_t> packets;
    unsigned limit = ~0u;
  };

  unsigned output_port(unsigned node, unsigned dst) const;
  unsigned neighbor(unsigned node, unsigned port) const;
  unsigned stage_cycles(unsigned node) const;
  std::uint32_t store(Packet p);
  void deliver(std::uint32_t slot, unsigned node, Subnet subnet, std::uint64_t at);

  MeshTopology topo_;
  NocConfig config_;
  std::array<std::vector<Router>, 2> routers_;
  std::array<std::vector<Ejection>, 2> eject_;
  std::vector<Packet> slab_;
  std::vector<std::uint32_t> free_slots_;
  std::uint64_t in_flight_ = 0;
  std::uint64_t next_id_ = 1;
  NocStats stats_;
};

}  // namespace amoeba
