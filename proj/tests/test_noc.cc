#include <random>

#include "doctest.h"
#include "oracles.h"

using namespace amoeba;

TEST_CASE("topology places every SM and MC once") {
  for (auto [sms, mcs] : {std::pair{8u, 4u}, std::pair{48u, 8u}, std::pair{4u, 2u}}) {
    const MeshTopology t = build_topology(sms, mcs);
    CHECK(t.width * t.height >= sms + mcs);
    CHECK(t.count(NodeKind::Sm) == sms);
    CHECK(t.count(NodeKind::Mc) == mcs);
    CHECK(t.live_endpoint_count() == sms + mcs);
    for (unsigned mc : t.mc_node) {
      const auto& n = t.nodes[mc];
      CHECK((n.x == 0 || n.x == t.width - 1));
    }
  }
  const MeshTopology big = build_topology(48, 8);
  CHECK(big.width == 8);
  CHECK(big.height == 7);
}

TEST_CASE("fused pairs fold the second SM into a bypassed router") {
  const auto pairs = neighbor_pairs(8);
  const MeshTopology t = build_topology(8, 4, pairs);
  CHECK(t.count(NodeKind::Bypassed) == 4);
  CHECK(t.live_endpoint_count() == 8 / 2 + 4);
  for (auto [a, b] : pairs) {
    CHECK(t.sm_node[a] == t.sm_node[b]);
    CHECK_FALSE(t.is_bypassed(t.sm_node[a]));
  }
  const MeshTopology base = build_topology(8, 4);
  CHECK(mean_sm_mc_hops(t) < mean_sm_mc_hops(base));
  std::vector<SmPair> far = {{0, 7}};
  CHECK_THROWS_AS(build_topology(8, 4, far), ConfigError);
}

TEST_CASE("routes follow XY order") {
  const MeshTopology t = build_topology(48, 8);
  std::mt19937 rng(3);
  for (int i = 0; i < 200; ++i) {
    const unsigned a = rng() % t.nodes.size(), b = rng() % t.nodes.size();
    const auto r = route(t, a, b);
    CHECK(r.size() == oracle::xy_hops(t, a, b));
    bool y_started = false;
    unsigned prev = a;
    for (unsigned n : r) {
      const bool y_move = t.nodes[n].x == t.nodes[prev].x;
      if (y_move) y_started = true;
      else CHECK_FALSE(y_started);
      prev = n;
    }
  }
}

TEST_CASE("single packet latency matches the uncontended oracle") {
  for (bool fused : {false, true}) {
    const auto pairs = neighbor_pairs(8);
    const MeshTopology t = fused ? build_topology(8, 4, pairs) : build_topology(8, 4);
    for (unsigned src : {t.sm_node[0], t.sm_node[5], t.mc_node[0]}) {
      for (unsigned dst : {t.mc_node[1], t.mc_node[3], t.sm_node[2]}) {
        Noc noc(t, NocConfig{});
        Packet p;
        p.src = src;
        p.dst = dst;
        p.flits = 10;
        REQUIRE(noc.inject(p, 0) == InjectResult::Accepted);
        std::optional<Packet> got;
        for (std::uint64_t c = 0; c < 500 && !got; ++c) {
          noc.step(c);
          got = noc.pop_one(dst, Subnet::Request, c + 1);
        }
        REQUIRE(got);
        CHECK(got->deliver_cycle - got->inject_cycle == oracle::uncontended_latency(t, src, dst, 10));
        CHECK(route_pipeline_cycles(t, src, dst) + 10 == oracle::uncontended_latency(t, src, dst, 10));
      }
    }
  }
}

TEST_CASE("perfect network delivers in one cycle") {
  const MeshTopology t = build_topology(8, 4);
  NocConfig cfg;
  cfg.perfect = true;
  Noc noc(t, cfg);
  for (int i = 0; i < 50; ++i) {
    Packet p;
    p.src = t.sm_node[i % 8];
    p.dst = t.mc_node[i % 4];
    p.flits = 10;
    CHECK(noc.inject(p, 5) == InjectResult::Accepted);
  }
  noc.step(5);
  CHECK(noc.pop_delivered(t.mc_node[0], Subnet::Request, 5).empty());
  for (unsigned mc : t.mc_node) noc.pop_delivered(mc, Subnet::Request, 6);
  CHECK(noc.empty());
  CHECK(noc.average_latency() == 1.0);
}

TEST_CASE("full injection buffer stalls and traffic drains") {
  const MeshTopology t = build_topology(8, 4);
  Noc noc(t, NocConfig{});
  Packet p;
  p.src = t.sm_node[0];
  p.dst = t.mc_node[2];
  p.flits = 10;
  CHECK(noc.inject(p, 0) == InjectResult::Accepted);
  CHECK(noc.inject(p, 0) == InjectResult::Stalled);
  CHECK(noc.stats().inject_stalls == 1);
  unsigned sent = 1, got = 0;
  for (std::uint64_t c = 0; c < 5000; ++c) {
    if (sent < 40 && noc.can_inject(p.src, Subnet::Request) &&
        noc.inject(p, c) == InjectResult::Accepted)
      ++sent;
    noc.step(c);
    got += noc.pop_delivered(p.dst, Subnet::Request, c + 1).size();
  }
  CHECK(got == 40);
  CHECK(noc.empty());
  CHECK(noc.average_latency() > oracle::uncontended_latency(t, p.src, p.dst, 10));
}
