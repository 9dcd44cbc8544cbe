#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "oracles.h"
#include "amoeba/harness.h"

using namespace amoeba;

namespace {

KernelSpec small_kernel(std::uint64_t seed) {
  KernelSpec k;
  k.name = "small";
  k.cta_count = 24;
  k.warps_per_cta = 4;
  k.instructions_per_warp = 150;
  k.load_rate = 0.15;
  k.store_rate = 0.05;
  k.branch_rate = 0.1;
  k.branch_divergence_prob = 0.6;
  k.divergent_path_extra_insns = 5;
  k.access_footprint_bytes = 1 << 18;
  k.locality = 0.2;
  k.seed = seed;
  return k;
}

GpuConfig always_up(Scheme s) {
  GpuConfig c = desk_config();
  c.scheme = s;
  c.model.constant = 1;
  c.model.coefficients.fill(0);
  c.reconfig.sample_window = 2000;
  return c;
}

}  // namespace

TEST_CASE("every scheme retires the reference counts") {
  const KernelSpec k = small_kernel(17);
  const auto ref = oracle::reference_retired(k);
  for (Scheme s : all_schemes()) {
    CAPTURE(to_string(s));
    Gpu g(always_up(s), k);
    const RunReport r = g.run();
    CHECK(g.thread_table().retired == ref);
    for (const auto& row : r.timeline) CHECK(row.event.lanes_before == row.event.lanes_after);
    std::uint64_t total = 0;
    for (auto n : ref) total += n;
    CHECK(r.thread_insns == total);
    CHECK(r.ipc == doctest::Approx(double(total) / r.total_cycles));
  }
}

TEST_CASE("runs are deterministic") {
  const KernelSpec k = small_kernel(5);
  const GpuConfig c = always_up(Scheme::WarpRegroup);
  const RunReport a = run(c, k);
  const RunReport b = run(c, k);
  CHECK(a.total_cycles == b.total_cycles);
  CHECK(a.ipc == b.ipc);
  CHECK(a.timeline.size() == b.timeline.size());
  CHECK(report_to_json(a).dump() != "");
  auto ja = report_to_json(a), jb = report_to_json(b);
  ja.erase("wall_seconds");
  jb.erase("wall_seconds");
  CHECK(ja == jb);
}

TEST_CASE("baseline never reconfigures and a negative logit keeps it") {
  const KernelSpec k = small_kernel(9);
  GpuConfig c = desk_config();
  const RunReport base = run(c, k);
  CHECK(base.timeline.empty());
  CHECK_FALSE(base.sampled);
  c.scheme = Scheme::StaticFuse;
  c.model.constant = -1;
  c.model.coefficients.fill(0);
  c.reconfig.sample_window = 2000;
  const RunReport st = run(c, k);
  CHECK(st.sampled);
  CHECK(st.decision == Decision::ScaleOut);
  CHECK(st.timeline.empty());
  CHECK(st.total_cycles == base.total_cycles);
}

TEST_CASE("fusion logs one transition per pair") {
  const KernelSpec k = small_kernel(9);
  const RunReport st = run(always_up(Scheme::StaticFuse), k);
  CHECK(st.decision == Decision::ScaleUp);
  CHECK(st.timeline.size() == 4);
  for (const auto& row : st.timeline) {
    CHECK(row.event.from == PairMode::Baseline);
    CHECK(row.event.to == PairMode::Fused);
  }
}

TEST_CASE("perfect network reports unit latency and no ICNT stalls") {
  GpuConfig c = desk_config();
  c.perfect_noc = true;
  const RunReport r = run(c, small_kernel(3));
  CHECK(r.avg_noc_latency == 1.0);
  CHECK(r.icnt_stall_rate == 0.0);
}

TEST_CASE("config files round trip and reject unknown keys") {
  GpuConfig c = desk_config();
  c.scheme = Scheme::DirectSplit;
  c.reconfig.theta = 0.3;
  const GpuConfig back = config_from_json(config_to_json(c));
  CHECK(back.scheme == c.scheme);
  CHECK(back.reconfig == c.reconfig);
  CHECK(back.sm == c.sm);
  auto j = config_to_json(c);
  j["warp_speed"] = 9;
  CHECK_THROWS_AS(config_from_json(j), ConfigError);
  j = config_to_json(c);
  j["sm_count"] = 0;
  CHECK_THROWS_AS(config_from_json(j), ConfigError);
}

TEST_CASE("report CSVs have headers when empty and impacts add up") {
  std::ostringstream m, t, i;
  write_metrics_csv(m, {});
  write_timeline_csv(t, {});
  write_impact_csv(i, {});
  CHECK(m.str().rfind("run,kernel,scheme,ipc", 0) == 0);
  for (const std::string& s : {m.str(), t.str(), i.str()}) CHECK(std::count(s.begin(), s.end(), '\n') == 1);

  GpuConfig c = desk_config();
  c.scheme = Scheme::StaticFuse;
  c.reconfig.sample_window = 2000;
  const RunReport r = run(c, small_kernel(2));
  REQUIRE(r.sampled);
  double sum = 0;
  for (const auto& [_, v] : impact_magnitudes(r.model, r.metrics)) sum += v;
  CHECK(sum == doctest::Approx(r.logit).epsilon(1e-12));

  const auto dir = std::filesystem::temp_directory_path() / "amoeba_report_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  save_report(dir / "a.json", r);
  const auto runs = load_reports(dir);
  REQUIRE(runs.size() == 1);
  CHECK(runs[0].total_cycles == r.total_cycles);
  CHECK(runs[0].ipc == r.ipc);
  report(runs, dir / "out");
  CHECK(std::filesystem::exists(dir / "out" / "impact.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep rejects budgets that do not divide") {
  const KernelSpec k = small_kernel(1);
  CHECK_THROWS_AS(sweep_scaling(desk_config(), k, 8, {3}, false), ConfigError);
  CHECK_THROWS_AS(sweep_scaling(full_config(), k, 64, {16, 25, 36, 64}, false), ConfigError);
  const auto pts = sweep_scaling(desk_config(), k, 8, {8, 4}, true);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].normalized_ipc == 1.0);
  CHECK(pts[1].scale == 2);
  CHECK(pts[1].report.avg_noc_latency == 1.0);
}
