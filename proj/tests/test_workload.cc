#include <filesystem>

#include "doctest.h"
#include "oracles.h"

using namespace amoeba;

namespace {

KernelSpec mixed() {
  KernelSpec k;
  k.name = "mixed";
  k.cta_count = 3;
  k.warps_per_cta = 2;
  k.instructions_per_warp = 200;
  k.load_rate = 0.2;
  k.store_rate = 0.1;
  k.branch_rate = 0.1;
  k.branch_divergence_prob = 0.5;
  k.divergent_path_extra_insns = 4;
  k.seed = 99;
  return k;
}

}  // namespace

TEST_CASE("validate rejects bad fields") {
  KernelSpec k = mixed();
  CHECK_NOTHROW(validate(k));
  k.load_rate = 1.5;
  CHECK_THROWS_AS(validate(k), ConfigError);
  k = mixed();
  k.load_rate = 0.5;
  k.store_rate = 0.4;
  k.branch_rate = 0.2;
  CHECK_THROWS_AS(validate(k), ConfigError);
  k = mixed();
  k.cta_count = 0;
  CHECK_THROWS_AS(validate(k), ConfigError);
  k = mixed();
  k.phase_len = 200;
  CHECK_THROWS_AS(validate(k), ConfigError);
}

TEST_CASE("generation is deterministic and seed sensitive") {
  const KernelSpec k = mixed();
  CHECK(generate_kernel(k) == generate_kernel(k));
  KernelSpec other = k;
  other.seed = 100;
  CHECK_FALSE(generate_kernel(k) == generate_kernel(other));
  KernelGenerator gen(k);
  CHECK(gen.cta(2) == generate_kernel(k)[2]);
}

TEST_CASE("kind counts follow the rates and every stream ends in exit") {
  const KernelSpec k = mixed();
  for (const CtaStream& cta : generate_kernel(k)) {
    for (const InstrStream& s : cta.streams) {
      REQUIRE(s.size() == k.instructions_per_warp + 1);
      CHECK(s.back().kind == InstrKind::Exit);
      unsigned loads = 0, stores = 0, branches = 0;
      for (const auto& ins : s) {
        loads += ins.kind == InstrKind::Load;
        stores += ins.kind == InstrKind::Store;
        branches += ins.kind == InstrKind::Branch;
      }
      CHECK(loads == 40);
      CHECK(stores == 20);
      CHECK(branches == 20);
    }
  }
}

TEST_CASE("branch structure is well formed") {
  const KernelSpec k = mixed();
  for (const CtaStream& cta : generate_kernel(k))
    for (const InstrStream& s : cta.streams)
      for (std::uint32_t i = 0; i < s.size(); ++i) {
        if (s[i].kind != InstrKind::Branch) continue;
        CHECK(s[i].reconv > i);
        CHECK(s[i].reconv <= k.instructions_per_warp);
      }
}

TEST_CASE("inactive lanes carry null addresses") {
  KernelSpec k = mixed();
  k.branch_divergence_prob = 1.0;
  k.branch_rate = 0.3;
  bool saw_null = false;
  for (const CtaStream& cta : generate_kernel(k))
    for (const InstrStream& s : cta.streams)
      for (const auto& ins : s)
        if (ins.kind == InstrKind::Load)
          for (Addr a : ins.addrs) saw_null |= a == kNullAddr;
  CHECK(saw_null);
}

TEST_CASE("phased kernel keeps the first window free of divergence") {
  KernelSpec k = mixed();
  k.instructions_per_warp = 400;
  k.branch_divergence_prob = 1.0;
  const KernelSpec p = divergence_phased_kernel(k, 100);
  CHECK(p.phase_len == 100);
  unsigned early = 0, late = 0;
  for (const CtaStream& cta : generate_kernel(p))
    for (const InstrStream& s : cta.streams)
      for (std::uint32_t i = 0; i < s.size(); ++i) {
        const auto& ins = s[i];
        if (ins.kind != InstrKind::Branch) continue;
        const bool split = ins.taken_mask != 0 && ins.taken_mask != 0xffffffffu;
        if ((i / 100) % 2 == 0) early += split;
        else late += split;
      }
  CHECK(early == 0);
  CHECK(late > 0);
}

TEST_CASE("kernel files round trip and report missing fields") {
  const KernelSpec k = mixed();
  const auto path = std::filesystem::temp_directory_path() / "amoeba_kernel_rt.json";
  write_kernel_file(path, k);
  CHECK(load_kernel_file(path) == k);
  std::filesystem::remove(path);

  nlohmann::json j = k;
  j.erase("load_rate");
  CHECK_THROWS_WITH_AS(kernel_from_json(j), doctest::Contains("load_rate"), ConfigError);
  CHECK_THROWS_AS(load_kernel_file("/nonexistent/k.json"), ConfigError);
}

TEST_CASE("reference interpreter counts the taken bodies") {
  KernelSpec k = mixed();
  k.branch_rate = 0;
  k.branch_divergence_prob = 0;
  for (std::uint32_t n : oracle::reference_retired(k)) CHECK(n == k.instructions_per_warp + 1);
}
