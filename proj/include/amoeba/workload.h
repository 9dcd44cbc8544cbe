// Synthetic kernel description and the per-CTA abstract instruction streams
// generated from it.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace amoeba {

inline constexpr unsigned kWarpSize = 32;
inline constexpr unsigned kLineSize = 128;

using Addr = std::uint64_t;
inline constexpr Addr kNullAddr = ~Addr{0};

// User-facing input problems (bad files, invalid specs, bad configs).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InstrKind : std::uint8_t { Compute, Load, Store, Branch, Barrier, Exit };

const char* to_string(InstrKind kind);

struct AbstractInstr {
  InstrKind kind = InstrKind::Compute;
  std::uint32_t latency = 0;     // COMPUTE
  std::uint32_t reconv = 0;      // BRANCH: first position after the taken body
  std::uint32_t taken_mask = 0;  // BRANCH: lanes entering the body
  std::vector<Addr> addrs;       // LOAD/STORE: kWarpSize entries, kNullAddr if inactive

  bool operator==(const AbstractInstr&) const = default;
};

using InstrStream = std::vector<AbstractInstr>;

struct CtaStream {
  std::uint32_t cta_id = 0;
  std::vector<InstrStream> streams;  // one per warp

  bool operator==(const CtaStream&) const = default;
};

struct KernelSpec {
  std::string name = "kernel";
  std::uint32_t cta_count = 1;
  std::uint32_t warps_per_cta = 1;
  std::uint32_t instructions_per_warp = 1;
  double load_rate = 0.0;
  double store_rate = 0.0;
  double branch_rate = 0.0;
  double branch_divergence_prob = 0.0;
  std::uint32_t divergent_path_extra_insns = 0;
  std::uint32_t access_stride_bytes = 4;
  std::uint64_t access_footprint_bytes = 1 << 20;
  double locality = 0.0;
  std::uint64_t seed = 1;
  // Alternating zero/high divergence phases of this many positions; 0 = off.
  std::uint32_t phase_len = 0;

  std::uint64_t total_threads() const {
    return std::uint64_t{cta_count} * warps_per_cta * kWarpSize;
  }

  bool operator==(const KernelSpec&) const = default;
};

// Throws ConfigError naming the offending field.
void validate(const KernelSpec& spec);

std::vector<CtaStream> generate_kernel(const KernelSpec& spec);

// Builds CTAs one at a time; the simulator generates each CTA at dispatch.
class KernelGenerator {
 public:
  explicit KernelGenerator(const KernelSpec& spec);
  CtaStream cta(std::uint32_t cta) const;
  const KernelSpec& spec() const { return spec_; }

 private:
  KernelSpec spec_;
  std::vector<InstrKind> kinds_;
  std::vector<std::uint32_t> reconv_;
  std::vector<std::uint64_t> mem_ordinal_;
};

// Same kernel with divergence confined to every other window of phase_len
// positions, starting with a divergence-free window.
KernelSpec divergence_phased_kernel(const KernelSpec& base, std::uint32_t phase_len);

KernelSpec load_kernel_file(const std::filesystem::path& path);
void write_kernel_file(const std::filesystem::path& path, const KernelSpec& spec);

void to_json(nlohmann::json& j, const KernelSpec& spec);
// Requires every mandatory field; throws ConfigError naming the first problem.
KernelSpec kernel_from_json(const nlohmann::json& j);

// Counter-based hashing used for all stochastic choices.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0, std::uint64_t d = 0);
double unit_from_hash(std::uint64_t h);

}  // namespace amoeba
