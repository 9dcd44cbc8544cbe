#include "amoeba/workload.h"

#include <algorithm>
#include <cassert>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace amoeba {

namespace {

constexpr std::uint32_t kComputeLatency = 4;
constexpr std::uint32_t kFullMask = 0xffffffffu;
// Re-touched lines come from CTAs within this distance of the accessing CTA.
constexpr int kRetouchCtaRadius = 8;
constexpr std::uint64_t kMaxRetouchLag = 4;

enum Salt : std::uint64_t {
  kSaltKinds = 0x6b696e6473,
  kSaltDiverge = 0x646976,
  kSaltTakenBits = 0x74616b656e,
  kSaltUniform = 0x756e69,
  kSaltLocality = 0x6c6f63,
  kSaltSource = 0x737263,
};

void check_fraction(double v, const char* field) {
  if (!(v >= 0.0 && v <= 1.0))
    throw ConfigError(std::string(field) + " must be in [0,1], got " + std::to_string(v));
}

void check_positive(std::uint64_t v, const char* field) {
  if (v == 0) throw ConfigError(std::string(field) + " must be positive");
}

// Exact-count kind sequence, shuffled with a counter-based Fisher-Yates.
std::vector<InstrKind> kind_sequence(const KernelSpec& spec) {
  const std::uint32_t n = spec.instructions_per_warp;
  auto count = [n](double rate) {
    return static_cast<std::uint32_t>(std::llround(rate * n));
  };
  std::uint32_t loads = count(spec.load_rate);
  std::uint32_t stores = count(spec.store_rate);
  std::uint32_t branches = count(spec.branch_rate);
  while (loads + stores + branches > n) {
    // Rounding can overshoot by one or two when the rates sum to 1.
    if (branches > 0) --branches;
    else if (stores > 0) --stores;
    else --loads;
  }
  std::vector<InstrKind> kinds;
  kinds.reserve(n);
  kinds.insert(kinds.end(), loads, InstrKind::Load);
  kinds.insert(kinds.end(), stores, InstrKind::Store);
  kinds.insert(kinds.end(), branches, InstrKind::Branch);
  kinds.resize(n, InstrKind::Compute);
  for (std::uint32_t i = n; i > 1; --i) {
    std::uint64_t j = hash_key(spec.seed, kSaltKinds, i) % i;
    std::swap(kinds[i - 1], kinds[j]);
  }
  return kinds;
}

// reconv position for every branch; bodies nest inside enclosing bodies.
std::vector<std::uint32_t> branch_structure(const KernelSpec& spec,
                                            const std::vector<InstrKind>& kinds) {
  const std::uint32_t n = spec.instructions_per_warp;
  std::vector<std::uint32_t> reconv(n, 0);
  std::vector<std::uint32_t> open;
  for (std::uint32_t i = 0; i < n; ++i) {
    while (!open.empty() && open.back() <= i) open.pop_back();
    if (kinds[i] != InstrKind::Branch) continue;
    std::uint32_t limit = open.empty() ? n : open.back();
    std::uint32_t r = std::min<std::uint64_t>(
        std::uint64_t{i} + 1 + spec.divergent_path_extra_insns, limit);
    reconv[i] = r;
    if (r > i + 1) open.push_back(r);
  }
  return reconv;
}

std::uint32_t taken_mask_for(const KernelSpec& spec, std::uint32_t cta, std::uint64_t gwarp,
                             std::uint32_t pos, std::uint32_t active) {
  if (active == 0) return 0;
  bool high_phase = spec.phase_len == 0 || (pos / spec.phase_len) % 2 == 1;
  double p = high_phase ? spec.branch_divergence_prob : 0.0;
  if (p > 0.0 && std::popcount(active) >= 2 &&
      unit_from_hash(hash_key(spec.seed, kSaltDiverge, gwarp, pos)) < p) {
    // Lanes decide in runs of 8, like a thread-index range test.
    const std::uint64_t bits = hash_key(spec.seed, kSaltTakenBits, gwarp, pos);
    std::uint32_t taken = 0;
    for (unsigned g = 0; g < kWarpSize / 8; ++g)
      if (bits >> g & 1) taken |= 0xffu << (8 * g);
    taken &= active;
    std::uint32_t lowest = active & (~active + 1);
    if (taken == active) taken &= ~lowest;
    if (taken == 0) taken = lowest;
    return taken;
  }
  // Uniform outcome shared by the whole CTA.
  bool take = hash_key(spec.seed, kSaltUniform, cta, pos) & 1;
  return take ? active : 0;
}

std::vector<Addr> lane_addresses(const KernelSpec& spec, std::uint32_t cta, std::uint32_t warp,
                                 std::uint32_t pos, std::uint64_t mem_ordinal,
                                 std::uint32_t active) {
  const std::uint64_t total_warps = std::uint64_t{spec.cta_count} * spec.warps_per_cta;
  const std::uint64_t gwarp = std::uint64_t{cta} * spec.warps_per_cta + warp;
  std::uint64_t src_cta = cta;
  std::uint64_t src_warp = warp;
  std::uint64_t ordinal = mem_ordinal;
  if (spec.locality > 0.0 &&
      unit_from_hash(hash_key(spec.seed, kSaltLocality, gwarp, pos)) < spec.locality) {
    std::uint64_t h = hash_key(spec.seed, kSaltSource, gwarp, pos);
    std::int64_t offset = static_cast<std::int64_t>(h % (2 * kRetouchCtaRadius + 1)) -
                          kRetouchCtaRadius;
    std::int64_t c = std::clamp<std::int64_t>(std::int64_t{cta} + offset, 0,
                                              std::int64_t{spec.cta_count} - 1);
    src_cta = static_cast<std::uint64_t>(c);
    src_warp = (h >> 8) % spec.warps_per_cta;
    std::uint64_t lag = 1 + (h >> 24) % kMaxRetouchLag;
    ordinal = mem_ordinal >= lag ? mem_ordinal - lag : 0;
  }
  const std::uint64_t src_gwarp = src_cta * spec.warps_per_cta + src_warp;
  std::vector<Addr> addrs(kWarpSize, kNullAddr);
  for (unsigned lane = 0; lane < kWarpSize; ++lane) {
    if (!(active >> lane & 1u)) continue;
    std::uint64_t element = (ordinal * total_warps + src_gwarp) * kWarpSize + lane;
    addrs[lane] = (element * spec.access_stride_bytes) % spec.access_footprint_bytes;
  }
  return addrs;
}

}  // namespace

const char* to_string(InstrKind kind) {
  switch (kind) {
    case InstrKind::Compute: return "COMPUTE";
    case InstrKind::Load: return "LOAD";
    case InstrKind::Store: return "STORE";
    case InstrKind::Branch: return "BRANCH";
    case InstrKind::Barrier: return "BARRIER";
    case InstrKind::Exit: return "EXIT";
  }
  return "?";
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t hash_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c,
                       std::uint64_t d) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return mix64(h ^ d);
}

double unit_from_hash(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

void validate(const KernelSpec& spec) {
  check_positive(spec.cta_count, "cta_count");
  check_positive(spec.warps_per_cta, "warps_per_cta");
  check_positive(spec.instructions_per_warp, "instructions_per_warp");
  check_fraction(spec.load_rate, "load_rate");
  check_fraction(spec.store_rate, "store_rate");
  check_fraction(spec.branch_rate, "branch_rate");
  check_fraction(spec.branch_divergence_prob, "branch_divergence_prob");
  check_fraction(spec.locality, "locality");
  check_positive(spec.access_stride_bytes, "access_stride_bytes");
  check_positive(spec.access_footprint_bytes, "access_footprint_bytes");
  if (spec.load_rate + spec.store_rate + spec.branch_rate > 1.0 + 1e-12)
    throw ConfigError("load_rate + store_rate + branch_rate must not exceed 1");
  if (spec.phase_len != 0 && spec.phase_len >= spec.instructions_per_warp)
    throw ConfigError("phase_len must be smaller than instructions_per_warp");
}

KernelGenerator::KernelGenerator(const KernelSpec& spec) : spec_(spec) {
  validate(spec_);
  const std::uint32_t n = spec_.instructions_per_warp;
  kinds_ = kind_sequence(spec_);
  reconv_ = branch_structure(spec_, kinds_);
  mem_ordinal_.assign(n, 0);
  std::uint64_t ordinal = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (kinds_[i] == InstrKind::Load || kinds_[i] == InstrKind::Store) mem_ordinal_[i] = ordinal++;
  }
}

CtaStream KernelGenerator::cta(std::uint32_t cta) const {
  assert(cta < spec_.cta_count);
  const std::uint32_t n = spec_.instructions_per_warp;
  CtaStream out;
  out.cta_id = cta;
  out.streams.resize(spec_.warps_per_cta);
  for (std::uint32_t w = 0; w < spec_.warps_per_cta; ++w) {
    const std::uint64_t gwarp = std::uint64_t{cta} * spec_.warps_per_cta + w;
    InstrStream& stream = out.streams[w];
    stream.resize(n + 1);
    // (end position, mask) of the enclosing taken bodies.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> bodies;
    for (std::uint32_t i = 0; i < n; ++i) {
      while (!bodies.empty() && bodies.back().first <= i) bodies.pop_back();
      const std::uint32_t active = bodies.empty() ? kFullMask : bodies.back().second;
      AbstractInstr& ins = stream[i];
      ins.kind = kinds_[i];
      switch (ins.kind) {
        case InstrKind::Compute:
          ins.latency = kComputeLatency;
          break;
        case InstrKind::Branch:
          ins.reconv = reconv_[i];
          ins.taken_mask = taken_mask_for(spec_, cta, gwarp, i, active);
          if (reconv_[i] > i + 1) bodies.emplace_back(reconv_[i], ins.taken_mask);
          break;
        case InstrKind::Load:
        case InstrKind::Store:
          ins.addrs = lane_addresses(spec_, cta, w, i, mem_ordinal_[i], active);
          break;
        default:
          break;
      }
    }
    stream[n].kind = InstrKind::Exit;
  }
  return out;
}

std::vector<CtaStream> generate_kernel(const KernelSpec& spec) {
  KernelGenerator gen(spec);
  std::vector<CtaStream> ctas;
  ctas.reserve(spec.cta_count);
  for (std::uint32_t cta = 0; cta < spec.cta_count; ++cta) ctas.push_back(gen.cta(cta));
  return ctas;
}

KernelSpec divergence_phased_kernel(const KernelSpec& base, std::uint32_t phase_len) {
  KernelSpec out = base;
  out.phase_len = phase_len;
  out.name = base.name + "_phased";
  validate(out);
  return out;
}

void to_json(nlohmann::json& j, const KernelSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"cta_count", s.cta_count},
                     {"warps_per_cta", s.warps_per_cta},
                     {"instructions_per_warp", s.instructions_per_warp},
                     {"load_rate", s.load_rate},
                     {"store_rate", s.store_rate},
                     {"branch_rate", s.branch_rate},
                     {"branch_divergence_prob", s.branch_divergence_prob},
                     {"divergent_path_extra_insns", s.divergent_path_extra_insns},
                     {"access_stride_bytes", s.access_stride_bytes},
                     {"access_footprint_bytes", s.access_footprint_bytes},
                     {"locality", s.locality},
                     {"seed", s.seed},
                     {"phase_len", s.phase_len}};
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* field, T& out, bool required) {
  auto it = j.find(field);
  if (it == j.end()) {
    if (required) throw ConfigError(std::string("missing field '") + field + "'");
    return;
  }
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned())
        throw ConfigError(std::string("field '") + field + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number())
        throw ConfigError(std::string("field '") + field + "' must be a number");
    }
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("field '") + field + "' has the wrong type");
  }
}

}  // namespace

KernelSpec kernel_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("kernel spec must be a JSON object");
  KernelSpec s;
  read_field(j, "name", s.name, false);
  read_field(j, "cta_count", s.cta_count, true);
  read_field(j, "warps_per_cta", s.warps_per_cta, true);
  read_field(j, "instructions_per_warp", s.instructions_per_warp, true);
  read_field(j, "load_rate", s.load_rate, true);
  read_field(j, "store_rate", s.store_rate, true);
  read_field(j, "branch_rate", s.branch_rate, true);
  read_field(j, "branch_divergence_prob", s.branch_divergence_prob, true);
  read_field(j, "divergent_path_extra_insns", s.divergent_path_extra_insns, true);
  read_field(j, "access_stride_bytes", s.access_stride_bytes, true);
  read_field(j, "access_footprint_bytes", s.access_footprint_bytes, true);
  read_field(j, "locality", s.locality, true);
  read_field(j, "seed", s.seed, true);
  read_field(j, "phase_len", s.phase_len, false);
  validate(s);
  return s;
}

KernelSpec load_kernel_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open kernel file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("kernel file " + path.string() + ": " + e.what());
  }
  return kernel_from_json(j);
}

void write_kernel_file(const std::filesystem::path& path, const KernelSpec& spec) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write kernel file " + path.string());
  nlohmann::json j = spec;
  out << j.dump(2) << '\n';
}

}  // namespace amoeba
