// Scalability predictor: metric sampling, the binary logistic model, impact
// breakdown and an offline trainer.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "amoeba/smcore.h"

namespace amoeba {

inline constexpr std::size_t kMetricCount = 10;

struct MetricVector {
  double control_divergent = 0;
  double coalescing = 0;
  double l1d_miss = 0;
  double l1i_miss = 0;
  double l1c_miss = 0;
  double mshr = 0;
  double load_inst_rate = 0;
  double store_inst_rate = 0;
  double noc = 0;
  double concurrent_cta = 0;
  double avg_noc_latency = 0;  // reported, not part of the model

  static const std::array<const char*, kMetricCount>& names();
  std::array<double, kMetricCount> values() const;
  static MetricVector from_values(std::span<const double> v);

  bool operator==(const MetricVector&) const = default;
};

// Throws ConfigError naming the first field out of range.
void check_ranges(const MetricVector& x, double max_ctas);

struct PredictorModel {
  double constant = 0;
  std::array<double, kMetricCount> coefficients{};

  static PredictorModel defaults();
  bool operator==(const PredictorModel&) const = default;
};

nlohmann::json model_to_json(const PredictorModel& m);
PredictorModel model_from_json(const nlohmann::json& j);
PredictorModel load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const PredictorModel& m);

enum class Decision : std::uint8_t { ScaleOut, ScaleUp };
const char* to_string(Decision d);

double logit(const PredictorModel& m, const MetricVector& x);
double sigmoid(double z);
double probability(const PredictorModel& m, const MetricVector& x);
// 1 - P evaluated directly, so it keeps full precision when P is near 1.
double probability_complement(const PredictorModel& m, const MetricVector& x);
Decision predict_fuse(const PredictorModel& m, const MetricVector& x);

// "constant" first, then one entry per metric; the entries sum to the logit.
std::vector<std::pair<std::string, double>> impact_magnitudes(const PredictorModel& m,
                                                              const MetricVector& x);
// Each entry divided by the largest absolute entry.
std::vector<std::pair<std::string, double>> normalized_impacts(
    const std::vector<std::pair<std::string, double>>& impacts);

// Counters accumulated over a sampling window.
struct SimCounters {
  SmCounters sm;
  std::uint64_t l1d_hits = 0;
  std::uint64_t l1d_misses_new = 0;
  std::uint64_t l1d_misses_merged = 0;
  std::uint64_t l1i_accesses = 0;
  std::uint64_t l1i_misses = 0;
  std::uint64_t noc_flits = 0;
  std::uint64_t noc_packets = 0;
  std::uint64_t noc_latency = 0;
  unsigned live_nodes = 1;
  unsigned sm_count = 1;

  SimCounters operator-(const SimCounters& o) const;
};

class SamplingInconclusive : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

MetricVector sample_metrics(const SimCounters& window, std::uint64_t window_cycles);

struct TrainingSample {
  MetricVector metrics;
  bool label = false;
};

struct TrainParams {
  double lr = 0.5;
  unsigned epochs = 3000;
  double l2 = 1e-4;
};

struct TrainResult {
  PredictorModel model;
  double accuracy = 0;
};

// Mean L2-penalized log-likelihood over standardized features; w[0] is the
// intercept and is not penalized.
class LogisticObjective {
 public:
  LogisticObjective(std::span<const TrainingSample> samples, double l2);

  std::size_t dim() const { return kMetricCount + 1; }
  double value(std::span<const double> w) const;
  std::vector<double> gradient(std::span<const double> w) const;
  PredictorModel to_model(std::span<const double> w) const;

 private:
  std::vector<std::array<double, kMetricCount>> z_;
  std::vector<double> y_;
  std::array<double, kMetricCount> mean_{};
  std::array<double, kMetricCount> scale_{};
  double l2_;
};

TrainResult train(std::span<const TrainingSample> samples, const TrainParams& params = {});
double accuracy(const PredictorModel& m, std::span<const TrainingSample> samples);

// CSV with one column per metric name; "label" is required for samples.
std::vector<TrainingSample> read_samples_csv(const std::filesystem::path& path);
void write_samples_csv(const std::filesystem::path& path, std::span<const TrainingSample> samples);
std::vector<MetricVector> read_metrics_csv(const std::filesystem::path& path);

}  // namespace amoeba
