#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.h"

using namespace amoeba;

namespace {

MetricVector random_metrics(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, kMetricCount> v{};
  for (auto& x : v) x = u(rng);
  v[kMetricCount - 1] *= 8;
  return MetricVector::from_values(v);
}

}  // namespace

TEST_CASE("zero vector gives the constant") {
  const PredictorModel m = PredictorModel::defaults();
  const MetricVector zero;
  CHECK(logit(m, zero) == -73.635);
  CHECK(predict_fuse(m, zero) == Decision::ScaleOut);
}

TEST_CASE("probability, odds and logit agree") {
  std::mt19937_64 rng(1);
  PredictorModel m = PredictorModel::defaults();
  m.constant = -400;
  for (int i = 0; i < 1000; ++i) {
    const MetricVector x = random_metrics(rng);
    const double z = logit(m, x);
    const double p = probability(m, x);
    const double q = probability_complement(m, x);
    CHECK(p + q == doctest::Approx(1.0).epsilon(1e-12));
    if (std::fabs(z) < 30) {
      CHECK(std::log(p / q) == doctest::Approx(z).epsilon(1e-9));
      CHECK(p / q == doctest::Approx(std::exp(z)).epsilon(1e-9));
    }
    CHECK((predict_fuse(m, x) == Decision::ScaleUp) == (z > 0));
  }
}

TEST_CASE("impacts sum to the logit and normalize to unit peak") {
  std::mt19937_64 rng(2);
  const PredictorModel m = PredictorModel::defaults();
  const MetricVector x = random_metrics(rng);
  const auto imp = impact_magnitudes(m, x);
  REQUIRE(imp.size() == kMetricCount + 1);
  CHECK(imp[0].first == "constant");
  double sum = 0;
  for (const auto& [_, v] : imp) sum += v;
  CHECK(sum == doctest::Approx(logit(m, x)).epsilon(1e-12));
  double peak = 0;
  for (const auto& [_, v] : normalized_impacts(imp)) peak = std::max(peak, std::fabs(v));
  CHECK(peak == 1.0);
}

TEST_CASE("model JSON round trips and rejects unknown names") {
  const PredictorModel m = PredictorModel::defaults();
  CHECK(model_from_json(model_to_json(m)) == m);
  auto j = model_to_json(m);
  j["coefficients"]["bogus"] = 1.0;
  CHECK_THROWS_AS(model_from_json(j), ConfigError);
  j = model_to_json(m);
  j["coefficients"].erase("noc");
  CHECK_THROWS_WITH_AS(model_from_json(j), doctest::Contains("noc"), ConfigError);
}

TEST_CASE("metric ranges are checked") {
  MetricVector x;
  x.concurrent_cta = 4;
  CHECK_NOTHROW(check_ranges(x, 8));
  x.l1d_miss = 1.5;
  CHECK_THROWS_WITH_AS(check_ranges(x, 8), doctest::Contains("l1d_miss"), ConfigError);
}

TEST_CASE("empty window is inconclusive") {
  CHECK_THROWS_AS(sample_metrics(SimCounters{}, 100), SamplingInconclusive);
  SimCounters c;
  c.sm.warp_insns = 10;
  c.sm.load_insns = 5;
  c.sm.resident_cta_cycles = 400;
  c.sm_count = 2;
  const MetricVector x = sample_metrics(c, 100);
  CHECK(x.load_inst_rate == 0.5);
  CHECK(x.concurrent_cta == 2.0);
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(3);
  std::vector<TrainingSample> s;
  for (int i = 0; i < 200; ++i) s.push_back({random_metrics(rng), rng() % 2 == 0});
  const LogisticObjective obj(s, 1e-3);
  std::vector<double> w(obj.dim());
  for (auto& x : w) x = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto g = obj.gradient(w);
  const auto n = oracle::numeric_gradient([&](std::span<const double> v) { return obj.value(v); }, w);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(g[i] == doctest::Approx(n[i]).epsilon(1e-6));
}

TEST_CASE("trainer recovers a separable rule and CSV round trips") {
  std::mt19937_64 rng(4);
  PredictorModel hidden;
  hidden.constant = -1.0;
  hidden.coefficients = {3, -2, 1, 0, 0, 2, -1, 0, 1, 0.1};
  std::vector<TrainingSample> s;
  for (int i = 0; i < 600; ++i) {
    const MetricVector x = random_metrics(rng);
    s.push_back({x, logit(hidden, x) > 0});
  }
  const TrainResult r = train(s);
  CHECK(r.accuracy >= 0.95);
  CHECK(accuracy(r.model, s) == r.accuracy);

  const auto path = std::filesystem::temp_directory_path() / "amoeba_samples.csv";
  write_samples_csv(path, s);
  const auto back = read_samples_csv(path);
  REQUIRE(back.size() == s.size());
  CHECK(back[7].label == s[7].label);
  CHECK(back[7].metrics.coalescing == s[7].metrics.coalescing);
  CHECK(read_metrics_csv(path).size() == s.size());
  std::filesystem::remove(path);

  std::vector<TrainingSample> one_class(10, TrainingSample{MetricVector{}, true});
  CHECK_THROWS_AS(train(one_class), ConfigError);
}

TEST_CASE("CSV errors name the line") {
  const auto path = std::filesystem::temp_directory_path() / "amoeba_bad.csv";
  {
    std::ofstream f(path);
    f << "control_divergent,label\n0.1,1\n0.2\n";
  }
  CHECK_THROWS_AS(read_samples_csv(path), ConfigError);
  std::filesystem::remove(path);
}
