#include "amoeba/predictor.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace amoeba {

const std::array<const char*, kMetricCount>& MetricVector::names() {
  static const std::array<const char*, kMetricCount> n = {
      "control_divergent", "coalescing",     "l1d_miss",        "l1i_miss", "l1c_miss",
      "mshr",              "load_inst_rate", "store_inst_rate", "noc",      "concurrent_cta"};
  return n;
}

std::array<double, kMetricCount> MetricVector::values() const {
  return {control_divergent, coalescing,     l1d_miss,        l1i_miss, l1c_miss,
          mshr,              load_inst_rate, store_inst_rate, noc,      concurrent_cta};
}

MetricVector MetricVector::from_values(std::span<const double> v) {
  assert(v.size() == kMetricCount);
  MetricVector x;
  x.control_divergent = v[0];
  x.coalescing = v[1];
  x.l1d_miss = v[2];
  x.l1i_miss = v[3];
  x.l1c_miss = v[4];
  x.mshr = v[5];
  x.load_inst_rate = v[6];
  x.store_inst_rate = v[7];
  x.noc = v[8];
  x.concurrent_cta = v[9];
  return x;
}

void check_ranges(const MetricVector& x, double max_ctas) {
  const auto v = x.values();
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    const double hi = i == kMetricCount - 1 ? max_ctas : 1.0;
    if (!(v[i] >= 0.0 && v[i] <= hi))
      throw ConfigError(std::string(MetricVector::names()[i]) + " out of range: " +
                        std::to_string(v[i]));
  }
}

PredictorModel PredictorModel::defaults() {
  PredictorModel m;
  m.constant = -73.635;
  m.coefficients = {444.628, 2057.050, -313.838, 1674.513, -67.277,
                    -102.971, -680.786, -804.7, -8.301, 1.414};
  return m;
}

nlohmann::json model_to_json(const PredictorModel& m) {
  nlohmann::json coeffs = nlohmann::json::object();
  for (std::size_t i = 0; i < kMetricCount; ++i) coeffs[MetricVector::names()[i]] = m.coefficients[i];
  return {{"constant", m.constant}, {"coefficients", coeffs}};
}

PredictorModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model must be a JSON object");
  if (!j.contains("constant") || !j["constant"].is_number())
    throw ConfigError("model: missing numeric 'constant'");
  if (!j.contains("coefficients") || !j["coefficients"].is_object())
    throw ConfigError("model: missing 'coefficients' object");
  const auto& c = j["coefficients"];
  PredictorModel m;
  m.constant = j["constant"].get<double>();
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    const char* name = MetricVector::names()[i];
    if (!c.contains(name) || !c[name].is_number())
      throw ConfigError(std::string("model: missing coefficient '") + name + "'");
    m.coefficients[i] = c[name].get<double>();
  }
  for (const auto& [key, _] : c.items()) {
    const auto& n = MetricVector::names();
    if (std::find_if(n.begin(), n.end(), [&](const char* s) { return key == s; }) == n.end())
      throw ConfigError("model: unknown coefficient '" + key + "'");
  }
  return m;
}

PredictorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("model file " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

void save_model(const std::filesystem::path& path, const PredictorModel& m) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model file " + path.string());
  out << model_to_json(m).dump(2) << "\n";
}

const char* to_string(Decision d) { return d == Decision::ScaleUp ? "SCALE_UP" : "SCALE_OUT"; }

double logit(const PredictorModel& m, const MetricVector& x) {
  const auto v = x.values();
  double z = m.constant;
  for (std::size_t i = 0; i < kMetricCount; ++i) z += m.coefficients[i] * v[i];
  return z;
}

double sigmoid(double z) {
  z = std::clamp(z, -700.0, 700.0);
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double probability(const PredictorModel& m, const MetricVector& x) { return sigmoid(logit(m, x)); }

double probability_complement(const PredictorModel& m, const MetricVector& x) {
  return sigmoid(-logit(m, x));
}

Decision predict_fuse(const PredictorModel& m, const MetricVector& x) {
  return logit(m, x) > 0.0 ? Decision::ScaleUp : Decision::ScaleOut;
}

std::vector<std::pair<std::string, double>> impact_magnitudes(const PredictorModel& m,
                                                              const MetricVector& x) {
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("constant", m.constant);
  const auto v = x.values();
  for (std::size_t i = 0; i < kMetricCount; ++i)
    out.emplace_back(MetricVector::names()[i], m.coefficients[i] * v[i]);
  return out;
}

std::vector<std::pair<std::string, double>> normalized_impacts(
    const std::vector<std::pair<std::string, double>>& impacts) {
  double peak = 0;
  for (const auto& [_, v] : impacts) peak = std::max(peak, std::fabs(v));
  auto out = impacts;
  if (peak > 0)
    for (auto& [_, v] : out) v /= peak;
  return out;
}

SimCounters SimCounters::operator-(const SimCounters& o) const {
  SimCounters d = *this;
  d.sm = sm - o.sm;
  d.l1d_hits -= o.l1d_hits;
  d.l1d_misses_new -= o.l1d_misses_new;
  d.l1d_misses_merged -= o.l1d_misses_merged;
  d.l1i_accesses -= o.l1i_accesses;
  d.l1i_misses -= o.l1i_misses;
  d.noc_flits -= o.noc_flits;
  d.noc_packets -= o.noc_packets;
  d.noc_latency -= o.noc_latency;
  return d;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

}  // namespace

MetricVector sample_metrics(const SimCounters& w, std::uint64_t window_cycles) {
  if (w.sm.warp_insns == 0 || window_cycles == 0)
    throw SamplingInconclusive("no instructions issued in the sampling window");
  MetricVector x;
  x.control_divergent =
      ratio(w.sm.inactive_thread_cycles, w.sm.active_thread_cycles + w.sm.inactive_thread_cycles);
  x.coalescing = ratio(w.sm.coalesced_requests, w.sm.lane_accesses);
  const std::uint64_t misses = w.l1d_misses_new + w.l1d_misses_merged;
  x.l1d_miss = ratio(misses, w.l1d_hits + misses);
  x.l1i_miss = ratio(w.l1i_misses, w.l1i_accesses);
  x.l1c_miss = 0.0;
  x.mshr = ratio(w.l1d_misses_merged, misses);
  x.load_inst_rate = ratio(w.sm.load_insns, w.sm.warp_insns);
  x.store_inst_rate = ratio(w.sm.store_insns, w.sm.warp_insns);
  x.noc = std::min(1.0, ratio(w.noc_flits, window_cycles * std::max(1u, w.live_nodes)));
  x.concurrent_cta = ratio(w.sm.resident_cta_cycles, window_cycles * std::max(1u, w.sm_count));
  x.avg_noc_latency = ratio(w.noc_latency, w.noc_packets);
  return x;
}

LogisticObjective::LogisticObjective(std::span<const TrainingSample> samples, double l2) : l2_(l2) {
  const std::size_t n = samples.size();
  assert(n > 0);
  for (const TrainingSample& s : samples) {
    const auto v = s.metrics.values();
    for (std::size_t i = 0; i < kMetricCount; ++i) mean_[i] += v[i];
  }
  for (double& m : mean_) m /= static_cast<double>(n);
  std::array<double, kMetricCount> var{};
  for (const TrainingSample& s : samples) {
    const auto v = s.metrics.values();
    for (std::size_t i = 0; i < kMetricCount; ++i) var[i] += (v[i] - mean_[i]) * (v[i] - mean_[i]);
  }
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    const double sd = std::sqrt(var[i] / static_cast<double>(n));
    scale_[i] = sd > 1e-12 ? sd : 0.0;
  }
  z_.reserve(n);
  y_.reserve(n);
  for (const TrainingSample& s : samples) {
    const auto v = s.metrics.values();
    std::array<double, kMetricCount> z{};
    for (std::size_t i = 0; i < kMetricCount; ++i)
      z[i] = scale_[i] > 0 ? (v[i] - mean_[i]) / scale_[i] : 0.0;
    z_.push_back(z);
    y_.push_back(s.label ? 1.0 : 0.0);
  }
}

namespace {

// log(1 + e^t) without overflow.
double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double dot(std::span<const double> w, const std::array<double, kMetricCount>& z) {
  double t = w[0];
  for (std::size_t i = 0; i < kMetricCount; ++i) t += w[i + 1] * z[i];
  return t;
}

}  // namespace

double LogisticObjective::value(std::span<const double> w) const {
  assert(w.size() == dim());
  double ll = 0;
  for (std::size_t k = 0; k < z_.size(); ++k) {
    const double t = dot(w, z_[k]);
    ll += y_[k] * t - softplus(t);
  }
  ll /= static_cast<double>(z_.size());
  double pen = 0;
  for (std::size_t i = 1; i < w.size(); ++i) pen += w[i] * w[i];
  return ll - 0.5 * l2_ * pen;
}

std::vector<double> LogisticObjective::gradient(std::span<const double> w) const {
  assert(w.size() == dim());
  std::vector<double> g(dim(), 0.0);
  for (std::size_t k = 0; k < z_.size(); ++k) {
    const double r = y_[k] - sigmoid(dot(w, z_[k]));
    g[0] += r;
    for (std::size_t i = 0; i < kMetricCount; ++i) g[i + 1] += r * z_[k][i];
  }
  for (double& v : g) v /= static_cast<double>(z_.size());
  for (std::size_t i = 1; i < g.size(); ++i) g[i] -= l2_ * w[i];
  return g;
}

PredictorModel LogisticObjective::to_model(std::span<const double> w) const {
  PredictorModel m;
  m.constant = w[0];
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    if (scale_[i] == 0) continue;
    m.coefficients[i] = w[i + 1] / scale_[i];
    m.constant -= m.coefficients[i] * mean_[i];
  }
  return m;
}

double accuracy(const PredictorModel& m, std::span<const TrainingSample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t ok = 0;
  for (const TrainingSample& s : samples)
    ok += (predict_fuse(m, s.metrics) == Decision::ScaleUp) == s.label;
  return static_cast<double>(ok) / static_cast<double>(samples.size());
}

TrainResult train(std::span<const TrainingSample> samples, const TrainParams& params) {
  if (samples.size() < 2) throw ConfigError("training needs at least 2 samples");
  const auto positives = std::count_if(samples.begin(), samples.end(),
                                       [](const TrainingSample& s) { return s.label; });
  if (positives == 0 || positives == static_cast<long>(samples.size()))
    throw ConfigError("training data has a single label; add runs where the other configuration wins");
  LogisticObjective obj(samples, params.l2);
  std::vector<double> w(obj.dim(), 0.0);
  for (unsigned e = 0; e < params.epochs; ++e) {
    const std::vector<double> g = obj.gradient(w);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += params.lr * g[i];
  }
  TrainResult r;
  r.model = obj.to_model(w);
  r.accuracy = accuracy(r.model, samples);
  return r;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  return out;
}

struct CsvTable {
  std::map<std::string, std::size_t> column;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos)
    throw ConfigError(path.string() + ": empty CSV");
  const auto header = split_csv_line(line);
  for (std::size_t i = 0; i < header.size(); ++i) t.column[header[i]] = i;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto row = split_csv_line(line);
    if (row.size() != header.size())
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " columns");
    t.rows.push_back(std::move(row));
  }
  return t;
}

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number '" + s + "' in column " + what);
  }
}

MetricVector row_metrics(const CsvTable& t, const std::vector<std::string>& row) {
  std::array<double, kMetricCount> v{};
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    const char* name = MetricVector::names()[i];
    auto it = t.column.find(name);
    if (it == t.column.end()) throw ConfigError(std::string("CSV missing column ") + name);
    v[i] = parse_number(row[it->second], name);
  }
  return MetricVector::from_values(v);
}

}  // namespace

std::vector<TrainingSample> read_samples_csv(const std::filesystem::path& path) {
  CsvTable t = read_csv(path);
  auto lab = t.column.find("label");
  if (lab == t.column.end()) throw ConfigError(path.string() + ": missing column label");
  std::vector<TrainingSample> out;
  for (const auto& row : t.rows) {
    TrainingSample s;
    s.metrics = row_metrics(t, row);
    const std::string& l = row[lab->second];
    if (l == "1" || l == "true") s.label = true;
    else if (l == "0" || l == "false") s.label = false;
    else throw ConfigError("label must be 0 or 1, got '" + l + "'");
    out.push_back(s);
  }
  return out;
}

void write_samples_csv(const std::filesystem::path& path, std::span<const TrainingSample> samples) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const char* n : MetricVector::names()) out << n << ",";
  out << "label\n";
  out.precision(17);
  for (const TrainingSample& s : samples) {
    for (double v : s.metrics.values()) out << v << ",";
    out << (s.label ? 1 : 0) << "\n";
  }
}

std::vector<MetricVector> read_metrics_csv(const std::filesystem::path& path) {
  CsvTable t = read_csv(path);
  std::vector<MetricVector> out;
  for (const auto& row : t.rows) out.push_back(row_metrics(t, row));
  return out;
}

}  // namespace amoeba
