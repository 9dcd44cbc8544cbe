#include "amoeba/harness.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <ostream>
#include <stdexcept>

namespace amoeba {

namespace {

using nlohmann::json;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T, class F>
std::vector<T> run_all(std::size_t n, F make) {
  std::vector<std::future<T>> jobs;
  jobs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) jobs.push_back(std::async(std::launch::async, make, i));
  std::vector<T> out;
  out.reserve(n);
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

PairMode pair_mode_from(const std::string& s) {
  for (PairMode m : {PairMode::Baseline, PairMode::Fused, PairMode::SplitRunning})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown pair mode '" + s + "'");
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

}  // namespace

std::vector<SweepPoint> sweep_scaling(const GpuConfig& base, const KernelSpec& kernel,
                                      unsigned budget, const std::vector<unsigned>& sm_counts,
                                      bool perfect_noc) {
  if (sm_counts.empty()) throw ConfigError("sweep needs at least one SM count");
  std::vector<GpuConfig> cfgs;
  for (unsigned n : sm_counts) {
    if (n == 0 || budget % n != 0)
      throw ConfigError("SM count " + std::to_string(n) + " does not divide the budget " +
                        std::to_string(budget));
    GpuConfig c = base;
    c.scheme = Scheme::Baseline;
    c.sm_count = n;
    c.sm_scale = budget / n;
    c.perfect_noc = perfect_noc;
    validate(c);
    cfgs.push_back(c);
  }
  validate(kernel);
  auto reports =
      run_all<RunReport>(cfgs.size(), [&](std::size_t i) { return run(cfgs[i], kernel); });
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    SweepPoint p;
    p.sm_count = cfgs[i].sm_count;
    p.scale = cfgs[i].sm_scale;
    p.report = std::move(reports[i]);
    out.push_back(std::move(p));
  }
  const double ref = out.front().report.ipc;
  for (SweepPoint& p : out) p.normalized_ipc = ref > 0 ? p.report.ipc / ref : 0;
  return out;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points) {
  out << "sm_count,scale,ipc,normalized_ipc,actual_memory_access_rate,control_stall_fraction,"
         "avg_noc_latency,total_cycles\n";
  for (const SweepPoint& p : points)
    out << p.sm_count << ',' << p.scale << ',' << num(p.report.ipc) << ','
        << num(p.normalized_ipc) << ',' << num(p.report.actual_memory_access_rate) << ','
        << num(p.report.control_stall_fraction) << ',' << num(p.report.avg_noc_latency) << ','
        << p.report.total_cycles << '\n';
}

std::vector<SchemeResult> compare_schemes(const GpuConfig& base, const KernelSpec& kernel,
                                          const std::vector<Scheme>& schemes) {
  if (schemes.empty()) return {};
  std::vector<GpuConfig> cfgs;
  for (Scheme s : schemes) {
    GpuConfig c = base;
    c.scheme = s;
    validate(c);
    cfgs.push_back(c);
  }
  validate(kernel);
  auto reports =
      run_all<RunReport>(cfgs.size(), [&](std::size_t i) { return run(cfgs[i], kernel); });
  std::vector<SchemeResult> out;
  double ref = reports.front().ipc;
  for (std::size_t i = 0; i < schemes.size(); ++i)
    if (schemes[i] == Scheme::Baseline) {
      ref = reports[i].ipc;
      break;
    }
  for (std::size_t i = 0; i < schemes.size(); ++i) {
    SchemeResult r;
    r.scheme = schemes[i];
    r.speedup = ref > 0 ? reports[i].ipc / ref : 0;
    r.report = std::move(reports[i]);
    out.push_back(std::move(r));
  }
  return out;
}

void write_compare_csv(std::ostream& out, const std::vector<SchemeResult>& results) {
  out << "scheme,ipc,speedup,decision,split_events,refuse_events,total_cycles\n";
  for (const SchemeResult& r : results)
    out << to_string(r.scheme) << ',' << num(r.report.ipc) << ',' << num(r.speedup) << ','
        << to_string(r.report.decision) << ',' << r.report.split_events << ','
        << r.report.refuse_events << ',' << r.report.total_cycles << '\n';
}

TrainSummary train_cli(const std::filesystem::path& data, const std::filesystem::path& out,
                       const TrainParams& params) {
  const std::vector<TrainingSample> all = read_samples_csv(data);
  if (all.empty()) throw ConfigError("training data " + data.string() + " has no rows");
  std::vector<TrainingSample> fit, held;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 5 == 4 ? held : fit).push_back(all[i]);
  if (held.empty() || fit.size() < 2) fit = all;  // too small to hold anything out
  const auto has = [](const std::vector<TrainingSample>& v, bool label) {
    return std::any_of(v.begin(), v.end(), [&](const TrainingSample& s) { return s.label == label; });
  };
  if (!has(fit, true) || !has(fit, false)) fit = all;
  if (!has(fit, true) || !has(fit, false))
    throw ConfigError("training data needs both SCALE_UP (1) and SCALE_OUT (0) labels");

  TrainSummary s;
  const TrainResult r = train(fit, params);
  s.model = r.model;
  s.train_count = fit.size();
  s.train_accuracy = r.accuracy;
  if (fit.size() == all.size()) held.clear();
  s.heldout_count = held.size();
  s.heldout_accuracy = held.empty() ? r.accuracy : accuracy(r.model, held);
  save_model(out, r.model);
  return s;
}

json report_to_json(const RunReport& r) {
  json tl = json::array();
  for (const TimelineRow& row : r.timeline)
    tl.push_back({{"pair", row.pair},
                  {"cycle", row.event.cycle},
                  {"from", to_string(row.event.from)},
                  {"to", to_string(row.event.to)},
                  {"lanes_before", row.event.lanes_before},
                  {"lanes_after", row.event.lanes_after}});
  json metrics = json::object();
  const auto vals = r.metrics.values();
  for (std::size_t i = 0; i < kMetricCount; ++i) metrics[MetricVector::names()[i]] = vals[i];
  return {{"kernel", r.kernel},
          {"scheme", r.scheme},
          {"ipc", r.ipc},
          {"l1i_miss_rate", r.l1i_miss_rate},
          {"l1d_miss_rate", r.l1d_miss_rate},
          {"actual_memory_access_rate", r.actual_memory_access_rate},
          {"control_stall_fraction", r.control_stall_fraction},
          {"icnt_stall_rate", r.icnt_stall_rate},
          {"noc_injection_rate", r.noc_injection_rate},
          {"avg_noc_latency", r.avg_noc_latency},
          {"sm_idle_fraction", r.sm_idle_fraction},
          {"timeline", tl},
          {"sampled", r.sampled},
          {"metrics", metrics},
          {"sampled_avg_noc_latency", r.metrics.avg_noc_latency},
          {"model", model_to_json(r.model)},
          {"logit", r.logit},
          {"decision", to_string(r.decision)},
          {"sampling_inconclusive", r.sampling_inconclusive},
          {"total_cycles", r.total_cycles},
          {"thread_insns", r.thread_insns},
          {"warp_insns", r.warp_insns},
          {"split_events", r.split_events},
          {"refuse_events", r.refuse_events},
          {"wall_seconds", r.wall_seconds}};
}

RunReport report_from_json(const json& j) {
  RunReport r;
  try {
    r.kernel = j.at("kernel").get<std::string>();
    r.scheme = j.at("scheme").get<std::string>();
    r.ipc = j.at("ipc").get<double>();
    r.l1i_miss_rate = j.at("l1i_miss_rate").get<double>();
    r.l1d_miss_rate = j.at("l1d_miss_rate").get<double>();
    r.actual_memory_access_rate = j.at("actual_memory_access_rate").get<double>();
    r.control_stall_fraction = j.at("control_stall_fraction").get<double>();
    r.icnt_stall_rate = j.at("icnt_stall_rate").get<double>();
    r.noc_injection_rate = j.at("noc_injection_rate").get<double>();
    r.avg_noc_latency = j.at("avg_noc_latency").get<double>();
    r.sm_idle_fraction = j.at("sm_idle_fraction").get<double>();
    for (const json& e : j.at("timeline")) {
      TimelineRow row;
      row.pair = e.at("pair").get<unsigned>();
      row.event.cycle = e.at("cycle").get<std::uint64_t>();
      row.event.from = pair_mode_from(e.at("from").get<std::string>());
      row.event.to = pair_mode_from(e.at("to").get<std::string>());
      row.event.lanes_before = e.at("lanes_before").get<unsigned>();
      row.event.lanes_after = e.at("lanes_after").get<unsigned>();
      r.timeline.push_back(row);
    }
    r.sampled = j.at("sampled").get<bool>();
    std::array<double, kMetricCount> vals{};
    for (std::size_t i = 0; i < kMetricCount; ++i)
      vals[i] = j.at("metrics").at(MetricVector::names()[i]).get<double>();
    r.metrics = MetricVector::from_values(vals);
    r.metrics.avg_noc_latency = j.at("sampled_avg_noc_latency").get<double>();
    r.model = model_from_json(j.at("model"));
    r.logit = j.at("logit").get<double>();
    r.decision = j.at("decision").get<std::string>() == to_string(Decision::ScaleUp)
                     ? Decision::ScaleUp
                     : Decision::ScaleOut;
    r.sampling_inconclusive = j.at("sampling_inconclusive").get<bool>();
    r.total_cycles = j.at("total_cycles").get<std::uint64_t>();
    r.thread_insns = j.at("thread_insns").get<std::uint64_t>();
    r.warp_insns = j.at("warp_insns").get<std::uint64_t>();
    r.split_events = j.at("split_events").get<unsigned>();
    r.refuse_events = j.at("refuse_events").get<unsigned>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad run report: ") + e.what());
  }
  return r;
}

void save_report(const std::filesystem::path& path, const RunReport& r) {
  auto f = open_out(path);
  f << report_to_json(r).dump(2) << '\n';
}

std::vector<RunReport> load_reports(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<RunReport> out;
  for (const auto& p : files) {
    std::ifstream in(p);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
    out.push_back(report_from_json(j));
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<RunReport>& runs) {
  out << "run,kernel,scheme,ipc,l1i_miss_rate,l1d_miss_rate,actual_memory_access_rate,"
         "control_stall_fraction,icnt_stall_rate,noc_injection_rate,avg_noc_latency,"
         "sm_idle_fraction,sampled,logit,decision,sampling_inconclusive,total_cycles,"
         "thread_insns,warp_insns,split_events,refuse_events,wall_seconds\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunReport& r = runs[i];
    out << i << ',' << r.kernel << ',' << r.scheme << ',' << num(r.ipc) << ','
        << num(r.l1i_miss_rate) << ',' << num(r.l1d_miss_rate) << ','
        << num(r.actual_memory_access_rate) << ',' << num(r.control_stall_fraction) << ','
        << num(r.icnt_stall_rate) << ',' << num(r.noc_injection_rate) << ','
        << num(r.avg_noc_latency) << ',' << num(r.sm_idle_fraction) << ',' << r.sampled << ','
        << num(r.logit) << ',' << to_string(r.decision) << ',' << r.sampling_inconclusive << ','
        << r.total_cycles << ',' << r.thread_insns << ',' << r.warp_insns << ','
        << r.split_events << ',' << r.refuse_events << ',' << num(r.wall_seconds) << '\n';
  }
}

void write_timeline_csv(std::ostream& out, const std::vector<RunReport>& runs) {
  out << "run,kernel,scheme,pair,cycle,from,to,lanes_before,lanes_after\n";
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (const TimelineRow& row : runs[i].timeline)
      out << i << ',' << runs[i].kernel << ',' << runs[i].scheme << ',' << row.pair << ','
          << row.event.cycle << ',' << to_string(row.event.from) << ','
          << to_string(row.event.to) << ',' << row.event.lanes_before << ','
          << row.event.lanes_after << '\n';
}

void write_impact_csv(std::ostream& out, const std::vector<RunReport>& runs) {
  const auto names = impact_magnitudes(PredictorModel{}, MetricVector{});
  out << "run,kernel,scheme";
  for (const auto& [n, _] : names) out << ',' << n;
  for (const auto& [n, _] : names) out << ",norm_" << n;
  out << ",logit\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunReport& r = runs[i];
    if (!r.sampled) continue;
    const auto raw = impact_magnitudes(r.model, r.metrics);
    const auto norm = normalized_impacts(raw);
    out << i << ',' << r.kernel << ',' << r.scheme;
    for (const auto& [_, v] : raw) out << ',' << num(v);
    for (const auto& [_, v] : norm) out << ',' << num(v);
    out << ',' << num(r.logit) << '\n';
  }
}

void report(const std::vector<RunReport>& runs, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  auto m = open_out(out_dir / "metrics.csv");
  write_metrics_csv(m, runs);
  auto t = open_out(out_dir / "timeline.csv");
  write_timeline_csv(t, runs);
  auto im = open_out(out_dir / "impact.csv");
  write_impact_csv(im, runs);
}

}  // namespace amoeba
