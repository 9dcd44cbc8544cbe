// Experiment drivers on top of the simulator: budget sweeps, scheme
// comparisons, model training and CSV reports.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "amoeba/gpu.h"

namespace amoeba {

struct SweepPoint {
  unsigned sm_count = 0;
  unsigned scale = 1;
  RunReport report;
  double normalized_ipc = 0;
};

// Runs the kernel once per SM count with every SM budget/sm_count times
// wider; IPC is normalized to the first entry.
std::vector<SweepPoint> sweep_scaling(const GpuConfig& base, const KernelSpec& kernel,
                                      unsigned budget, const std::vector<unsigned>& sm_counts,
                                      bool perfect_noc);
void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points);

struct SchemeResult {
  Scheme scheme = Scheme::Baseline;
  RunReport report;
  double speedup = 0;  // IPC over the baseline run (first entry if none)
};

std::vector<SchemeResult> compare_schemes(const GpuConfig& base, const KernelSpec& kernel,
                                          const std::vector<Scheme>& schemes);
void write_compare_csv(std::ostream& out, const std::vector<SchemeResult>& results);

struct TrainSummary {
  PredictorModel model;
  std::size_t train_count = 0;
  std::size_t heldout_count = 0;
  double train_accuracy = 0;
  double heldout_accuracy = 0;
};

// Every fifth row is held out; the rest train the model written to out.
TrainSummary train_cli(const std::filesystem::path& data, const std::filesystem::path& out,
                       const TrainParams& params = {});

nlohmann::json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);
void save_report(const std::filesystem::path& path, const RunReport& r);
// Every *.json in dir, by file name.
std::vector<RunReport> load_reports(const std::filesystem::path& dir);

void write_metrics_csv(std::ostream& out, const std::vector<RunReport>& runs);
void write_timeline_csv(std::ostream& out, const std::vector<RunReport>& runs);
void write_impact_csv(std::ostream& out, const std::vector<RunReport>& runs);
// metrics.csv, timeline.csv and impact.csv in out_dir.
void report(const std::vector<RunReport>& runs, const std::filesystem::path& out_dir);

}  // namespace amoeba
