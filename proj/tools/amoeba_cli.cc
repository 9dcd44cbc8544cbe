// amoeba: command line front end for the simulator.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "amoeba/harness.h"

using namespace amoeba;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

GpuConfig config_or_default(const std::string& path) {
  return path.empty() ? full_config() : load_config(path);
}

void emit(const std::string& out_path, const std::function<void(std::ostream&)>& write) {
  if (out_path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write " + out_path);
  write(f);
}

void print_summary(const RunReport& r) {
  std::printf("kernel %s  scheme %s\n", r.kernel.c_str(), r.scheme.c_str());
  std::printf("  cycles %llu  thread insns %llu  ipc %.4f\n",
              static_cast<unsigned long long>(r.total_cycles),
              static_cast<unsigned long long>(r.thread_insns), r.ipc);
  std::printf("  l1d miss %.4f  l1i miss %.4f  mem access rate %.4f\n", r.l1d_miss_rate,
              r.l1i_miss_rate, r.actual_memory_access_rate);
  std::printf("  control stall %.4f  sm idle %.4f\n", r.control_stall_fraction, r.sm_idle_fraction);
  std::printf("  noc latency %.3f  injection %.4f  icnt stall %.4f\n", r.avg_noc_latency,
              r.noc_injection_rate, r.icnt_stall_rate);
  if (r.sampled)
    std::printf("  sampled logit %.4f -> %s\n", r.logit, to_string(r.decision));
  else if (r.sampling_inconclusive)
    std::printf("  sampling inconclusive -> %s\n", to_string(r.decision));
  if (r.split_events || r.refuse_events)
    std::printf("  splits %u  re-fuses %u\n", r.split_events, r.refuse_events);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycle-level GPU simulator with SM fusion and splitting"};
  app.require_subcommand(1);

  std::string config_path, kernel_path, out_path, scheme_name;
  auto* run_cmd = app.add_subcommand("run", "Simulate one kernel");
  run_cmd->add_option("--config", config_path, "GPU config JSON (default: 48-SM machine)");
  run_cmd->add_option("--kernel", kernel_path, "Kernel JSON")->required();
  run_cmd->add_option("--scheme", scheme_name, "Override the configured scheme");
  run_cmd->add_option("--out", out_path, "Write the run report JSON here");

  std::string sms = "16,32,64";
  unsigned budget = 0;
  bool perfect = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "Fixed-budget SM count sweep");
  sweep_cmd->add_option("--config", config_path, "GPU config JSON");
  sweep_cmd->add_option("--kernel", kernel_path, "Kernel JSON")->required();
  sweep_cmd->add_option("--sms", sms, "Comma-separated SM counts")->capture_default_str();
  sweep_cmd->add_option("--budget", budget, "Total SM budget (default: largest SM count)");
  sweep_cmd->add_flag("--perfect-noc", perfect, "One-cycle network");
  sweep_cmd->add_option("--out", out_path, "CSV output (default stdout)");

  std::string schemes = "baseline,scale_up,static_fuse,direct_split,warp_regroup";
  std::string reports_dir;
  auto* cmp_cmd = app.add_subcommand("compare", "Run a kernel under several schemes");
  cmp_cmd->add_option("--config", config_path, "GPU config JSON");
  cmp_cmd->add_option("--kernel", kernel_path, "Kernel JSON")->required();
  cmp_cmd->add_option("--schemes", schemes, "Comma-separated schemes")->capture_default_str();
  cmp_cmd->add_option("--out", out_path, "CSV output (default stdout)");
  cmp_cmd->add_option("--reports", reports_dir, "Also save each run report JSON in this directory");

  std::string data_path;
  TrainParams tp;
  auto* train_cmd = app.add_subcommand("train", "Fit the fuse predictor");
  train_cmd->add_option("--data", data_path, "CSV: one column per metric plus label")->required();
  train_cmd->add_option("--out", out_path, "Model JSON to write")->required();
  train_cmd->add_option("--epochs", tp.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tp.lr)->capture_default_str();
  train_cmd->add_option("--l2", tp.l2)->capture_default_str();

  std::string model_path, metrics_path;
  auto* pred_cmd = app.add_subcommand("predict", "Apply a model to metric vectors");
  pred_cmd->add_option("--model", model_path, "Model JSON")->required();
  pred_cmd->add_option("--metrics", metrics_path, "CSV of metric vectors")->required();

  std::string in_dir;
  auto* rep_cmd = app.add_subcommand("report", "Turn saved run reports into CSVs");
  rep_cmd->add_option("--in", in_dir, "Directory of run report JSON files")->required();
  rep_cmd->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run_cmd) {
      GpuConfig cfg = config_or_default(config_path);
      if (!scheme_name.empty()) cfg.scheme = scheme_from_string(scheme_name);
      const RunReport r = run(cfg, load_kernel_file(kernel_path));
      print_summary(r);
      if (!out_path.empty()) save_report(out_path, r);
    } else if (*sweep_cmd) {
      std::vector<unsigned> counts;
      for (const auto& s : split_list(sms)) {
        try {
          counts.push_back(static_cast<unsigned>(std::stoul(s)));
        } catch (const std::exception&) {
          throw ConfigError("bad SM count '" + s + "'");
        }
      }
      if (counts.empty()) throw ConfigError("--sms is empty");
      if (budget == 0) budget = *std::max_element(counts.begin(), counts.end());
      const auto pts = sweep_scaling(config_or_default(config_path), load_kernel_file(kernel_path),
                                     budget, counts, perfect);
      emit(out_path, [&](std::ostream& o) { write_sweep_csv(o, pts); });
    } else if (*cmp_cmd) {
      std::vector<Scheme> list;
      for (const auto& s : split_list(schemes)) list.push_back(scheme_from_string(s));
      const auto res =
          compare_schemes(config_or_default(config_path), load_kernel_file(kernel_path), list);
      emit(out_path, [&](std::ostream& o) { write_compare_csv(o, res); });
      if (!reports_dir.empty()) {
        std::filesystem::create_directories(reports_dir);
        for (std::size_t i = 0; i < res.size(); ++i) {
          char name[64];
          std::snprintf(name, sizeof name, "%02zu_%s.json", i, to_string(res[i].scheme));
          save_report(std::filesystem::path(reports_dir) / name, res[i].report);
        }
      }
    } else if (*train_cmd) {
      const TrainSummary s = train_cli(data_path, out_path, tp);
      std::printf("trained on %zu rows, accuracy %.4f\n", s.train_count, s.train_accuracy);
      if (s.heldout_count)
        std::printf("held-out accuracy %.4f on %zu rows\n", s.heldout_accuracy, s.heldout_count);
      else
        std::printf("too few rows to hold any out\n");
      std::printf("model written to %s\n", out_path.c_str());
    } else if (*pred_cmd) {
      const PredictorModel m = load_model(model_path);
      std::printf("row,logit,probability,decision\n");
      const auto rows = read_metrics_csv(metrics_path);
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::printf("%zu,%.17g,%.17g,%s\n", i, logit(m, rows[i]), probability(m, rows[i]),
                    to_string(predict_fuse(m, rows[i])));
    } else if (*rep_cmd) {
      const auto runs = load_reports(in_dir);
      report(runs, out_path);
      std::printf("%zu runs -> %s\n", runs.size(), out_path.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
