#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsfdi/errors.hpp"
#include "rsfdi/io.hpp"

namespace rsfdi {

struct PipelineConfig {
  std::string system_path;    // empty: the built-in reaction-diffusion system
  std::string scenario_path;  // empty: the built-in scenario
  std::string out_dir = "out";
  std::optional<int> modes;   // analysis truncation for analyze, simulation truncation otherwise
  std::optional<double> dt;
  std::optional<std::uint64_t> seed;
  int runs = 70;
  int jobs = 1;
  bool allow_unverified = false;
  std::optional<int> fault_index;  // 1-based
  int n_persist = 3;
  bool convergence_report = false;
};

// f1 = 2 at 5 s, f2 = -1 at 7 s, process variance 0.5, measurement variance 0.2
Scenario example_scenario();

// severity pairs (f1, f2) of the four delay-table rows
std::vector<std::pair<double, double>> example_severity_rows();

int exit_code(ErrorCode code);
Json error_to_json(const std::string& stage, const Error& e);

// Per-fault analysis: S*, W*, D, H and the solvability verdicts.
struct FaultAnalysis {
  int fault = 0;
  SolvabilityReport report;
  std::vector<std::string> unverified;  // family labels with an undecided S* tail
  Json json;
  std::string summary;
};

FaultAnalysis analyze_fault(const Model& m, int fault);

struct FilterBank {
  int modes = 0;
  std::vector<DetectionFilter> filters;
  std::vector<FilterDesign> designs;
};

FilterBank synthesize_filters(const RieszSpectralSystem& sys, int modes, const std::vector<int>& faults);

// Commands.  Each writes into cfg.out_dir and returns the process exit code;
// failures leave error.json next to the partial output.
int cmd_analyze(const PipelineConfig& cfg);
int cmd_synthesize(const PipelineConfig& cfg);
int cmd_simulate(const PipelineConfig& cfg);
int cmd_thresholds(const PipelineConfig& cfg);
int cmd_reproduce_example(const PipelineConfig& cfg);
int cmd_export_example(const PipelineConfig& cfg);

int run_command(const std::string& name, const PipelineConfig& cfg);

}  // namespace rsfdi
