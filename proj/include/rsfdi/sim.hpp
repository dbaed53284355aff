#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsfdi/fdi.hpp"

namespace rsfdi {

enum class FaultProfile { Step, Ramp };

struct FaultEvent {
  int fault = 0;
  double onset = 0.0;
  double severity = 0.0;
  FaultProfile profile = FaultProfile::Step;
  double ramp_duration = 1.0;  // ramp reaches `severity` after this many seconds

  double value(double t) const;
};

// u(t) = value of the last entry with t_i <= t (zero before the first)
struct InputStep {
  double t = 0.0;
  Eigen::VectorXd u;
};

struct Scenario {
  std::string name = "scenario";
  double horizon = 10.0;
  double dt = 1e-3;
  int modes = kDefaultSimulationModes;
  std::vector<InputStep> inputs;
  std::vector<FaultEvent> faults;
  std::vector<double> process_variance;      // per family; one entry is broadcast
  std::vector<double> measurement_variance;  // per output; one entry is broadcast
  std::uint64_t seed = 1;

  int steps() const;  // floor(T/dt) + 1 samples
  Eigen::VectorXd input(double t, int m) const;
  Scenario healthy() const;
  void validate(int fault_count) const;
};

struct SimulationResult {
  std::vector<double> time;
  Eigen::MatrixXd y;         // samples x q
  Eigen::MatrixXd residual;  // samples x filters, |r_i(t)|
  Eigen::MatrixXd state;     // samples x n when requested
  std::uint64_t seed = 0;
};

struct SimulationOptions {
  bool keep_state = false;
};

// One exact zero-order-hold step of dx/dt = lambda x + w.
double scalar_zoh_step(double lambda, double x, double w, double dt);

SimulationResult simulate(const Model& m, const std::vector<DetectionFilter>& filters, const Scenario& sc,
                          const SimulationOptions& opt = {});

struct ThresholdSet {
  std::vector<double> threshold;
  std::string method = "max-over-healthy-runs";
  int runs = 0;
  std::vector<std::uint64_t> seeds;
};

ThresholdSet monte_carlo_thresholds(const Model& m, const std::vector<DetectionFilter>& filters, const Scenario& sc,
                                    int runs, std::uint64_t base_seed, int jobs = 1);

struct Detection {
  int filter = 0;
  int fault = 0;
  std::optional<double> time;   // first sample of the persistent crossing
  std::optional<double> delay;  // time - onset of the filter's fault
};

struct DecisionTable {
  std::vector<Detection> rows;
  std::vector<int> fired;  // filters that crossed, in firing order
};

// residual column i belongs to filters[i]
DecisionTable detect(const SimulationResult& trace, const std::vector<double>& thresholds,
                     const std::vector<DetectionFilter>& filters, const Scenario& sc, int n_persist = 3);

// first index of n_persist consecutive samples above th, or -1
int first_persistent_crossing(const Eigen::VectorXd& series, double th, int n_persist);

}  // namespace rsfdi
