#pragma once

#include <string>

#include <json.hpp>

#include "rsfdi/fdi.hpp"
#include "rsfdi/sim.hpp"

namespace rsfdi {

using Json = nlohmann::ordered_json;

// Faults, outputs and orthogonality facts are 1-based in files.
RieszSpectralSystem system_from_json(const Json& j);
Json system_to_json(const RieszSpectralSystem& sys);
RieszSpectralSystem load_system(const std::string& path);

Scenario scenario_from_json(const Json& j);
Json scenario_to_json(const Scenario& sc);
Scenario load_scenario(const std::string& path);

Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& j);

Json subspace_to_json(const StructuredSubspace& s);
Json validation_to_json(const ValidationReport& r);
Json unobservability_to_json(const UnobservabilityResult& u);

Json filter_to_json(const DetectionFilter& f, const RieszSpectralSystem& sys);
// enough of the filter to simulate and verify it
DetectionFilter filter_from_json(const Json& j);

Json thresholds_to_json(const ThresholdSet& t);
ThresholdSet thresholds_from_json(const Json& j);

Json decisions_to_json(const DecisionTable& d);

// '.' decimals regardless of locale, full round-trip precision
std::string format_double(double v);
void write_trace_csv(const std::string& path, const SimulationResult& r, const std::vector<double>& thresholds);

Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& j);
void write_text(const std::string& path, const std::string& text);

}  // namespace rsfdi
