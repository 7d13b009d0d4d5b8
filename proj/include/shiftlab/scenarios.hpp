#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftlab/linear.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// Full-batch cross-entropy SGD on a single linear layer.
LinearModel train_softmax_classifier(const Matrix& x,
                                     const std::vector<int>& labels,
                                     std::size_t classes, std::size_t steps,
                                     double learning_rate, RngStream& rng);

// What `run` consumes. params carries scenario hyperparameters; unknown keys
// are rejected. dataset optionally points at a SHIFTLAB-DS file for the
// scenarios that can consume one (dg, onda); the rest generate their data.
struct ExperimentConfig {
  std::string scenario;
  std::uint64_t seed = 0;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  std::string dataset;
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

// Everything a run produces. Serialization is key-ordered and carries no
// timing, so equal (config, seed) gives byte-identical reports.
struct RunReport {
  std::string version;
  std::string scenario;
  std::uint64_t seed = 0;
  std::string dataset;  // empty when the scenario generated its own data
  nlohmann::ordered_json params;
  nlohmann::ordered_json metrics;
  bool ok = false;
};

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);
// Human-readable rendering for the `report` subcommand.
std::string format_report(const RunReport& report);

std::vector<std::string> scenario_names();
RunReport run_scenario(const ExperimentConfig& cfg);

// Finite-difference audit of one registered analytic gradient.
struct GradcheckReport {
  std::string op;
  std::size_t trials = 0;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool pass = false;
};

std::vector<std::string> gradcheck_ops();
GradcheckReport run_gradcheck(const std::string& op, std::size_t trials,
                              double tolerance, std::uint64_t seed);

}  // namespace shiftlab
