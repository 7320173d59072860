// Copyright 2026 The VISAGE Decoding Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Batch experiments over synthetic scenarios: decode every
// (scenario, policy, seed) cell, persist the traces, and aggregate
// shortcut metrics per policy.

#ifndef VISAGE_HARNESS_HPP_
#define VISAGE_HARNESS_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "visage/decoder.hpp"
#include "visage/denoiser.hpp"

namespace visage {

class HarnessIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScheduleTriple {
  std::size_t gen_length = 0;
  std::size_t steps = 0;
  std::size_t block_length = 0;
};

struct ExperimentConfig {
  std::vector<ScenarioSpec> scenarios;
  std::vector<DecodePolicy> policies;
  // Overrides each scenario's own schedule when set.
  std::optional<ScheduleTriple> schedule;
  std::vector<std::uint64_t> seeds{0};
  // Empty: nothing is written.
  std::string output_dir;
  bool export_jsonl = true;
  bool export_csv = false;

  void validate() const;
};

// Per-policy aggregates. Rates are over cases whose scenario labels a
// grounded and an ungrounded position.
struct ShortcutMetrics {
  std::string policy;
  std::size_t cases = 0;
  std::size_t labelled_cases = 0;
  std::size_t shortcut_commits = 0;
  // Fraction of labelled cases where the ungrounded token is committed at a
  // strictly earlier step than the grounded one.
  double shortcut_commit_rate = 0.0;
  double mean_grounded_commit_step = 0.0;
  // Mean aggregate entropy and b-hat over every scored candidate.
  double mean_aggregate_entropy = 0.0;
  double mean_discrepancy_estimate = 0.0;
  // Cases whose committed sets differ from the first policy at some step.
  std::size_t diverged_cases = 0;
  double mean_first_divergence_step = 0.0;

  friend bool operator==(const ShortcutMetrics&, const ShortcutMetrics&) = default;
};

struct CaseError {
  std::string scenario;
  std::string policy;
  std::uint64_t seed = 0;
  std::string message;
};

struct ExperimentResult {
  std::vector<ShortcutMetrics> metrics;  // one per policy, config order
  std::vector<DecodeTrace> traces;       // cell order: scenario, policy, seed
  std::vector<std::string> trace_files;
  std::vector<CaseError> errors;
};

ExperimentResult run_experiment(const ExperimentConfig& config);

// Same aggregation run_experiment uses, from traces alone (e.g. reloaded from
// disk). Traces are grouped by policy label in `policies` order.
std::vector<ShortcutMetrics> compute_metrics(std::span<const DecodeTrace> traces,
                                             std::span<const DecodePolicy> policies);

void write_metrics_csv(std::span<const ShortcutMetrics> metrics, std::ostream& out);

std::vector<DecodePolicy> alpha_sweep_policies(std::span<const double> alphas,
                                               double beta = 0.25);
// quantile, min, mean at the given alpha/beta.
std::vector<DecodePolicy> aggregation_sweep_policies(double alpha = 0.5, double beta = 0.25);

// Randomized Fig.-1 style two-candidate scenarios with N = 16, M = 8.
std::vector<ScenarioSpec> make_shortcut_scenario_set(std::size_t count, std::uint64_t seed);
// Shortcut scenarios whose grounded token has exactly one sharp head.
std::vector<ScenarioSpec> make_single_sharp_head_set(std::size_t count, std::uint64_t seed);
// Single-sharp-head, partially sharp, fully sharp and all-diffuse cases in
// rotation.
std::vector<ScenarioSpec> make_mixed_scenario_set(std::size_t count, std::uint64_t seed);

struct TrajectoryRow {
  std::size_t step = 0;
  double peak = 0.0;             // max_j of the selected head's renormalized attention
  double peak_normalized = 0.0;  // peak / max over the trajectory
  double reference = 0.0;
  double confidence = 0.0;
  double aggregate_entropy = 0.0;
  bool committed = false;
};

// One row per step in which `position` was a candidate. Throws
// std::out_of_range if it never was.
std::vector<TrajectoryRow> export_trajectory(const DecodeTrace& trace, Position position);
void write_trajectory_csv(std::span<const TrajectoryRow> rows, std::ostream& out);

// Flat per-candidate step table of a trace.
void write_trace_csv(const DecodeTrace& trace, std::ostream& out);

}  // namespace visage

#endif  // VISAGE_HARNESS_HPP_
