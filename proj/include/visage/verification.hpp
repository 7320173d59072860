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

// Oracles for the selection step.
//
// brute_force_select enumerates every size-k subset, so it is independent of
// the top-k shortcut the decoder relies on. The stability checker perturbs a
// true objective by bounded noise, selects under the noisy estimate, and
// checks the realized loss against 2 m eps <= 2 k eps, where m is the number
// of optimal candidates displaced.

#ifndef VISAGE_VERIFICATION_HPP_
#define VISAGE_VERIFICATION_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "visage/core.hpp"
#include "visage/denoiser.hpp"
#include "visage/grounding.hpp"

namespace visage {

inline constexpr std::size_t kOracleMaxCandidates = 20;

class OracleSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A stability trial broke L <= 2 m eps <= 2 k eps. Always a bug.
class TheoremFalsification : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct SubsetSelection {
  std::vector<Position> positions;  // 1-indexed, ascending
  double value = 0.0;
};

// Sum of log_scores over a subset, accumulated in descending value order so
// that subsets differing only by equal values get bit-identical sums.
double subset_value(std::span<const double> log_scores, std::span<const Position> positions);

// Exhaustive argmax of subset_value over all C(n, k) subsets; ties go to the
// lexicographically smallest position set. n <= 20.
SubsetSelection brute_force_select(std::span<const double> log_scores, std::size_t k);

// Top-k positions (1-indexed, ascending) by value, lower position on ties.
std::vector<Position> topk_positions(std::span<const double> values, std::size_t k);

struct TrueObjectiveSpec {
  std::vector<double> log_confidence;
  std::vector<double> true_discrepancy;  // b_i >= 0
  double lambda = 1.0;                   // carried only; b_i already includes it

  // r*(i) = log c_i - b_i.
  std::vector<double> true_scores() const;
  // r_proxy(i) = log c_i.
  std::vector<double> proxy_scores() const { return log_confidence; }
};

struct StabilityTrial {
  std::size_t k = 0;
  std::vector<double> true_scores;
  std::vector<double> estimates;
  double epsilon = 0.0;  // realized max |estimate - true|
  std::vector<Position> selected;
  std::vector<Position> optimal;
  double loss = 0.0;
  std::size_t swapped = 0;     // m = |optimal \ selected|
  double bound = 0.0;          // 2 k eps
  double refined_bound = 0.0;  // 2 m eps
  bool violated = false;
};

// Selects under `estimates`, scores the choice under `true_scores`. Does not
// throw on a violation; see run_stability_trial.
StabilityTrial evaluate_stability(std::span<const double> true_scores,
                                  std::span<const double> estimates, std::size_t k);

// Estimates are true_scores plus independent uniform noise on [-eps, eps].
// Throws TheoremFalsification if the bound is violated.
StabilityTrial run_stability_trial(std::span<const double> true_scores, double noise_bound,
                                   std::size_t k, std::uint64_t seed);

struct WorstCaseInstance {
  std::size_t k = 0;
  double epsilon = 0.0;
  double gap = 0.0;
  std::vector<double> true_scores;  // k optimal, then k suboptimal
  std::vector<double> estimates;
};

// 2k candidates: k optimal at 0, k suboptimal at -gap; estimates push the
// optimal ones down by eps and the suboptimal ones up by eps, reversing all k
// pairs. Requires 0 < gap < 2 eps.
WorstCaseInstance construct_worst_case(std::size_t k, double epsilon, double gap);

struct SweepOptions {
  std::size_t trials = 10000;
  std::size_t max_candidates = 12;
  std::size_t max_budget = 6;
  double max_epsilon = 1.0;
  std::uint64_t seed = 0;
};

struct SweepRow {
  std::size_t trial_id = 0;
  std::size_t n = 0;
  StabilityTrial trial;
  double noise_bound = 0.0;
};

// Random instances and noise levels; violations are recorded, not thrown.
std::vector<SweepRow> run_stability_sweep(const SweepOptions& options);
// Columns: trial_id,n,k,epsilon,loss,bound,m,violated
void write_stability_csv(std::span<const SweepRow> rows, std::ostream& out);

struct FidelityRow {
  std::string scenario;
  std::vector<Position> positions;
  std::vector<double> estimated;  // b-hat per position
  std::vector<double> truth;      // b per position
  double epsilon_realized = 0.0;
  std::vector<Position> committed_estimated;
  std::vector<Position> committed_true;
  bool commitments_match = false;
};

struct FidelityReport {
  std::vector<FidelityRow> rows;
};

// First-step comparison of the entropy estimate b-hat against each scenario's
// synthetic ground truth. Diagnostic only.
FidelityReport estimator_fidelity_report(std::span<const ScenarioSpec> scenarios,
                                         const GroundingConfig& config,
                                         std::uint64_t seed = 0);

}  // namespace visage

#endif  // VISAGE_VERIFICATION_HPP_
