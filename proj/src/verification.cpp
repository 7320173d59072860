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

#include "visage/verification.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include "visage/decoder.hpp"
#include "visage/random.hpp"

namespace visage {

double subset_value(std::span<const double> log_scores, std::span<const Position> positions) {
  std::vector<double> picked;
  picked.reserve(positions.size());
  for (Position p : positions) picked.push_back(log_scores[p - 1]);
  std::sort(picked.begin(), picked.end(), std::greater<>());
  double sum = 0.0;
  for (double v : picked) sum += v;
  return sum;
}

SubsetSelection brute_force_select(std::span<const double> log_scores, std::size_t k) {
  const std::size_t n = log_scores.size();
  if (n > kOracleMaxCandidates) {
    throw OracleSizeError("brute-force oracle limited to " + std::to_string(kOracleMaxCandidates) +
                          " candidates, got " + std::to_string(n));
  }
  if (k > n) {
    throw OracleSizeError("budget " + std::to_string(k) + " exceeds " + std::to_string(n) +
                          " candidates");
  }

  // Enumerate combinations in lexicographic order; strict improvement keeps
  // the lexicographically smallest maximizer.
  std::vector<Position> current(k);
  for (std::size_t i = 0; i < k; ++i) current[i] = static_cast<Position>(i + 1);
  SubsetSelection best{current, subset_value(log_scores, current)};
  while (true) {
    std::size_t i = k;
    while (i > 0 && current[i - 1] == n - k + i) --i;
    if (i == 0) break;
    ++current[i - 1];
    for (std::size_t j = i; j < k; ++j) current[j] = current[j - 1] + 1;
    const double v = subset_value(log_scores, current);
    if (v > best.value) best = {current, v};
  }
  return best;
}

std::vector<Position> topk_positions(std::span<const double> values, std::size_t k) {
  std::vector<Position> out;
  for (std::size_t i : topk_indices(values, k)) out.push_back(static_cast<Position>(i + 1));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> TrueObjectiveSpec::true_scores() const {
  if (log_confidence.size() != true_discrepancy.size()) {
    throw std::invalid_argument("log_confidence and true_discrepancy differ in length");
  }
  std::vector<double> out(log_confidence.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(true_discrepancy[i] >= 0.0)) throw std::invalid_argument("b_i must be >= 0");
    out[i] = log_confidence[i] - true_discrepancy[i];
  }
  return out;
}

StabilityTrial evaluate_stability(std::span<const double> true_scores,
                                  std::span<const double> estimates, std::size_t k) {
  if (true_scores.size() != estimates.size()) {
    throw std::invalid_argument("true scores and estimates differ in length");
  }
  if (k > true_scores.size()) throw std::invalid_argument("budget exceeds candidates");
  StabilityTrial t;
  t.k = k;
  t.true_scores.assign(true_scores.begin(), true_scores.end());
  t.estimates.assign(estimates.begin(), estimates.end());
  for (std::size_t i = 0; i < true_scores.size(); ++i) {
    t.epsilon = std::max(t.epsilon, std::abs(estimates[i] - true_scores[i]));
  }
  t.selected = topk_positions(estimates, k);
  t.optimal = brute_force_select(true_scores, k).positions;
  t.loss = subset_value(true_scores, t.optimal) - subset_value(true_scores, t.selected);
  std::vector<Position> missed;
  std::set_difference(t.optimal.begin(), t.optimal.end(), t.selected.begin(), t.selected.end(),
                      std::back_inserter(missed));
  t.swapped = missed.size();
  t.bound = 2.0 * static_cast<double>(k) * t.epsilon;
  t.refined_bound = 2.0 * static_cast<double>(t.swapped) * t.epsilon;
  t.violated = t.loss < 0.0 || t.loss > t.refined_bound || t.refined_bound > t.bound ||
               t.swapped > k;
  return t;
}

StabilityTrial run_stability_trial(std::span<const double> true_scores, double noise_bound,
                                   std::size_t k, std::uint64_t seed) {
  if (!(noise_bound >= 0.0)) throw std::invalid_argument("noise bound must be >= 0");
  if (true_scores.size() > kOracleMaxCandidates) {
    throw OracleSizeError("stability trials limited to " + std::to_string(kOracleMaxCandidates) +
                          " candidates");
  }
  Rng rng(seed);
  std::vector<double> estimates(true_scores.size());
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    estimates[i] = true_scores[i] + rng.uniform(-noise_bound, noise_bound);
  }
  StabilityTrial t = evaluate_stability(true_scores, estimates, k);
  if (t.violated) {
    std::ostringstream os;
    os.precision(17);
    os << "stability bound violated: loss " << t.loss << ", 2m eps " << t.refined_bound
       << ", 2k eps " << t.bound << " (k=" << k << ", m=" << t.swapped << ", seed=" << seed
       << ")";
    throw TheoremFalsification(os.str());
  }
  return t;
}

WorstCaseInstance construct_worst_case(std::size_t k, double epsilon, double gap) {
  if (k == 0) throw std::invalid_argument("worst case needs k >= 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("worst case needs epsilon > 0");
  if (!(gap > 0.0 && gap < 2.0 * epsilon)) {
    throw std::invalid_argument("gap must lie in (0, 2 epsilon); bounded noise cannot reverse "
                                "a larger gap");
  }
  WorstCaseInstance w;
  w.k = k;
  w.epsilon = epsilon;
  w.gap = gap;
  w.true_scores.assign(k, 0.0);
  w.true_scores.insert(w.true_scores.end(), k, -gap);
  w.estimates.assign(k, -epsilon);
  w.estimates.insert(w.estimates.end(), k, -gap + epsilon);
  return w;
}

std::vector<SweepRow> run_stability_sweep(const SweepOptions& options) {
  if (options.max_candidates == 0 || options.max_candidates > kOracleMaxCandidates) {
    throw OracleSizeError("sweep candidate count must lie in 1..20");
  }
  std::vector<SweepRow> rows;
  rows.reserve(options.trials);
  for (std::size_t id = 0; id < options.trials; ++id) {
    Rng rng(mix_seed(options.seed, id));
    const auto n = static_cast<std::size_t>(
        rng.uniform_int(1, static_cast<std::int64_t>(options.max_candidates)));
    const auto k = static_cast<std::size_t>(
        rng.uniform_int(1, static_cast<std::int64_t>(std::min(n, options.max_budget))));
    TrueObjectiveSpec spec;
    for (std::size_t i = 0; i < n; ++i) {
      spec.log_confidence.push_back(std::log(rng.uniform(0.01, 1.0)));
      spec.true_discrepancy.push_back(rng.uniform(0.0, 2.0));
    }
    const double eps = rng.uniform(0.0, options.max_epsilon);
    const auto truth = spec.true_scores();
    Rng noise(mix_seed(options.seed, id, 1));
    std::vector<double> estimates(n);
    for (std::size_t i = 0; i < n; ++i) estimates[i] = truth[i] + noise.uniform(-eps, eps);
    rows.push_back({id, n, evaluate_stability(truth, estimates, k), eps});
  }
  return rows;
}

void write_stability_csv(std::span<const SweepRow> rows, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "trial_id,n,k,epsilon,loss,bound,m,violated\n";
  for (const auto& r : rows) {
    out << r.trial_id << ',' << r.n << ',' << r.trial.k << ',' << r.trial.epsilon << ','
        << r.trial.loss << ',' << r.trial.bound << ',' << r.trial.swapped << ','
        << (r.trial.violated ? "true" : "false") << '\n';
  }
  out.precision(precision);
}

FidelityReport estimator_fidelity_report(std::span<const ScenarioSpec> scenarios,
                                         const GroundingConfig& config, std::uint64_t seed) {
  config.validate();
  FidelityReport report;
  for (const auto& spec : scenarios) {
    ScriptedDenoiser denoiser(spec);
    const UnmaskSchedule schedule =
        spec.steps ? spec.default_schedule()
                   : make_block_schedule(spec.gen_length, spec.gen_length, spec.gen_length);
    const SequenceState state = denoiser.initial_state();
    const auto candidates = candidate_set(state, schedule);
    const auto scores = score_candidates(denoiser.evaluate(state, candidates, seed), config);

    FidelityRow row;
    row.scenario = spec.name;
    std::vector<double> est_scores;
    std::vector<double> true_scores;
    for (const auto& s : scores) {
      const auto it = spec.true_discrepancy.find(s.position);
      if (it == spec.true_discrepancy.end()) {
        throw std::invalid_argument("scenario '" + spec.name +
                                    "' has no true discrepancy for position " +
                                    std::to_string(s.position));
      }
      row.positions.push_back(s.position);
      row.estimated.push_back(s.discrepancy_estimate);
      row.truth.push_back(it->second);
      row.epsilon_realized =
          std::max(row.epsilon_realized, std::abs(s.discrepancy_estimate - it->second));
      est_scores.push_back(std::log(s.confidence) - s.discrepancy_estimate);
      true_scores.push_back(std::log(s.confidence) - it->second);
    }
    const std::size_t k = schedule.budget(1);
    for (std::size_t i : topk_indices(est_scores, k)) {
      row.committed_estimated.push_back(row.positions[i]);
    }
    for (std::size_t i : topk_indices(true_scores, k)) {
      row.committed_true.push_back(row.positions[i]);
    }
    std::sort(row.committed_estimated.begin(), row.committed_estimated.end());
    std::sort(row.committed_true.begin(), row.committed_true.end());
    row.commitments_match = row.committed_estimated == row.committed_true;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace visage
