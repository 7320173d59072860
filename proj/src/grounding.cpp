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

#include "visage/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace visage {

std::string_view to_string(Aggregation aggregation) {
  switch (aggregation) {
    case Aggregation::kQuantile: return "quantile";
    case Aggregation::kMin: return "min";
    case Aggregation::kMean: return "mean";
  }
  return "?";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "quantile") return Aggregation::kQuantile;
  if (text == "min") return Aggregation::kMin;
  if (text == "mean") return Aggregation::kMean;
  throw std::invalid_argument("unknown aggregation '" + std::string(text) + "'");
}

void GroundingConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("alpha must be a finite value >= 0");
  }
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in (0, 1]");
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw std::invalid_argument("delta must be a finite value > 0");
  }
  if (lambda_true && !(*lambda_true > 0.0)) {
    throw std::invalid_argument("lambda must be > 0");
  }
}

std::vector<double> renormalize_attention(std::span<const double> row, double delta) {
  if (row.empty()) throw std::domain_error("attention row is empty");
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw std::domain_error("smoothing delta must be positive and finite");
  }
  double total = 0.0;
  for (double w : row) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::domain_error("attention weight must be finite and non-negative");
    }
    total += w;
  }
  const double z = total + delta;
  const double floor = delta / static_cast<double>(row.size());
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] + floor) / z;
  return out;
}

double head_entropy(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::size_t quantile_rank(double beta, std::size_t count) {
  const double scaled = beta * static_cast<double>(count);
  // beta * M that is integral up to rounding (0.1 * 30) must not be pushed to
  // the next rank by ceil.
  const double nearest = std::round(scaled);
  const double rank = std::abs(scaled - nearest) <= 1e-9 * std::max(1.0, scaled)
                          ? nearest
                          : std::ceil(scaled);
  return std::clamp<std::size_t>(static_cast<std::size_t>(rank), 1, count);
}

double quantile_aggregate(std::span<const double> entropies, double beta) {
  if (entropies.empty()) throw std::domain_error("quantile of an empty set");
  if (!(beta > 0.0 && beta <= 1.0)) throw std::domain_error("beta must lie in (0, 1]");
  std::vector<double> sorted(entropies.begin(), entropies.end());
  const std::size_t rank = quantile_rank(beta, sorted.size());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   sorted.end());
  return sorted[rank - 1];
}

double aggregate_entropies(std::span<const double> entropies, const GroundingConfig& config) {
  if (entropies.empty()) throw std::domain_error("no head entropies to aggregate");
  switch (config.aggregation) {
    case Aggregation::kQuantile: return quantile_aggregate(entropies, config.beta);
    case Aggregation::kMin: return *std::min_element(entropies.begin(), entropies.end());
    case Aggregation::kMean:
      return std::accumulate(entropies.begin(), entropies.end(), 0.0) /
             static_cast<double>(entropies.size());
  }
  return 0.0;
}

double ranking_score(double confidence, double aggregate_entropy, double alpha) {
  return confidence * std::pow(1.0 + aggregate_entropy, -alpha);
}

double discrepancy_estimate(double aggregate_entropy, double alpha) {
  return alpha * std::log1p(aggregate_entropy);
}

TokenId greedy_proposal(std::span<const double> distribution) {
  if (distribution.empty()) throw std::domain_error("empty distribution");
  // max_element returns the first maximum, i.e. the lowest token id.
  return static_cast<TokenId>(
      std::max_element(distribution.begin(), distribution.end()) - distribution.begin());
}

namespace {

// Head matching the aggregate value, preferring the lowest head id. For the
// mean there is usually no exact match, so the closest head is taken.
std::size_t select_head(std::span<const double> entropies, double aggregate) {
  std::size_t best = 0;
  double best_gap = std::abs(entropies[0] - aggregate);
  for (std::size_t h = 1; h < entropies.size(); ++h) {
    const double gap = std::abs(entropies[h] - aggregate);
    if (gap < best_gap) {
      best = h;
      best_gap = gap;
    }
  }
  return best;
}

}  // namespace

std::vector<CandidateScore> score_candidates(const DenoiserOutput& output,
                                             const GroundingConfig& config) {
  config.validate();
  validate_output(output);
  std::vector<CandidateScore> scores;
  scores.reserve(output.candidates.size());
  for (const auto& cand : output.candidates) {
    CandidateScore s;
    s.position = cand.position;
    s.proposal = greedy_proposal(cand.distribution);
    s.confidence = cand.distribution[static_cast<std::size_t>(s.proposal)];
    if (!(s.confidence > 0.0)) {
      throw std::domain_error("greedy proposal at position " + std::to_string(cand.position) +
                              " has zero probability");
    }
    s.aggregation = config.aggregation;

    const auto& att = cand.attention;
    std::vector<double> peaks(att.heads);
    s.head_entropies.resize(att.heads);
    for (std::size_t h = 0; h < att.heads; ++h) {
      const auto dist = renormalize_attention(att.row(h), config.delta);
      s.head_entropies[h] = head_entropy(dist);
      peaks[h] = *std::max_element(dist.begin(), dist.end());
    }
    s.aggregate_entropy = aggregate_entropies(s.head_entropies, config);
    s.selected_head = select_head(s.head_entropies, s.aggregate_entropy);
    s.selected_peak = peaks[s.selected_head];
    s.multiplier = 1.0 / (1.0 + s.aggregate_entropy);
    s.discrepancy_estimate = discrepancy_estimate(s.aggregate_entropy, config.alpha);
    s.ranking_score = ranking_score(s.confidence, s.aggregate_entropy, config.alpha);
    scores.push_back(std::move(s));
  }
  return scores;
}

}  // namespace visage
