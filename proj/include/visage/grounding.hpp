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

// Grounding-aware scoring of decode candidates.
//
// For every candidate the raw cross-attention of each head is smoothed and
// renormalized over the image tokens, its Shannon entropy (natural log) is
// taken, and the head entropies are reduced to one aggregate H by a discrete
// beta-quantile: the ceil(beta * M)-th smallest value. A single sharp head
// therefore cannot lower H unless ceil(beta * M) == 1.
//
// The aggregate feeds a multiplicative penalty on the greedy confidence c:
//
//   u = c * (1 + H)^(-alpha),  log u = log c - alpha * log(1 + H).
//
// alpha = 0 leaves the confidence untouched.

#ifndef VISAGE_GROUNDING_HPP_
#define VISAGE_GROUNDING_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "visage/core.hpp"
#include "visage/denoiser.hpp"

namespace visage {

enum class Aggregation { kQuantile, kMin, kMean };

std::string_view to_string(Aggregation aggregation);
Aggregation parse_aggregation(std::string_view text);

struct GroundingConfig {
  double alpha = 0.5;
  double beta = 0.25;
  double delta = 1e-8;
  Aggregation aggregation = Aggregation::kQuantile;
  // Only consumed when a synthetic true objective is built.
  std::optional<double> lambda_true;

  // Throws std::invalid_argument on out-of-range fields.
  void validate() const;

  friend bool operator==(const GroundingConfig&, const GroundingConfig&) = default;
};

struct CandidateScore {
  Position position = 0;
  TokenId proposal = 0;
  double confidence = 0.0;
  std::vector<double> head_entropies;
  double aggregate_entropy = 0.0;
  Aggregation aggregation = Aggregation::kQuantile;
  // Head whose entropy sits at the quantile index (ties resolved to the lower
  // head id). Used for trajectory export.
  std::size_t selected_head = 0;
  // max_j of the renormalized attention of selected_head.
  double selected_peak = 0.0;
  double discrepancy_estimate = 0.0;  // alpha * log(1 + H)
  double multiplier = 1.0;            // 1 / (1 + H)
  double ranking_score = 0.0;         // c * multiplier^alpha

  friend bool operator==(const CandidateScore&, const CandidateScore&) = default;
};

// (row_j + delta / N) / (sum(row) + delta). Throws std::domain_error on a
// negative or non-finite weight, an empty row or a non-positive delta.
std::vector<double> renormalize_attention(std::span<const double> row, double delta);

// -sum p log p in nats. Zero entries contribute nothing.
double head_entropy(std::span<const double> dist);

// 1-based rank ceil(beta * M), clamped to [1, M].
std::size_t quantile_rank(double beta, std::size_t count);

// The ceil(beta * M)-th smallest entropy. Throws std::domain_error on an
// empty input or beta outside (0, 1].
double quantile_aggregate(std::span<const double> entropies, double beta);

double aggregate_entropies(std::span<const double> entropies, const GroundingConfig& config);

double ranking_score(double confidence, double aggregate_entropy, double alpha);
double discrepancy_estimate(double aggregate_entropy, double alpha);

// Greedy proposal: argmax token, lowest id on ties.
TokenId greedy_proposal(std::span<const double> distribution);

std::vector<CandidateScore> score_candidates(const DenoiserOutput& output,
                                             const GroundingConfig& config);

}  // namespace visage

#endif  // VISAGE_GROUNDING_HPP_
