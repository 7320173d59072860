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

// Parallel unmasking loop with a selectable ranking policy, plus the trace it
// records.
//
// Each step: take the masked positions of the active block, run the denoiser,
// score every candidate, commit the top min(k_t, |C_t|) by ranking score. The
// baseline policy ranks by raw confidence; the grounded policy ranks by
// c * (1 + H)^(-alpha). Because the set objective is a sum of per-candidate
// log scores, top-k by score is its exact maximizer.

#ifndef VISAGE_DECODER_HPP_
#define VISAGE_DECODER_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visage/core.hpp"
#include "visage/denoiser.hpp"
#include "visage/grounding.hpp"

namespace visage {

enum class DecodeMode { kBaseline, kVisage };
enum class TieBreak { kLowestPosition, kHighestConfidenceThenLowestPosition };

std::string_view to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view text);
std::string_view to_string(TieBreak tie_break);
TieBreak parse_tie_break(std::string_view text);

struct DecodePolicy {
  DecodeMode mode = DecodeMode::kVisage;
  // In baseline mode alpha is ignored (treated as 0); beta, delta and the
  // aggregation still determine the entropies recorded in the trace.
  GroundingConfig grounding;
  TieBreak tie_break = TieBreak::kLowestPosition;

  static DecodePolicy baseline() { return {DecodeMode::kBaseline, {}, TieBreak::kLowestPosition}; }
  static DecodePolicy visage(double alpha = 0.5, double beta = 0.25) {
    DecodePolicy p;
    p.grounding.alpha = alpha;
    p.grounding.beta = beta;
    return p;
  }

  // Grounding config actually used for scoring.
  GroundingConfig effective_grounding() const;
  std::string label() const;

  friend bool operator==(const DecodePolicy&, const DecodePolicy&) = default;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t budget = 0;
  std::vector<Position> candidates;
  std::vector<CandidateScore> scores;
  std::map<Position, TokenId> committed;

  std::vector<Position> committed_positions() const;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct TraceLabels {
  std::optional<Position> grounded_position;
  std::optional<Position> ungrounded_position;
  std::optional<Position> tracked_position;
  double language_prior_reference = kDefaultLanguagePriorReference;

  static TraceLabels from(const ScenarioSpec& spec);

  friend bool operator==(const TraceLabels&, const TraceLabels&) = default;
};

struct DecodeTrace {
  std::string fingerprint;
  std::string scenario_name;
  std::string scenario_fingerprint;
  std::uint64_t seed = 0;
  DecodePolicy policy;
  UnmaskSchedule schedule;
  std::int64_t vocab_size = 0;
  TokenId mask_id = 0;
  TraceLabels labels;
  std::vector<StepRecord> steps;
  std::vector<TokenId> final_response;

  // Step at which `position` was committed, if any.
  std::optional<std::size_t> commit_step(Position position) const;

  friend bool operator==(const DecodeTrace&, const DecodeTrace&) = default;
};

struct DecodeResult {
  std::vector<TokenId> response;
  DecodeTrace trace;
};

// Raised when the decode loop and its schedule disagree; indicates a bug.
class InternalDecodeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Indices of the min(k, |values|) largest values, largest first. Ties go to
// the lower index. Total order on the raw doubles; no epsilon.
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);

// Positions of the min(k, |scores|) largest ranking scores, ascending.
std::vector<Position> select_topk(std::span<const CandidateScore> scores, std::size_t k,
                                  TieBreak tie_break = TieBreak::kLowestPosition);

std::string decode_fingerprint(const DecodePolicy& policy, const UnmaskSchedule& schedule,
                               const std::string& scenario_fingerprint, std::uint64_t seed);

DecodeResult decode(const Denoiser& denoiser, const UnmaskSchedule& schedule,
                    const DecodePolicy& policy, std::uint64_t seed);

// Same, with scenario labels and name carried into the trace.
DecodeResult decode(const ScriptedDenoiser& denoiser, const UnmaskSchedule& schedule,
                    const DecodePolicy& policy, std::uint64_t seed);

// Applies every step's committed map through commit() starting from an
// all-MASK response. Throws CommitViolation if the trace rewrites a position.
std::vector<TokenId> replay_trace(const DecodeTrace& trace);

struct PolicyDivergence {
  std::size_t policy_index = 0;
  // First step whose committed set differs from the reference policy's.
  std::optional<std::size_t> first_divergent_step;
  bool final_agreement = true;
};

struct ComparisonReport {
  std::vector<DecodeResult> runs;
  // One entry per policy after the first, relative to policies[0].
  std::vector<PolicyDivergence> divergences;
};

ComparisonReport compare_policies(const ScriptedDenoiser& denoiser,
                                  const UnmaskSchedule& schedule,
                                  std::span<const DecodePolicy> policies, std::uint64_t seed);

std::optional<std::size_t> first_divergent_step(const DecodeTrace& a, const DecodeTrace& b);

inline constexpr int kTraceSchemaVersion = 1;

// JSON lines: a header record, one record per step, a final record.
void write_trace_jsonl(const DecodeTrace& trace, std::ostream& out);
DecodeTrace read_trace_jsonl(std::istream& in);
void save_trace(const DecodeTrace& trace, const std::string& path);
DecodeTrace load_trace(const std::string& path);

}  // namespace visage

#endif  // VISAGE_DECODER_HPP_
