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

// The model boundary. A Denoiser maps a sequence state and a set of masked
// candidate positions to a token distribution and a heads x image-tokens block
// of raw cross-attention weights per candidate.
//
// ScriptedDenoiser replays a ScenarioSpec: a table of per-(step, position)
// entries that are either explicit (distribution + attention given verbatim)
// or generated from a handful of knobs (proposal, confidence, attention mode,
// sharpness, noise). Scenario files are JSON, see docs/formats.md.

#ifndef VISAGE_DENOISER_HPP_
#define VISAGE_DENOISER_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "visage/core.hpp"

namespace visage {

class ScenarioCoverageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScenarioFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major heads x image_tokens matrix of raw (unnormalized) attention.
struct AttentionBlock {
  std::size_t heads = 0;
  std::size_t image_tokens = 0;
  std::vector<double> weights;

  AttentionBlock() = default;
  AttentionBlock(std::size_t m, std::size_t n) : heads(m), image_tokens(n), weights(m * n, 0.0) {}

  std::span<const double> row(std::size_t head) const {
    return std::span<const double>(weights).subspan(head * image_tokens, image_tokens);
  }
  std::span<double> row(std::size_t head) {
    return std::span<double>(weights).subspan(head * image_tokens, image_tokens);
  }

  friend bool operator==(const AttentionBlock&, const AttentionBlock&) = default;
};

struct CandidateOutput {
  Position position = 0;
  std::vector<double> distribution;
  AttentionBlock attention;

  friend bool operator==(const CandidateOutput&, const CandidateOutput&) = default;
};

struct DenoiserOutput {
  std::vector<CandidateOutput> candidates;

  friend bool operator==(const DenoiserOutput&, const DenoiserOutput&) = default;
};

inline constexpr double kDistributionSumTolerance = 1e-9;

// Distributions non-negative and summing to 1 within 1e-9, attention
// non-negative and finite, consistent shapes. Throws std::domain_error.
void validate_output(const DenoiserOutput& output);

class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual SequenceState initial_state() const = 0;
  // One (distribution, attention) pair per candidate, in candidate order.
  // Must be a pure function of (state, candidates, seed).
  virtual DenoiserOutput evaluate(const SequenceState& state,
                                  std::span<const Position> candidates,
                                  std::uint64_t seed) const = 0;
  // Stable content hash; feeds the decode fingerprint.
  virtual std::string fingerprint() const = 0;
};

enum class AttentionMode { kPeaked, kDiffuse, kMixed };

std::string_view to_string(AttentionMode mode);
AttentionMode parse_attention_mode(std::string_view text);

struct GeneratedEntry {
  TokenId proposal = 0;
  double confidence = 1.0;
  AttentionMode mode = AttentionMode::kDiffuse;
  // Image-token column that peaked heads concentrate on (0-based).
  std::size_t target_column = 0;
  // kappa in softmax(kappa * onehot(target) + noise * z). +inf gives an exact
  // one-hot row.
  double sharpness = 8.0;
  // Number of leading heads that are peaked in kMixed mode.
  std::size_t sharp_heads = 0;
  // Standard deviation of the Gaussian logit noise.
  double noise = 0.0;
  std::uint64_t noise_seed = 0;
  // Total raw attention mass on image tokens; rows are scaled by it so they do
  // not sum to one before renormalization.
  double attention_mass = 1.0;

  friend bool operator==(const GeneratedEntry&, const GeneratedEntry&) = default;
};

struct ExplicitEntry {
  std::vector<double> distribution;
  AttentionBlock attention;

  friend bool operator==(const ExplicitEntry&, const ExplicitEntry&) = default;
};

struct ScriptEntry {
  // 0 matches every step that has no step-specific entry for this position.
  std::size_t step = 0;
  Position position = 0;
  std::variant<GeneratedEntry, ExplicitEntry> body;

  friend bool operator==(const ScriptEntry&, const ScriptEntry&) = default;
};

inline constexpr int kScenarioSchemaVersion = 1;
inline constexpr double kDefaultLanguagePriorReference = 0.5;

struct ScenarioSpec {
  std::string name = "scenario";
  std::int64_t vocab_size = 32;
  std::size_t gen_length = 0;       // L
  std::size_t heads = 0;            // M
  std::size_t image_tokens = 0;     // N
  std::size_t prompt_len = 0;
  // Suggested schedule; the harness may override it.
  std::size_t steps = 0;
  std::size_t block_length = 0;
  std::uint64_t seed = 0;
  std::vector<ScriptEntry> entries;

  // Labels used by metrics and diagnostics.
  std::optional<Position> grounded_position;
  std::optional<Position> ungrounded_position;
  std::optional<Position> tracked_position;
  // Synthetic ground-truth proxy discrepancy b_i per position.
  std::map<Position, double> true_discrepancy;
  // Stand-in for the language-prior curve in trajectory plots. A simulator
  // convention, not a measured quantity.
  double language_prior_reference = kDefaultLanguagePriorReference;

  Vocabulary vocabulary() const { return Vocabulary(vocab_size); }
  UnmaskSchedule default_schedule() const {
    return make_block_schedule(gen_length, steps, block_length);
  }

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// Structural checks on the spec alone. Throws ScenarioFormatError.
void validate_scenario(const ScenarioSpec& spec);

// Every (step, position) pair the block schedule can make a candidate must
// resolve to exactly one entry. Throws ScenarioCoverageError.
void check_coverage(const ScenarioSpec& spec, const UnmaskSchedule& schedule);

// Raw attention rows of a generated entry, before renormalization.
AttentionBlock generate_attention(const GeneratedEntry& entry, std::size_t heads,
                                  std::size_t image_tokens, std::uint64_t seed);
std::vector<double> generate_distribution(const GeneratedEntry& entry,
                                          std::int64_t vocab_size);

class ScriptedDenoiser final : public Denoiser {
 public:
  explicit ScriptedDenoiser(ScenarioSpec spec);

  const ScenarioSpec& spec() const { return spec_; }

  SequenceState initial_state() const override;
  DenoiserOutput evaluate(const SequenceState& state, std::span<const Position> candidates,
                          std::uint64_t seed) const override;
  std::string fingerprint() const override { return fingerprint_; }

  const ScriptEntry& lookup(std::size_t step, Position position) const;

 private:
  ScenarioSpec spec_;
  std::map<std::pair<std::size_t, Position>, std::size_t> index_;
  std::string fingerprint_;
};

struct ShortcutOptions {
  std::int64_t vocab_size = 32;
  // Sharpness of the grounded candidate's peaked heads. At N = 16 this puts
  // ~0.9999 of each peaked row on the target column.
  double sharpness = 12.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  double attention_mass = 0.5;
};

// Two candidates in one block, one step each: S at position 1 (confident,
// diffuse on every head) and G at position 2 (less confident, peaked on the
// first `sharp_heads` heads, diffuse on the rest).
ScenarioSpec make_shortcut_scenario(double c_shortcut, double c_grounded,
                                    std::size_t image_tokens, std::size_t heads,
                                    std::size_t sharp_heads,
                                    const ShortcutOptions& options = {});

enum class TrajectoryKind { kGrounded, kShortcut };

std::string_view to_string(TrajectoryKind kind);

struct TrajectoryOptions {
  std::size_t image_tokens = 16;
  std::size_t heads = 8;
  std::int64_t vocab_size = 32;
  // Peak renormalized attention of the tracked position at the first and last
  // step for the grounded kind.
  double grounded_peak_start = 0.1;
  double grounded_peak_end = 0.9;
  // Tracked peak for the shortcut kind, as a multiple of the uniform 1/N.
  double shortcut_peak_factor = 1.5;
  double reference = kDefaultLanguagePriorReference;
};

// `steps` positions decoded one per step. The tracked position 1 has the
// lowest confidence and is committed at the final step; its peak attention
// rises across steps (grounded) or stays near uniform (shortcut).
ScenarioSpec make_trajectory_scenario(TrajectoryKind kind, std::size_t steps,
                                      const TrajectoryOptions& options = {});

// Peak renormalized attention that the trajectory generator targets for the
// tracked position at a given step.
double trajectory_target_peak(TrajectoryKind kind, std::size_t step, std::size_t steps,
                              const TrajectoryOptions& options);

std::string dump_scenario(const ScenarioSpec& spec);
ScenarioSpec parse_scenario(std::string_view text);
ScenarioSpec load_scenario(const std::string& path);
void save_scenario(const ScenarioSpec& spec, const std::string& path);

}  // namespace visage

#endif  // VISAGE_DENOISER_HPP_
