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

// Sequence state, vocabulary and block unmasking schedule for parallel
// masked decoding.
//
// Response positions are 1-indexed everywhere: in candidate sets, commit
// maps, traces and error messages.

#ifndef VISAGE_CORE_HPP_
#define VISAGE_CORE_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace visage {

using TokenId = std::int32_t;
// 1-indexed response position.
using Position = std::uint32_t;

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a commit would rewrite an already committed position or would
// write an illegal token.
class CommitViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Vocabulary {
 public:
  // mask_id defaults to `size`, i.e. just past the proposal range.
  explicit Vocabulary(std::int64_t size);
  Vocabulary(std::int64_t size, TokenId mask_id);

  std::int64_t size() const { return size_; }
  TokenId mask_id() const { return mask_id_; }
  bool is_proposal_token(TokenId token) const {
    return token >= 0 && token < size_ && token != mask_id_;
  }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::int64_t size_;
  TokenId mask_id_;
};

struct UnmaskSchedule {
  std::size_t gen_length = 0;
  std::size_t steps = 0;
  std::size_t block_length = 0;
  // budgets[t - 1] is k_t.
  std::vector<std::size_t> budgets;

  std::size_t num_blocks() const { return gen_length / block_length; }
  std::size_t steps_per_block() const { return steps / num_blocks(); }
  std::size_t budget(std::size_t step) const { return budgets.at(step - 1); }

  friend bool operator==(const UnmaskSchedule&, const UnmaskSchedule&) = default;
};

// Uniform per-block budgets. Throws ScheduleError naming the first failing
// divisibility constraint.
UnmaskSchedule make_block_schedule(std::size_t gen_length, std::size_t steps,
                                   std::size_t block_length);

// Immutable snapshot of [x; v; y_1..y_L] at step t. Only the response part is
// materialized; the prompt and image segments are carried as lengths.
class SequenceState {
 public:
  // All-MASK response at step 1.
  static SequenceState initial(Vocabulary vocab, std::size_t gen_length,
                               std::size_t prompt_len = 0,
                               std::size_t num_image_tokens = 0);

  // Arbitrary state, for tests and trace replay. Every entry must be either
  // the mask id or a legal proposal token.
  SequenceState(Vocabulary vocab, std::vector<TokenId> response,
                std::size_t step, std::size_t prompt_len = 0,
                std::size_t num_image_tokens = 0);

  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t prompt_len() const { return prompt_len_; }
  std::size_t num_image_tokens() const { return num_image_tokens_; }
  std::size_t step() const { return step_; }
  std::size_t gen_length() const { return response_.size(); }
  std::span<const TokenId> response() const { return response_; }

  TokenId at(Position position) const;
  bool is_masked(Position position) const { return at(position) == vocab_.mask_id(); }
  std::size_t mask_count() const;

  friend bool operator==(const SequenceState&, const SequenceState&) = default;

 private:
  Vocabulary vocab_;
  std::size_t prompt_len_ = 0;
  std::size_t num_image_tokens_ = 0;
  std::vector<TokenId> response_;
  std::size_t step_ = 1;
};

// Masked positions inside the earliest block that still has a mask, in
// ascending order. Empty only once the whole response is committed.
std::vector<Position> candidate_set(const SequenceState& state,
                                    const UnmaskSchedule& schedule);

// Writes the mapped tokens and advances the step. Every mapped position must
// currently be MASK.
SequenceState commit(const SequenceState& state,
                     const std::map<Position, TokenId>& committed);

std::string format_positions(std::span<const Position> positions);

}  // namespace visage

#endif  // VISAGE_CORE_HPP_
