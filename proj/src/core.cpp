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

#include "visage/core.hpp"

#include <algorithm>
#include <sstream>

namespace visage {

Vocabulary::Vocabulary(std::int64_t size)
    : Vocabulary(size, static_cast<TokenId>(size)) {}

Vocabulary::Vocabulary(std::int64_t size, TokenId mask_id)
    : size_(size), mask_id_(mask_id) {
  if (size < 2) {
    throw std::invalid_argument("vocabulary size must be at least 2, got " +
                                std::to_string(size));
  }
  if (mask_id >= 0 && mask_id < size) {
    throw std::invalid_argument("mask id " + std::to_string(mask_id) +
                                " collides with the proposal range [0, " +
                                std::to_string(size) + ")");
  }
}

UnmaskSchedule make_block_schedule(std::size_t gen_length, std::size_t steps,
                                   std::size_t block_length) {
  auto fail = [&](const std::string& what) {
    std::ostringstream os;
    os << "invalid schedule (gen_length=" << gen_length << ", steps=" << steps
       << ", block_length=" << block_length << "): " << what;
    throw ScheduleError(os.str());
  };
  if (gen_length == 0) fail("gen_length must be positive");
  if (steps == 0) fail("steps must be positive");
  if (block_length == 0) fail("block_length must be positive");
  if (gen_length % block_length != 0) fail("block_length must divide gen_length");
  const std::size_t blocks = gen_length / block_length;
  if (steps % blocks != 0) {
    fail("steps must be divisible by the number of blocks (gen_length / block_length = " +
         std::to_string(blocks) + ")");
  }
  const std::size_t steps_per_block = steps / blocks;
  if (block_length % steps_per_block != 0) {
    fail("block_length must be divisible by steps per block (" +
         std::to_string(steps_per_block) + ")");
  }

  UnmaskSchedule schedule;
  schedule.gen_length = gen_length;
  schedule.steps = steps;
  schedule.block_length = block_length;
  schedule.budgets.assign(steps, block_length / steps_per_block);
  return schedule;
}

SequenceState SequenceState::initial(Vocabulary vocab, std::size_t gen_length,
                                     std::size_t prompt_len,
                                     std::size_t num_image_tokens) {
  const TokenId mask = vocab.mask_id();
  return SequenceState(std::move(vocab), std::vector<TokenId>(gen_length, mask), 1,
                       prompt_len, num_image_tokens);
}

SequenceState::SequenceState(Vocabulary vocab, std::vector<TokenId> response,
                             std::size_t step, std::size_t prompt_len,
                             std::size_t num_image_tokens)
    : vocab_(std::move(vocab)),
      prompt_len_(prompt_len),
      num_image_tokens_(num_image_tokens),
      response_(std::move(response)),
      step_(step) {
  if (step_ == 0) throw std::invalid_argument("step is 1-indexed");
  for (std::size_t i = 0; i < response_.size(); ++i) {
    const TokenId token = response_[i];
    if (token != vocab_.mask_id() && !vocab_.is_proposal_token(token)) {
      throw std::invalid_argument("response position " + std::to_string(i + 1) +
                                  " holds illegal token " + std::to_string(token));
    }
  }
}

TokenId SequenceState::at(Position position) const {
  if (position == 0 || position > response_.size()) {
    throw std::out_of_range("position " + std::to_string(position) +
                            " outside response 1.." + std::to_string(response_.size()));
  }
  return response_[position - 1];
}

std::size_t SequenceState::mask_count() const {
  return static_cast<std::size_t>(
      std::count(response_.begin(), response_.end(), vocab_.mask_id()));
}

std::vector<Position> candidate_set(const SequenceState& state,
                                    const UnmaskSchedule& schedule) {
  if (state.gen_length() != schedule.gen_length) {
    throw ScheduleError("state has " + std::to_string(state.gen_length()) +
                        " response positions but schedule expects " +
                        std::to_string(schedule.gen_length));
  }
  if (state.step() > schedule.steps) {
    throw ScheduleError("step " + std::to_string(state.step()) +
                        " exceeds schedule length " + std::to_string(schedule.steps));
  }
  const auto response = state.response();
  const TokenId mask = state.vocabulary().mask_id();
  for (std::size_t begin = 0; begin < response.size(); begin += schedule.block_length) {
    std::vector<Position> masked;
    const std::size_t end = begin + schedule.block_length;
    for (std::size_t i = begin; i < end; ++i) {
      if (response[i] == mask) masked.push_back(static_cast<Position>(i + 1));
    }
    if (!masked.empty()) return masked;
  }
  return {};
}

SequenceState commit(const SequenceState& state,
                     const std::map<Position, TokenId>& committed) {
  std::vector<TokenId> next(state.response().begin(), state.response().end());
  const Vocabulary& vocab = state.vocabulary();
  for (const auto& [position, token] : committed) {
    if (position == 0 || position > next.size()) {
      throw CommitViolation("commit to position " + std::to_string(position) +
                            " outside response 1.." + std::to_string(next.size()));
    }
    if (token == vocab.mask_id()) {
      throw CommitViolation("commit of the mask token at position " +
                            std::to_string(position));
    }
    if (!vocab.is_proposal_token(token)) {
      throw CommitViolation("commit of out-of-vocabulary token " + std::to_string(token) +
                            " at position " + std::to_string(position));
    }
    TokenId& slot = next[position - 1];
    if (slot != vocab.mask_id()) {
      throw CommitViolation("position " + std::to_string(position) +
                            " already holds token " + std::to_string(slot) +
                            " and cannot be rewritten");
    }
    slot = token;
  }
  return SequenceState(vocab, std::move(next), state.step() + 1, state.prompt_len(),
                       state.num_image_tokens());
}

std::string format_positions(std::span<const Position> positions) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (i) os << ", ";
    os << positions[i];
  }
  os << '}';
  return os.str();
}

}  // namespace visage
