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

// Random multi-block scenarios shared by the unit and acceptance tests.

#ifndef VISAGE_TESTS_SCENARIO_GEN_HPP_
#define VISAGE_TESTS_SCENARIO_GEN_HPP_

#include <string>
#include <vector>

#include "visage/denoiser.hpp"
#include "visage/random.hpp"

namespace visage::testing {

// Every position gets one wildcard entry; a third of the positions also get
// step-specific overrides so scores change as decoding proceeds. Confidences
// are drawn from a small grid to force ties.
inline ScenarioSpec random_scenario(std::uint64_t seed, std::size_t index) {
  Rng rng(mix_seed(seed, index, 0x5ce7));
  ScenarioSpec spec;
  spec.name = "random-" + std::to_string(index);
  spec.vocab_size = 16;
  spec.heads = static_cast<std::size_t>(rng.uniform_int(1, 8));
  spec.image_tokens = static_cast<std::size_t>(rng.uniform_int(2, 32));
  spec.seed = rng.next();
  const auto blocks = static_cast<std::size_t>(rng.uniform_int(1, 3));
  spec.block_length = static_cast<std::size_t>(rng.uniform_int(1, 4)) * 2;
  spec.gen_length = blocks * spec.block_length;
  // Either one token per step or two per step.
  spec.steps = rng.uniform() < 0.5 ? spec.gen_length : spec.gen_length / 2;

  auto make_entry = [&](std::size_t step, Position p) {
    GeneratedEntry g;
    g.proposal = static_cast<TokenId>(rng.uniform_int(0, 15));
    g.confidence = 0.2 + 0.1 * static_cast<double>(rng.uniform_int(0, 7));
    const auto mode = rng.uniform_int(0, 2);
    g.mode = mode == 0 ? AttentionMode::kPeaked
                       : (mode == 1 ? AttentionMode::kDiffuse : AttentionMode::kMixed);
    g.target_column = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(spec.image_tokens) - 1));
    g.sharpness = rng.uniform(1.0, 14.0);
    g.sharp_heads = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(spec.heads)));
    g.noise = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.0, 0.6);
    g.noise_seed = rng.next();
    g.attention_mass = rng.uniform(0.2, 1.0);
    spec.entries.push_back({step, p, g});
  };
  for (Position p = 1; p <= spec.gen_length; ++p) {
    make_entry(0, p);
    if (rng.uniform() < 0.33) {
      make_entry(static_cast<std::size_t>(
                     rng.uniform_int(1, static_cast<std::int64_t>(spec.steps))),
                 p);
    }
  }
  return spec;
}

}  // namespace visage::testing

#endif  // VISAGE_TESTS_SCENARIO_GEN_HPP_
