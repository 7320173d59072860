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

#include <cmath>
#include <limits>

#include "doctest.h"
#include "visage/denoiser.hpp"
#include "visage/grounding.hpp"

using namespace visage;

namespace {

ScenarioSpec one_position_spec(ScriptEntry entry, std::size_t heads = 2, std::size_t n = 4) {
  ScenarioSpec spec;
  spec.name = "unit";
  spec.vocab_size = 8;
  spec.gen_length = 1;
  spec.heads = heads;
  spec.image_tokens = n;
  spec.steps = 1;
  spec.block_length = 1;
  spec.entries.push_back(std::move(entry));
  return spec;
}

double row_sum(std::span<const double> row) {
  double s = 0.0;
  for (double w : row) s += w;
  return s;
}

}  // namespace

TEST_CASE("scripted one-hot distribution passes through unchanged") {
  ExplicitEntry ex;
  ex.distribution = {0, 0, 0, 0, 1, 0, 0, 0};
  ex.attention = AttentionBlock(2, 4);
  std::fill(ex.attention.weights.begin(), ex.attention.weights.end(), 0.3);
  const ScriptedDenoiser d(one_position_spec({1, 1, ex}));
  const auto out = d.evaluate(d.initial_state(), std::vector<Position>{1}, 0);
  REQUIRE(out.candidates.size() == 1);
  CHECK(out.candidates[0].distribution == ex.distribution);
  CHECK(greedy_proposal(out.candidates[0].distribution) == 4);
}

TEST_CASE("peaked attention at infinite sharpness is a delta on the target") {
  GeneratedEntry gen;
  gen.proposal = 1;
  gen.confidence = 0.8;
  gen.mode = AttentionMode::kPeaked;
  gen.sharpness = std::numeric_limits<double>::infinity();
  gen.target_column = 5;
  const auto block = generate_attention(gen, 3, 16, 42);
  for (std::size_t h = 0; h < 3; ++h) {
    for (std::size_t j = 0; j < 16; ++j) CHECK(block.row(h)[j] == (j == 5 ? 1.0 : 0.0));
    const auto renorm = renormalize_attention(block.row(h), 1e-8);
    CHECK(head_entropy(renorm) < 1e-6);
  }
}

TEST_CASE("diffuse noiseless attention is uniform") {
  GeneratedEntry gen;
  gen.mode = AttentionMode::kDiffuse;
  const auto block = generate_attention(gen, 4, 16, 1);
  for (double w : block.weights) CHECK(w == 1.0 / 16.0);
  for (std::size_t h = 0; h < 4; ++h) {
    CHECK(head_entropy(renormalize_attention(block.row(h), 1e-8)) ==
          doctest::Approx(std::log(16.0)).epsilon(1e-14));
  }
}

TEST_CASE("raw attention rows carry the configured mass, not unit mass") {
  GeneratedEntry gen;
  gen.mode = AttentionMode::kMixed;
  gen.sharp_heads = 2;
  gen.sharpness = 6.0;
  gen.noise = 0.3;
  gen.attention_mass = 0.4;
  const auto block = generate_attention(gen, 5, 8, 3);
  for (std::size_t h = 0; h < 5; ++h) CHECK(row_sum(block.row(h)) == doctest::Approx(0.4));
}

TEST_CASE("peaked head entropy decreases with sharpness") {
  GeneratedEntry gen;
  gen.mode = AttentionMode::kPeaked;
  double previous = std::log(16.0) + 1e-12;
  for (double kappa : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
    gen.sharpness = kappa;
    const auto block = generate_attention(gen, 1, 16, 0);
    const double h = head_entropy(renormalize_attention(block.row(0), 1e-8));
    CHECK(h < previous);
    previous = h;
  }
}

TEST_CASE("evaluate is a pure function of state, spec and seed") {
  const auto spec = make_shortcut_scenario(0.9, 0.6, 16, 8, 3, {32, 8.0, 0.4, 5, 0.5});
  const ScriptedDenoiser a(spec);
  const ScriptedDenoiser b(spec);
  const std::vector<Position> cands{1, 2};
  const auto x = a.evaluate(a.initial_state(), cands, 99);
  CHECK(x == b.evaluate(b.initial_state(), cands, 99));
  CHECK(x == a.evaluate(a.initial_state(), cands, 99));
  CHECK_FALSE(x == a.evaluate(a.initial_state(), cands, 100));
  CHECK_NOTHROW(validate_output(x));
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("missing script entry is a coverage error") {
  GeneratedEntry gen;
  gen.proposal = 2;
  gen.confidence = 0.7;
  auto spec = one_position_spec({1, 1, gen});
  spec.steps = 2;
  spec.gen_length = 2;
  spec.block_length = 2;
  const ScriptedDenoiser d(spec);
  CHECK_THROWS_AS(d.evaluate(d.initial_state(), std::vector<Position>{2}, 0),
                  ScenarioCoverageError);
  CHECK_THROWS_AS(check_coverage(spec, spec.default_schedule()), ScenarioCoverageError);
}

TEST_CASE("shortcut scenario shape") {
  const auto spec = make_shortcut_scenario(0.9, 0.6, 16, 8, 8);
  CHECK(spec.gen_length == 2);
  CHECK(spec.ungrounded_position == Position{1});
  CHECK(spec.grounded_position == Position{2});
  CHECK_NOTHROW(check_coverage(spec, spec.default_schedule()));

  const ScriptedDenoiser d(spec);
  const auto out = d.evaluate(d.initial_state(), std::vector<Position>{1, 2}, 0);
  const auto scores = score_candidates(out, {});
  CHECK(scores[0].confidence == doctest::Approx(0.9));
  CHECK(scores[1].confidence == doctest::Approx(0.6));
  for (double h : scores[0].head_entropies) CHECK(h == doctest::Approx(std::log(16.0)));
  for (double h : scores[1].head_entropies) CHECK(h < 0.01);

  CHECK_THROWS_AS(make_shortcut_scenario(0.6, 0.9, 16, 8, 8), std::invalid_argument);
  CHECK_THROWS_AS(make_shortcut_scenario(0.9, 0.6, 16, 8, 9), std::invalid_argument);
  CHECK_NOTHROW(make_shortcut_scenario(0.5, 0.5 - 1e-6, 16, 8, 8));
}

TEST_CASE("trajectory scenario peaks follow the generator contract") {
  for (auto kind : {TrajectoryKind::kGrounded, TrajectoryKind::kShortcut}) {
    for (std::size_t steps : {2u, 8u}) {
      const auto spec = make_trajectory_scenario(kind, steps);
      const ScriptedDenoiser d(spec);
      double previous = 0.0;
      for (std::size_t t = 1; t <= steps; ++t) {
        // The tracked position stays masked until the last step.
        std::vector<TokenId> response(steps, spec.vocabulary().mask_id());
        for (std::size_t i = 1; i < t; ++i) response[steps - i] = 4;
        const SequenceState state(spec.vocabulary(), response, t);
        const auto out = d.evaluate(state, std::vector<Position>{1}, 0);
        const auto row = renormalize_attention(out.candidates[0].attention.row(0), 1e-8);
        const double peak = *std::max_element(row.begin(), row.end());
        CHECK(peak == doctest::Approx(trajectory_target_peak(kind, t, steps, {})).epsilon(1e-6));
        if (kind == TrajectoryKind::kGrounded) {
          CHECK(peak > previous);
          if (t == steps) CHECK(peak > spec.language_prior_reference);
          if (t == 1) CHECK(peak < spec.language_prior_reference);
        } else {
          CHECK(peak < spec.language_prior_reference);
        }
        previous = peak;
      }
    }
  }
  CHECK_THROWS_AS(make_trajectory_scenario(TrajectoryKind::kGrounded, 1), std::invalid_argument);
}

TEST_CASE("scenario JSON round-trips and rejects unknown versions") {
  auto spec = make_shortcut_scenario(0.9, 0.6, 16, 8, 2, {32, 9.5, 0.25, 3, 0.5});
  ExplicitEntry ex;
  ex.distribution = std::vector<double>(32, 0.0);
  ex.distribution[0] = 0.5;
  ex.distribution[1] = 0.125;
  ex.distribution[4] = 0.375;
  ex.attention = AttentionBlock(8, 16);
  ex.attention.weights[3] = 2.5;
  spec.steps = 2;
  spec.entries.push_back({2, 1, ex});
  GeneratedEntry delta;
  delta.proposal = 5;
  delta.confidence = 0.5;
  delta.mode = AttentionMode::kPeaked;
  delta.sharpness = std::numeric_limits<double>::infinity();
  spec.entries.push_back({2, 2, delta});

  const auto text = dump_scenario(spec);
  CHECK(parse_scenario(text) == spec);

  auto bumped = text;
  bumped.replace(bumped.find("\"schema_version\": 1"), 19, "\"schema_version\": 2");
  CHECK_THROWS_AS(parse_scenario(bumped), ScenarioFormatError);
  CHECK_THROWS_AS(parse_scenario("{\"vocab_size\": 4}"), ScenarioFormatError);
  CHECK_THROWS_AS(parse_scenario("not json"), ScenarioFormatError);
}

TEST_CASE("scenario validation") {
  GeneratedEntry gen;
  gen.proposal = 1;
  gen.confidence = 0.9;
  auto spec = one_position_spec({1, 1, gen});
  CHECK_NOTHROW(validate_scenario(spec));

  auto dup = spec;
  dup.entries.push_back(dup.entries.front());
  CHECK_THROWS_AS(validate_scenario(dup), ScenarioFormatError);

  auto bad_kappa = spec;
  auto& g = std::get<GeneratedEntry>(bad_kappa.entries[0].body);
  g.mode = AttentionMode::kPeaked;
  g.sharpness = 0.0;
  CHECK_THROWS_AS(validate_scenario(bad_kappa), ScenarioFormatError);

  auto not_argmax = spec;
  std::get<GeneratedEntry>(not_argmax.entries[0].body).confidence = 0.1;
  CHECK_THROWS_AS(validate_scenario(not_argmax), ScenarioFormatError);

  ExplicitEntry ex;
  ex.distribution = std::vector<double>(8, 0.1);
  ex.attention = AttentionBlock(2, 4);
  CHECK_THROWS_AS(validate_scenario(one_position_spec({1, 1, ex})), ScenarioFormatError);
}
