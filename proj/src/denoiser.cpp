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

#include "visage/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "visage/random.hpp"

namespace visage {

using nlohmann::json;

namespace {

std::string where(std::size_t step, Position position) {
  std::ostringstream os;
  os << "(step " << step << ", position " << position << ")";
  return os.str();
}

void check_distribution(std::span<const double> dist, Position position) {
  double sum = 0.0;
  for (double p : dist) {
    if (!std::isfinite(p) || p < 0.0) {
      throw std::domain_error("distribution at position " + std::to_string(position) +
                              " has a negative or non-finite entry");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kDistributionSumTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << "distribution at position " << position << " sums to " << sum;
    throw std::domain_error(os.str());
  }
}

}  // namespace

void validate_output(const DenoiserOutput& output) {
  for (const auto& cand : output.candidates) {
    if (cand.distribution.empty()) {
      throw std::domain_error("empty distribution at position " +
                              std::to_string(cand.position));
    }
    check_distribution(cand.distribution, cand.position);
    const auto& att = cand.attention;
    if (att.heads == 0 || att.image_tokens == 0 ||
        att.weights.size() != att.heads * att.image_tokens) {
      throw std::domain_error("malformed attention block at position " +
                              std::to_string(cand.position));
    }
    for (double w : att.weights) {
      if (!std::isfinite(w) || w < 0.0) {
        throw std::domain_error("negative or non-finite attention weight at position " +
                                std::to_string(cand.position));
      }
    }
  }
}

std::string_view to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kPeaked: return "peaked";
    case AttentionMode::kDiffuse: return "diffuse";
    case AttentionMode::kMixed: return "mixed";
  }
  return "?";
}

AttentionMode parse_attention_mode(std::string_view text) {
  if (text == "peaked") return AttentionMode::kPeaked;
  if (text == "diffuse") return AttentionMode::kDiffuse;
  if (text == "mixed") return AttentionMode::kMixed;
  throw ScenarioFormatError("unknown attention mode '" + std::string(text) + "'");
}

std::string_view to_string(TrajectoryKind kind) {
  return kind == TrajectoryKind::kGrounded ? "grounded" : "shortcut";
}

AttentionBlock generate_attention(const GeneratedEntry& entry, std::size_t heads,
                                  std::size_t image_tokens, std::uint64_t seed) {
  AttentionBlock block(heads, image_tokens);
  std::vector<double> logits(image_tokens);
  for (std::size_t h = 0; h < heads; ++h) {
    const bool sharp = entry.mode == AttentionMode::kPeaked ||
                       (entry.mode == AttentionMode::kMixed && h < entry.sharp_heads);
    auto row = block.row(h);
    if (sharp && std::isinf(entry.sharpness)) {
      row[entry.target_column] = entry.attention_mass;
      continue;
    }
    Rng rng(mix_seed(seed, entry.noise_seed, h));
    for (std::size_t j = 0; j < image_tokens; ++j) {
      logits[j] = (sharp && j == entry.target_column) ? entry.sharpness : 0.0;
      if (entry.noise > 0.0) logits[j] += entry.noise * rng.normal();
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t j = 0; j < image_tokens; ++j) {
      row[j] = std::exp(logits[j] - top);
      z += row[j];
    }
    for (double& w : row) w = entry.attention_mass * (w / z);
  }
  return block;
}

std::vector<double> generate_distribution(const GeneratedEntry& entry,
                                          std::int64_t vocab_size) {
  const auto v = static_cast<std::size_t>(vocab_size);
  std::vector<double> dist(v, (1.0 - entry.confidence) / static_cast<double>(v - 1));
  dist[static_cast<std::size_t>(entry.proposal)] = entry.confidence;
  return dist;
}

void validate_scenario(const ScenarioSpec& spec) {
  auto fail = [&](const std::string& what) {
    throw ScenarioFormatError("scenario '" + spec.name + "': " + what);
  };
  if (spec.vocab_size < 2) fail("vocab_size must be at least 2");
  if (spec.gen_length == 0) fail("gen_length must be positive");
  if (spec.heads == 0) fail("heads must be positive");
  if (spec.image_tokens == 0) fail("image_tokens must be positive");
  if (spec.steps != 0 || spec.block_length != 0) {
    try {
      (void)spec.default_schedule();
    } catch (const ScheduleError& e) {
      fail(e.what());
    }
  }

  std::set<std::pair<std::size_t, Position>> seen;
  for (const auto& entry : spec.entries) {
    const std::string at = where(entry.step, entry.position);
    if (entry.position == 0 || entry.position > spec.gen_length) {
      fail("entry " + at + " has a position outside 1.." + std::to_string(spec.gen_length));
    }
    if (spec.steps != 0 && entry.step > spec.steps) {
      fail("entry " + at + " lies past the last step");
    }
    if (!seen.insert({entry.step, entry.position}).second) {
      fail("duplicate entry " + at);
    }
    if (const auto* gen = std::get_if<GeneratedEntry>(&entry.body)) {
      if (gen->proposal < 0 || gen->proposal >= spec.vocab_size) {
        fail("entry " + at + " proposes a token outside the vocabulary");
      }
      if (!(gen->confidence > 0.0 && gen->confidence <= 1.0)) {
        fail("entry " + at + " confidence must lie in (0, 1]");
      }
      const double rest = (1.0 - gen->confidence) / static_cast<double>(spec.vocab_size - 1);
      if (!(gen->confidence > rest)) {
        fail("entry " + at + " confidence does not make the proposal the unique argmax");
      }
      const bool any_sharp = gen->mode == AttentionMode::kPeaked ||
                             (gen->mode == AttentionMode::kMixed && gen->sharp_heads > 0);
      if (any_sharp && !(gen->sharpness > 0.0)) {
        fail("entry " + at + " peaked sharpness must be positive");
      }
      if (gen->target_column >= spec.image_tokens) {
        fail("entry " + at + " target column outside the image tokens");
      }
      if (gen->sharp_heads > spec.heads) {
        fail("entry " + at + " has more sharp heads than heads");
      }
      if (!(gen->noise >= 0.0) || !std::isfinite(gen->noise)) {
        fail("entry " + at + " noise must be a finite non-negative number");
      }
      if (!(gen->attention_mass > 0.0) || !std::isfinite(gen->attention_mass)) {
        fail("entry " + at + " attention mass must be positive");
      }
    } else {
      const auto& ex = std::get<ExplicitEntry>(entry.body);
      if (ex.distribution.size() != static_cast<std::size_t>(spec.vocab_size)) {
        fail("entry " + at + " distribution length differs from vocab_size");
      }
      if (ex.attention.heads != spec.heads || ex.attention.image_tokens != spec.image_tokens ||
          ex.attention.weights.size() != spec.heads * spec.image_tokens) {
        fail("entry " + at + " attention is not heads x image_tokens");
      }
      DenoiserOutput probe;
      probe.candidates.push_back({entry.position, ex.distribution, ex.attention});
      try {
        validate_output(probe);
      } catch (const std::domain_error& e) {
        fail(e.what());
      }
    }
  }
  for (const auto& [position, b] : spec.true_discrepancy) {
    if (position == 0 || position > spec.gen_length) fail("true_discrepancy position out of range");
    if (!(b >= 0.0)) fail("true_discrepancy must be non-negative");
  }
  for (const auto& label : {spec.grounded_position, spec.ungrounded_position,
                            spec.tracked_position}) {
    if (label && (*label == 0 || *label > spec.gen_length)) fail("label position out of range");
  }
}

ScriptedDenoiser::ScriptedDenoiser(ScenarioSpec spec) : spec_(std::move(spec)) {
  validate_scenario(spec_);
  for (std::size_t i = 0; i < spec_.entries.size(); ++i) {
    index_[{spec_.entries[i].step, spec_.entries[i].position}] = i;
  }
  std::ostringstream os;
  os << std::hex << fnv1a(dump_scenario(spec_));
  fingerprint_ = os.str();
}

SequenceState ScriptedDenoiser::initial_state() const {
  return SequenceState::initial(spec_.vocabulary(), spec_.gen_length, spec_.prompt_len,
                                spec_.image_tokens);
}

const ScriptEntry& ScriptedDenoiser::lookup(std::size_t step, Position position) const {
  if (auto it = index_.find({step, position}); it != index_.end()) {
    return spec_.entries[it->second];
  }
  if (auto it = index_.find({0, position}); it != index_.end()) {
    return spec_.entries[it->second];
  }
  throw ScenarioCoverageError("scenario '" + spec_.name + "' has no entry for " +
                              where(step, position));
}

DenoiserOutput ScriptedDenoiser::evaluate(const SequenceState& state,
                                          std::span<const Position> candidates,
                                          std::uint64_t seed) const {
  DenoiserOutput out;
  out.candidates.reserve(candidates.size());
  for (Position position : candidates) {
    if (!state.is_masked(position)) {
      throw std::invalid_argument("candidate position " + std::to_string(position) +
                                  " is not masked");
    }
    const ScriptEntry& entry = lookup(state.step(), position);
    CandidateOutput cand;
    cand.position = position;
    if (const auto* gen = std::get_if<GeneratedEntry>(&entry.body)) {
      cand.distribution = generate_distribution(*gen, spec_.vocab_size);
      cand.attention = generate_attention(*gen, spec_.heads, spec_.image_tokens,
                                          mix_seed(seed, spec_.seed, state.step(), position));
    } else {
      const auto& ex = std::get<ExplicitEntry>(entry.body);
      cand.distribution = ex.distribution;
      cand.attention = ex.attention;
    }
    out.candidates.push_back(std::move(cand));
  }
  return out;
}

void check_coverage(const ScenarioSpec& spec, const UnmaskSchedule& schedule) {
  if (schedule.gen_length != spec.gen_length) {
    throw ScenarioCoverageError("scenario '" + spec.name + "' has gen_length " +
                                std::to_string(spec.gen_length) + " but schedule has " +
                                std::to_string(schedule.gen_length));
  }
  std::set<std::pair<std::size_t, Position>> have;
  for (const auto& e : spec.entries) have.insert({e.step, e.position});
  const std::size_t spb = schedule.steps_per_block();
  // Block b can only be active once all earlier blocks have had their
  // steps, so its positions are reachable from step b*spb + 1 onwards.
  for (std::size_t b = 0; b < schedule.num_blocks(); ++b) {
    for (std::size_t t = b * spb + 1; t <= (b + 1) * spb; ++t) {
      for (std::size_t i = b * schedule.block_length; i < (b + 1) * schedule.block_length; ++i) {
        const auto position = static_cast<Position>(i + 1);
        if (!have.contains({t, position}) && !have.contains({0, position})) {
          throw ScenarioCoverageError("scenario '" + spec.name + "' has no entry for " +
                                      where(t, position));
        }
      }
    }
  }
}

ScenarioSpec make_shortcut_scenario(double c_shortcut, double c_grounded,
                                    std::size_t image_tokens, std::size_t heads,
                                    std::size_t sharp_heads, const ShortcutOptions& options) {
  if (!(0.0 < c_grounded && c_grounded < c_shortcut && c_shortcut < 1.0)) {
    throw std::invalid_argument("shortcut scenario needs 0 < c_grounded < c_shortcut < 1");
  }
  if (sharp_heads > heads) {
    throw std::invalid_argument("sharp_heads exceeds heads");
  }
  ScenarioSpec spec;
  std::ostringstream name;
  name << "shortcut_c" << c_shortcut << "_g" << c_grounded << "_n" << image_tokens << "_m"
       << heads << "_s" << sharp_heads;
  spec.name = name.str();
  spec.vocab_size = options.vocab_size;
  spec.gen_length = 2;
  spec.heads = heads;
  spec.image_tokens = image_tokens;
  spec.steps = 2;
  spec.block_length = 2;
  spec.seed = options.seed;

  GeneratedEntry shortcut;
  shortcut.proposal = 1;
  shortcut.confidence = c_shortcut;
  shortcut.mode = AttentionMode::kDiffuse;
  shortcut.noise = options.noise;
  shortcut.noise_seed = 1;
  shortcut.attention_mass = options.attention_mass;

  GeneratedEntry grounded;
  grounded.proposal = 2;
  grounded.confidence = c_grounded;
  grounded.mode = sharp_heads == heads ? AttentionMode::kPeaked
                  : sharp_heads == 0   ? AttentionMode::kDiffuse
                                       : AttentionMode::kMixed;
  grounded.sharp_heads = sharp_heads;
  grounded.sharpness = options.sharpness;
  grounded.target_column = image_tokens / 2;
  grounded.noise = options.noise;
  grounded.noise_seed = 2;
  grounded.attention_mass = options.attention_mass;

  spec.entries.push_back({0, 1, shortcut});
  spec.entries.push_back({0, 2, grounded});
  spec.ungrounded_position = 1;
  spec.grounded_position = 2;
  // The ungrounded token carries the discrepancy a fully diffuse head set
  // would produce at the default penalty; the grounded one carries none.
  spec.true_discrepancy[1] = 0.5 * std::log1p(std::log(static_cast<double>(image_tokens)));
  spec.true_discrepancy[2] = 0.0;
  validate_scenario(spec);
  return spec;
}

double trajectory_target_peak(TrajectoryKind kind, std::size_t step, std::size_t steps,
                              const TrajectoryOptions& options) {
  if (kind == TrajectoryKind::kShortcut) {
    return options.shortcut_peak_factor / static_cast<double>(options.image_tokens);
  }
  const double frac = static_cast<double>(step - 1) / static_cast<double>(steps - 1);
  return options.grounded_peak_start +
         (options.grounded_peak_end - options.grounded_peak_start) * frac;
}

ScenarioSpec make_trajectory_scenario(TrajectoryKind kind, std::size_t steps,
                                      const TrajectoryOptions& options) {
  if (steps < 2) throw std::invalid_argument("trajectory scenario needs at least 2 steps");
  const double n = static_cast<double>(options.image_tokens);
  if (kind == TrajectoryKind::kGrounded &&
      !(1.0 / n < options.grounded_peak_start &&
        options.grounded_peak_start < options.grounded_peak_end &&
        options.grounded_peak_end < 1.0)) {
    throw std::invalid_argument("grounded peaks must satisfy 1/N < start < end < 1");
  }
  if (kind == TrajectoryKind::kShortcut &&
      !(options.shortcut_peak_factor > 1.0 && options.shortcut_peak_factor < n)) {
    throw std::invalid_argument("shortcut peak factor must lie in (1, N)");
  }

  ScenarioSpec spec;
  spec.name = std::string("trajectory_") + std::string(to_string(kind)) + "_" +
              std::to_string(steps);
  spec.vocab_size = options.vocab_size;
  spec.gen_length = steps;
  spec.heads = options.heads;
  spec.image_tokens = options.image_tokens;
  spec.steps = steps;
  spec.block_length = steps;
  spec.tracked_position = 1;
  spec.language_prior_reference = options.reference;

  for (std::size_t t = 1; t <= steps; ++t) {
    // Solve e^k / (e^k + N - 1) = p for the sharpness k.
    const double p = trajectory_target_peak(kind, t, steps, options);
    GeneratedEntry tracked;
    tracked.proposal = 3;
    tracked.confidence = 0.3;
    tracked.mode = AttentionMode::kPeaked;
    tracked.target_column = options.image_tokens / 3;
    tracked.sharpness = std::log(p * (n - 1.0) / (1.0 - p));
    tracked.attention_mass = 0.5;
    spec.entries.push_back({t, 1, tracked});
  }
  for (std::size_t i = 2; i <= steps; ++i) {
    GeneratedEntry filler;
    filler.proposal = static_cast<TokenId>(4 + (i % static_cast<std::size_t>(options.vocab_size - 4)));
    filler.confidence = 0.95;
    filler.mode = AttentionMode::kPeaked;
    filler.target_column = i % options.image_tokens;
    filler.sharpness = 12.0;
    filler.attention_mass = 0.5;
    spec.entries.push_back({0, static_cast<Position>(i), filler});
  }
  validate_scenario(spec);
  return spec;
}

namespace {

json sharpness_to_json(double k) {
  if (std::isinf(k)) return "inf";
  return k;
}

double sharpness_from_json(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw ScenarioFormatError("sharpness must be a number or \"inf\"");
  }
  return j.get<double>();
}

json entry_to_json(const ScriptEntry& entry) {
  json j;
  j["step"] = entry.step;
  j["position"] = entry.position;
  if (const auto* gen = std::get_if<GeneratedEntry>(&entry.body)) {
    j["kind"] = "generated";
    j["proposal"] = gen->proposal;
    j["confidence"] = gen->confidence;
    j["attention"] = {{"mode", to_string(gen->mode)},
                      {"target_column", gen->target_column},
                      {"sharpness", sharpness_to_json(gen->sharpness)},
                      {"sharp_heads", gen->sharp_heads},
                      {"noise", gen->noise},
                      {"noise_seed", gen->noise_seed},
                      {"mass", gen->attention_mass}};
  } else {
    const auto& ex = std::get<ExplicitEntry>(entry.body);
    j["kind"] = "explicit";
    j["distribution"] = ex.distribution;
    json rows = json::array();
    for (std::size_t h = 0; h < ex.attention.heads; ++h) {
      const auto row = ex.attention.row(h);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["attention"] = rows;
  }
  return j;
}

ScriptEntry entry_from_json(const json& j) {
  ScriptEntry entry;
  entry.step = j.value("step", std::size_t{0});
  entry.position = j.at("position").get<Position>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "generated") {
    GeneratedEntry gen;
    gen.proposal = j.at("proposal").get<TokenId>();
    gen.confidence = j.at("confidence").get<double>();
    const json& a = j.at("attention");
    gen.mode = parse_attention_mode(a.at("mode").get<std::string>());
    gen.target_column = a.value("target_column", std::size_t{0});
    if (a.contains("sharpness")) gen.sharpness = sharpness_from_json(a.at("sharpness"));
    gen.sharp_heads = a.value("sharp_heads", std::size_t{0});
    gen.noise = a.value("noise", 0.0);
    gen.noise_seed = a.value("noise_seed", std::uint64_t{0});
    gen.attention_mass = a.value("mass", 1.0);
    entry.body = gen;
  } else if (kind == "explicit") {
    ExplicitEntry ex;
    ex.distribution = j.at("distribution").get<std::vector<double>>();
    const auto rows = j.at("attention").get<std::vector<std::vector<double>>>();
    const std::size_t n = rows.empty() ? 0 : rows.front().size();
    ex.attention = AttentionBlock(rows.size(), n);
    for (std::size_t h = 0; h < rows.size(); ++h) {
      if (rows[h].size() != n) throw ScenarioFormatError("ragged attention rows");
      std::copy(rows[h].begin(), rows[h].end(), ex.attention.row(h).begin());
    }
    entry.body = std::move(ex);
  } else {
    throw ScenarioFormatError("unknown entry kind '" + kind + "'");
  }
  return entry;
}

}  // namespace

std::string dump_scenario(const ScenarioSpec& spec) {
  json j;
  j["schema_version"] = kScenarioSchemaVersion;
  j["name"] = spec.name;
  j["vocab_size"] = spec.vocab_size;
  j["gen_length"] = spec.gen_length;
  j["heads"] = spec.heads;
  j["image_tokens"] = spec.image_tokens;
  j["prompt_len"] = spec.prompt_len;
  j["steps"] = spec.steps;
  j["block_length"] = spec.block_length;
  j["seed"] = spec.seed;
  j["language_prior_reference"] = spec.language_prior_reference;
  json labels = json::object();
  if (spec.grounded_position) labels["grounded_position"] = *spec.grounded_position;
  if (spec.ungrounded_position) labels["ungrounded_position"] = *spec.ungrounded_position;
  if (spec.tracked_position) labels["tracked_position"] = *spec.tracked_position;
  j["labels"] = labels;
  json truth = json::array();
  for (const auto& [position, b] : spec.true_discrepancy) {
    truth.push_back({{"position", position}, {"b", b}});
  }
  j["true_discrepancy"] = truth;
  json entries = json::array();
  for (const auto& e : spec.entries) entries.push_back(entry_to_json(e));
  j["entries"] = entries;
  return j.dump(2);
}

ScenarioSpec parse_scenario(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioFormatError(std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version")) {
    throw ScenarioFormatError("scenario is missing schema_version");
  }
  const int version = j.at("schema_version").get<int>();
  if (version != kScenarioSchemaVersion) {
    throw ScenarioFormatError("unsupported scenario schema_version " + std::to_string(version) +
                              " (expected " + std::to_string(kScenarioSchemaVersion) + ")");
  }
  ScenarioSpec spec;
  try {
    spec.name = j.value("name", std::string("scenario"));
    spec.vocab_size = j.at("vocab_size").get<std::int64_t>();
    spec.gen_length = j.at("gen_length").get<std::size_t>();
    spec.heads = j.at("heads").get<std::size_t>();
    spec.image_tokens = j.at("image_tokens").get<std::size_t>();
    spec.prompt_len = j.value("prompt_len", std::size_t{0});
    spec.steps = j.value("steps", std::size_t{0});
    spec.block_length = j.value("block_length", std::size_t{0});
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.language_prior_reference =
        j.value("language_prior_reference", kDefaultLanguagePriorReference);
    if (j.contains("labels")) {
      const json& l = j.at("labels");
      if (l.contains("grounded_position")) spec.grounded_position = l.at("grounded_position").get<Position>();
      if (l.contains("ungrounded_position")) spec.ungrounded_position = l.at("ungrounded_position").get<Position>();
      if (l.contains("tracked_position")) spec.tracked_position = l.at("tracked_position").get<Position>();
    }
    if (j.contains("true_discrepancy")) {
      for (const auto& t : j.at("true_discrepancy")) {
        spec.true_discrepancy[t.at("position").get<Position>()] = t.at("b").get<double>();
      }
    }
    for (const auto& e : j.at("entries")) spec.entries.push_back(entry_from_json(e));
  } catch (const json::exception& e) {
    throw ScenarioFormatError(std::string("malformed scenario: ") + e.what());
  }
  validate_scenario(spec);
  return spec;
}

ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioFormatError("cannot open scenario file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

void save_scenario(const ScenarioSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario file " + path);
  out << dump_scenario(spec) << '\n';
}

}  // namespace visage
