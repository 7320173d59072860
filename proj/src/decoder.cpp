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

#include "visage/decoder.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "visage/random.hpp"

namespace visage {

using nlohmann::json;

std::string_view to_string(DecodeMode mode) {
  return mode == DecodeMode::kBaseline ? "baseline" : "visage";
}

DecodeMode parse_decode_mode(std::string_view text) {
  if (text == "baseline") return DecodeMode::kBaseline;
  if (text == "visage") return DecodeMode::kVisage;
  throw std::invalid_argument("unknown decode mode '" + std::string(text) + "'");
}

std::string_view to_string(TieBreak tie_break) {
  return tie_break == TieBreak::kLowestPosition ? "lowest_position"
                                                : "highest_confidence_then_lowest_position";
}

TieBreak parse_tie_break(std::string_view text) {
  if (text == "lowest_position") return TieBreak::kLowestPosition;
  if (text == "highest_confidence_then_lowest_position") {
    return TieBreak::kHighestConfidenceThenLowestPosition;
  }
  throw std::invalid_argument("unknown tie break '" + std::string(text) + "'");
}

GroundingConfig DecodePolicy::effective_grounding() const {
  GroundingConfig g = grounding;
  if (mode == DecodeMode::kBaseline) g.alpha = 0.0;
  return g;
}

std::string DecodePolicy::label() const {
  if (mode == DecodeMode::kBaseline) return "baseline";
  std::ostringstream os;
  os << "visage_a" << grounding.alpha << "_" << to_string(grounding.aggregation);
  if (grounding.aggregation == Aggregation::kQuantile) os << "_b" << grounding.beta;
  return os.str();
}

std::vector<Position> StepRecord::committed_positions() const {
  std::vector<Position> out;
  out.reserve(committed.size());
  for (const auto& [position, token] : committed) out.push_back(position);
  return out;
}

TraceLabels TraceLabels::from(const ScenarioSpec& spec) {
  return {spec.grounded_position, spec.ungrounded_position, spec.tracked_position,
          spec.language_prior_reference};
}

std::optional<std::size_t> DecodeTrace::commit_step(Position position) const {
  for (const auto& s : steps) {
    if (s.committed.contains(position)) return s.step;
  }
  return std::nullopt;
}

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t take = std::min(k, values.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });
  idx.resize(take);
  return idx;
}

std::vector<Position> select_topk(std::span<const CandidateScore> scores, std::size_t k,
                                  TieBreak tie_break) {
  std::vector<const CandidateScore*> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(&s);
  const std::size_t take = std::min(k, scores.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                    order.end(), [&](const CandidateScore* a, const CandidateScore* b) {
                      if (a->ranking_score != b->ranking_score) {
                        return a->ranking_score > b->ranking_score;
                      }
                      if (tie_break == TieBreak::kHighestConfidenceThenLowestPosition &&
                          a->confidence != b->confidence) {
                        return a->confidence > b->confidence;
                      }
                      return a->position < b->position;
                    });
  std::vector<Position> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(order[i]->position);
  std::sort(out.begin(), out.end());
  return out;
}

std::string decode_fingerprint(const DecodePolicy& policy, const UnmaskSchedule& schedule,
                               const std::string& scenario_fingerprint, std::uint64_t seed) {
  std::ostringstream os;
  os.precision(17);
  os << "mode=" << to_string(policy.mode) << ";alpha=" << policy.grounding.alpha
     << ";beta=" << policy.grounding.beta << ";delta=" << policy.grounding.delta
     << ";aggregation=" << to_string(policy.grounding.aggregation)
     << ";tie_break=" << to_string(policy.tie_break) << ";schedule=" << schedule.gen_length
     << ',' << schedule.steps << ',' << schedule.block_length
     << ";scenario=" << scenario_fingerprint << ";seed=" << seed;
  std::ostringstream hex;
  hex << std::hex << fnv1a(os.str());
  return hex.str();
}

DecodeResult decode(const Denoiser& denoiser, const UnmaskSchedule& schedule,
                    const DecodePolicy& policy, std::uint64_t seed) {
  const GroundingConfig grounding = policy.effective_grounding();
  grounding.validate();

  SequenceState state = denoiser.initial_state();
  if (state.gen_length() != schedule.gen_length) {
    throw ScheduleError("denoiser produces " + std::to_string(state.gen_length()) +
                        " response positions but schedule expects " +
                        std::to_string(schedule.gen_length));
  }

  DecodeTrace trace;
  trace.scenario_fingerprint = denoiser.fingerprint();
  trace.seed = seed;
  trace.policy = policy;
  trace.schedule = schedule;
  trace.vocab_size = state.vocabulary().size();
  trace.mask_id = state.vocabulary().mask_id();
  trace.fingerprint = decode_fingerprint(policy, schedule, trace.scenario_fingerprint, seed);

  for (std::size_t t = 1; t <= schedule.steps; ++t) {
    if (state.step() != t) throw InternalDecodeError("state step out of sync with loop");
    const std::vector<Position> candidates = candidate_set(state, schedule);
    if (candidates.empty()) break;

    DenoiserOutput output = denoiser.evaluate(state, candidates, seed);
    if (output.candidates.size() != candidates.size()) {
      throw InternalDecodeError("denoiser returned " + std::to_string(output.candidates.size()) +
                                " outputs for " + std::to_string(candidates.size()) +
                                " candidates");
    }
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (output.candidates[i].position != candidates[i]) {
        throw InternalDecodeError("denoiser output order does not match candidates");
      }
    }

    StepRecord record;
    record.step = t;
    record.budget = schedule.budget(t);
    record.candidates = candidates;
    record.scores = score_candidates(output, grounding);
    const auto selected = select_topk(record.scores, record.budget, policy.tie_break);
    for (Position p : selected) {
      const auto it = std::find_if(record.scores.begin(), record.scores.end(),
                                   [&](const CandidateScore& s) { return s.position == p; });
      record.committed[p] = it->proposal;
    }
    if (record.committed.size() != std::min(record.budget, candidates.size())) {
      throw InternalDecodeError("committed set size differs from min(k_t, |C_t|)");
    }
    state = commit(state, record.committed);
    trace.steps.push_back(std::move(record));
  }

  if (state.mask_count() != 0) {
    throw InternalDecodeError("schedule exhausted with " + std::to_string(state.mask_count()) +
                              " masked positions left");
  }
  trace.final_response.assign(state.response().begin(), state.response().end());
  return {trace.final_response, std::move(trace)};
}

DecodeResult decode(const ScriptedDenoiser& denoiser, const UnmaskSchedule& schedule,
                    const DecodePolicy& policy, std::uint64_t seed) {
  DecodeResult result = decode(static_cast<const Denoiser&>(denoiser), schedule, policy, seed);
  result.trace.scenario_name = denoiser.spec().name;
  result.trace.labels = TraceLabels::from(denoiser.spec());
  return result;
}

std::vector<TokenId> replay_trace(const DecodeTrace& trace) {
  SequenceState state = SequenceState::initial(Vocabulary(trace.vocab_size, trace.mask_id),
                                               trace.schedule.gen_length);
  for (const auto& s : trace.steps) state = commit(state, s.committed);
  return {state.response().begin(), state.response().end()};
}

std::optional<std::size_t> first_divergent_step(const DecodeTrace& a, const DecodeTrace& b) {
  const std::size_t n = std::max(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= a.steps.size() || i >= b.steps.size()) return i + 1;
    if (a.steps[i].committed_positions() != b.steps[i].committed_positions()) {
      return a.steps[i].step;
    }
  }
  return std::nullopt;
}

ComparisonReport compare_policies(const ScriptedDenoiser& denoiser,
                                  const UnmaskSchedule& schedule,
                                  std::span<const DecodePolicy> policies, std::uint64_t seed) {
  if (policies.size() < 2) throw std::invalid_argument("compare_policies needs >= 2 policies");
  ComparisonReport report;
  for (const auto& p : policies) report.runs.push_back(decode(denoiser, schedule, p, seed));
  const DecodeTrace& ref = report.runs.front().trace;
  for (std::size_t i = 1; i < report.runs.size(); ++i) {
    const DecodeTrace& other = report.runs[i].trace;
    report.divergences.push_back(
        {i, first_divergent_step(ref, other), ref.final_response == other.final_response});
  }
  return report;
}

namespace {

json policy_to_json(const DecodePolicy& p) {
  json j = {{"mode", to_string(p.mode)},
            {"alpha", p.grounding.alpha},
            {"beta", p.grounding.beta},
            {"delta", p.grounding.delta},
            {"aggregation", to_string(p.grounding.aggregation)},
            {"tie_break", to_string(p.tie_break)}};
  if (p.grounding.lambda_true) j["lambda"] = *p.grounding.lambda_true;
  return j;
}

DecodePolicy policy_from_json(const json& j) {
  DecodePolicy p;
  p.mode = parse_decode_mode(j.at("mode").get<std::string>());
  p.grounding.alpha = j.at("alpha").get<double>();
  p.grounding.beta = j.at("beta").get<double>();
  p.grounding.delta = j.at("delta").get<double>();
  p.grounding.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  if (j.contains("lambda")) p.grounding.lambda_true = j.at("lambda").get<double>();
  p.tie_break = parse_tie_break(j.at("tie_break").get<std::string>());
  return p;
}

json score_to_json(const CandidateScore& s) {
  return {{"position", s.position},
          {"proposal", s.proposal},
          {"confidence", s.confidence},
          {"head_entropies", s.head_entropies},
          {"aggregate_entropy", s.aggregate_entropy},
          {"aggregation", to_string(s.aggregation)},
          {"selected_head", s.selected_head},
          {"selected_peak", s.selected_peak},
          {"discrepancy_estimate", s.discrepancy_estimate},
          {"multiplier", s.multiplier},
          {"ranking_score", s.ranking_score}};
}

CandidateScore score_from_json(const json& j) {
  CandidateScore s;
  s.position = j.at("position").get<Position>();
  s.proposal = j.at("proposal").get<TokenId>();
  s.confidence = j.at("confidence").get<double>();
  s.head_entropies = j.at("head_entropies").get<std::vector<double>>();
  s.aggregate_entropy = j.at("aggregate_entropy").get<double>();
  s.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  s.selected_head = j.at("selected_head").get<std::size_t>();
  s.selected_peak = j.at("selected_peak").get<double>();
  s.discrepancy_estimate = j.at("discrepancy_estimate").get<double>();
  s.multiplier = j.at("multiplier").get<double>();
  s.ranking_score = j.at("ranking_score").get<double>();
  return s;
}

void optional_to_json(json& j, const char* key, const std::optional<Position>& v) {
  if (v) j[key] = *v;
}

std::optional<Position> optional_from_json(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  return j.at(key).get<Position>();
}

}  // namespace

void write_trace_jsonl(const DecodeTrace& trace, std::ostream& out) {
  json labels = json::object();
  optional_to_json(labels, "grounded_position", trace.labels.grounded_position);
  optional_to_json(labels, "ungrounded_position", trace.labels.ungrounded_position);
  optional_to_json(labels, "tracked_position", trace.labels.tracked_position);
  labels["language_prior_reference"] = trace.labels.language_prior_reference;

  json header = {{"record", "header"},
                 {"schema_version", kTraceSchemaVersion},
                 {"fingerprint", trace.fingerprint},
                 {"scenario", trace.scenario_name},
                 {"scenario_fingerprint", trace.scenario_fingerprint},
                 {"seed", trace.seed},
                 {"policy", policy_to_json(trace.policy)},
                 {"schedule",
                  {{"gen_length", trace.schedule.gen_length},
                   {"steps", trace.schedule.steps},
                   {"block_length", trace.schedule.block_length},
                   {"budgets", trace.schedule.budgets}}},
                 {"vocab", {{"size", trace.vocab_size}, {"mask_id", trace.mask_id}}},
                 {"labels", labels}};
  out << header.dump() << '\n';

  for (const auto& s : trace.steps) {
    json scores = json::array();
    for (const auto& sc : s.scores) scores.push_back(score_to_json(sc));
    json committed = json::array();
    for (const auto& [position, token] : s.committed) {
      committed.push_back({{"position", position}, {"token", token}});
    }
    json rec = {{"record", "step"},         {"step", s.step},     {"budget", s.budget},
                {"candidates", s.candidates}, {"scores", scores}, {"committed", committed}};
    out << rec.dump() << '\n';
  }
  json fin = {{"record", "final"}, {"response", trace.final_response}};
  out << fin.dump() << '\n';
}

DecodeTrace read_trace_jsonl(std::istream& in) {
  DecodeTrace trace;
  std::string line;
  bool have_header = false;
  bool have_final = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("trace line " + std::to_string(lineno) + ": " + e.what());
    }
    const auto kind = j.at("record").get<std::string>();
    if (kind == "header") {
      const int version = j.at("schema_version").get<int>();
      if (version != kTraceSchemaVersion) {
        throw std::runtime_error("unsupported trace schema_version " + std::to_string(version));
      }
      trace.fingerprint = j.at("fingerprint").get<std::string>();
      trace.scenario_name = j.at("scenario").get<std::string>();
      trace.scenario_fingerprint = j.at("scenario_fingerprint").get<std::string>();
      trace.seed = j.at("seed").get<std::uint64_t>();
      trace.policy = policy_from_json(j.at("policy"));
      const json& sch = j.at("schedule");
      trace.schedule.gen_length = sch.at("gen_length").get<std::size_t>();
      trace.schedule.steps = sch.at("steps").get<std::size_t>();
      trace.schedule.block_length = sch.at("block_length").get<std::size_t>();
      trace.schedule.budgets = sch.at("budgets").get<std::vector<std::size_t>>();
      trace.vocab_size = j.at("vocab").at("size").get<std::int64_t>();
      trace.mask_id = j.at("vocab").at("mask_id").get<TokenId>();
      const json& l = j.at("labels");
      trace.labels.grounded_position = optional_from_json(l, "grounded_position");
      trace.labels.ungrounded_position = optional_from_json(l, "ungrounded_position");
      trace.labels.tracked_position = optional_from_json(l, "tracked_position");
      trace.labels.language_prior_reference = l.at("language_prior_reference").get<double>();
      have_header = true;
    } else if (kind == "step") {
      if (!have_header) throw std::runtime_error("trace step record before header");
      StepRecord s;
      s.step = j.at("step").get<std::size_t>();
      s.budget = j.at("budget").get<std::size_t>();
      s.candidates = j.at("candidates").get<std::vector<Position>>();
      for (const auto& sc : j.at("scores")) s.scores.push_back(score_from_json(sc));
      for (const auto& c : j.at("committed")) {
        s.committed[c.at("position").get<Position>()] = c.at("token").get<TokenId>();
      }
      trace.steps.push_back(std::move(s));
    } else if (kind == "final") {
      trace.final_response = j.at("response").get<std::vector<TokenId>>();
      have_final = true;
    } else {
      throw std::runtime_error("unknown trace record '" + kind + "'");
    }
  }
  if (!have_header || !have_final) throw std::runtime_error("truncated trace");
  return trace;
}

void save_trace(const DecodeTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file " + path);
  write_trace_jsonl(trace, out);
}

DecodeTrace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  return read_trace_jsonl(in);
}

}  // namespace visage
