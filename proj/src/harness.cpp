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

#include "visage/harness.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "visage/random.hpp"

namespace visage {

namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  if (scenarios.empty()) throw std::invalid_argument("experiment needs at least one scenario");
  if (policies.empty()) throw std::invalid_argument("experiment needs at least one policy");
  if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
  for (const auto& p : policies) p.effective_grounding().validate();
  if (schedule) {
    (void)make_block_schedule(schedule->gen_length, schedule->steps, schedule->block_length);
  }
}

namespace {

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' ||
                    c == '-';
    if (!ok) c = '_';
  }
  return out;
}

void prepare_output_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "traces", ec);
  if (ec) throw HarnessIoError("cannot create output directory " + dir + ": " + ec.message());
  const fs::path probe = fs::path(dir) / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "ok")) throw HarnessIoError("output directory " + dir + " is not writable");
  }
  fs::remove(probe, ec);
}

std::ofstream open_for_write(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw HarnessIoError("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<ShortcutMetrics> compute_metrics(std::span<const DecodeTrace> traces,
                                             std::span<const DecodePolicy> policies) {
  // Reference traces of the first policy, keyed by (scenario, seed).
  std::map<std::pair<std::string, std::uint64_t>, const DecodeTrace*> reference;
  if (!policies.empty()) {
    for (const auto& t : traces) {
      if (t.policy == policies.front()) reference[{t.scenario_fingerprint, t.seed}] = &t;
    }
  }

  std::vector<ShortcutMetrics> out;
  for (const auto& policy : policies) {
    ShortcutMetrics m;
    m.policy = policy.label();
    double grounded_steps = 0.0;
    std::size_t grounded_count = 0;
    double entropy_sum = 0.0;
    double penalty_sum = 0.0;
    std::size_t scored = 0;
    double divergence_steps = 0.0;
    for (const auto& t : traces) {
      if (!(t.policy == policy)) continue;
      ++m.cases;
      for (const auto& s : t.steps) {
        for (const auto& sc : s.scores) {
          entropy_sum += sc.aggregate_entropy;
          penalty_sum += sc.discrepancy_estimate;
          ++scored;
        }
      }
      const auto& labels = t.labels;
      if (labels.grounded_position) {
        if (auto step = t.commit_step(*labels.grounded_position)) {
          grounded_steps += static_cast<double>(*step);
          ++grounded_count;
        }
      }
      if (labels.grounded_position && labels.ungrounded_position) {
        ++m.labelled_cases;
        const auto g = t.commit_step(*labels.grounded_position);
        const auto u = t.commit_step(*labels.ungrounded_position);
        if (g && u && *u < *g) ++m.shortcut_commits;
      }
      if (auto it = reference.find({t.scenario_fingerprint, t.seed}); it != reference.end()) {
        if (auto d = first_divergent_step(*it->second, t)) {
          ++m.diverged_cases;
          divergence_steps += static_cast<double>(*d);
        }
      }
    }
    if (m.labelled_cases) {
      m.shortcut_commit_rate =
          static_cast<double>(m.shortcut_commits) / static_cast<double>(m.labelled_cases);
    }
    if (grounded_count) m.mean_grounded_commit_step = grounded_steps / static_cast<double>(grounded_count);
    if (scored) {
      m.mean_aggregate_entropy = entropy_sum / static_cast<double>(scored);
      m.mean_discrepancy_estimate = penalty_sum / static_cast<double>(scored);
    }
    if (m.diverged_cases) {
      m.mean_first_divergence_step = divergence_steps / static_cast<double>(m.diverged_cases);
    }
    out.push_back(std::move(m));
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const bool persist = !config.output_dir.empty();
  if (persist) prepare_output_dir(config.output_dir);

  ExperimentResult result;
  std::size_t cell = 0;
  for (const auto& spec : config.scenarios) {
    for (const auto& policy : config.policies) {
      for (std::uint64_t seed : config.seeds) {
        ++cell;
        try {
          const ScriptedDenoiser denoiser(spec);
          const UnmaskSchedule schedule =
              config.schedule ? make_block_schedule(config.schedule->gen_length,
                                                    config.schedule->steps,
                                                    config.schedule->block_length)
                              : spec.default_schedule();
          check_coverage(spec, schedule);
          DecodeResult run = decode(denoiser, schedule, policy, seed);
          if (persist) {
            std::ostringstream stem;
            stem << std::setw(5) << std::setfill('0') << cell << '_' << sanitize(spec.name)
                 << "__" << sanitize(policy.label()) << "__seed" << seed;
            const fs::path base = fs::path(config.output_dir) / "traces" / stem.str();
            if (config.export_jsonl) {
              const fs::path path = base.string() + ".jsonl";
              auto out = open_for_write(path);
              write_trace_jsonl(run.trace, out);
              result.trace_files.push_back(path.string());
            }
            if (config.export_csv) {
              const fs::path path = base.string() + ".csv";
              auto out = open_for_write(path);
              write_trace_csv(run.trace, out);
              result.trace_files.push_back(path.string());
              if (run.trace.labels.tracked_position) {
                auto traj = open_for_write(base.string() + ".trajectory.csv");
                write_trajectory_csv(
                    export_trajectory(run.trace, *run.trace.labels.tracked_position), traj);
              }
            }
          }
          result.traces.push_back(std::move(run.trace));
        } catch (const ScenarioCoverageError& e) {
          result.errors.push_back({spec.name, policy.label(), seed, e.what()});
        } catch (const ScenarioFormatError& e) {
          result.errors.push_back({spec.name, policy.label(), seed, e.what()});
        } catch (const ScheduleError& e) {
          result.errors.push_back({spec.name, policy.label(), seed, e.what()});
        }
      }
    }
  }

  result.metrics = compute_metrics(result.traces, config.policies);
  if (persist) {
    auto csv = open_for_write(fs::path(config.output_dir) / "metrics.csv");
    write_metrics_csv(result.metrics, csv);
    if (!result.errors.empty()) {
      auto err = open_for_write(fs::path(config.output_dir) / "errors.txt");
      for (const auto& e : result.errors) {
        err << e.scenario << '\t' << e.policy << '\t' << e.seed << '\t' << e.message << '\n';
      }
    }
  }
  return result;
}

void write_metrics_csv(std::span<const ShortcutMetrics> metrics, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "policy,cases,labelled_cases,shortcut_commits,shortcut_commit_rate,"
         "mean_grounded_commit_step,mean_aggregate_entropy,mean_discrepancy_estimate,"
         "diverged_cases,mean_first_divergence_step\n";
  for (const auto& m : metrics) {
    out << m.policy << ',' << m.cases << ',' << m.labelled_cases << ',' << m.shortcut_commits
        << ',' << m.shortcut_commit_rate << ',' << m.mean_grounded_commit_step << ','
        << m.mean_aggregate_entropy << ',' << m.mean_discrepancy_estimate << ','
        << m.diverged_cases << ',' << m.mean_first_divergence_step << '\n';
  }
  out.precision(precision);
}

std::vector<DecodePolicy> alpha_sweep_policies(std::span<const double> alphas, double beta) {
  std::vector<DecodePolicy> out;
  for (double a : alphas) out.push_back(DecodePolicy::visage(a, beta));
  return out;
}

std::vector<DecodePolicy> aggregation_sweep_policies(double alpha, double beta) {
  std::vector<DecodePolicy> out;
  for (Aggregation agg : {Aggregation::kQuantile, Aggregation::kMin, Aggregation::kMean}) {
    DecodePolicy p = DecodePolicy::visage(alpha, beta);
    p.grounding.aggregation = agg;
    out.push_back(p);
  }
  return out;
}

namespace {

constexpr std::size_t kSetImageTokens = 16;
constexpr std::size_t kSetHeads = 8;

ScenarioSpec random_shortcut(Rng& rng, std::size_t sharp_heads, std::size_t index,
                             const char* prefix) {
  const double c_shortcut = rng.uniform(0.7, 0.95);
  const double c_grounded = rng.uniform(0.3, c_shortcut - 0.05);
  ShortcutOptions options;
  options.sharpness = rng.uniform(6.0, 14.0);
  options.noise = rng.uniform(0.0, 0.5);
  options.seed = rng.next();
  ScenarioSpec spec = make_shortcut_scenario(c_shortcut, c_grounded, kSetImageTokens, kSetHeads,
                                             sharp_heads, options);
  spec.name = std::string(prefix) + "_" + std::to_string(index) + "_s" +
              std::to_string(sharp_heads);
  return spec;
}

}  // namespace

std::vector<ScenarioSpec> make_shortcut_scenario_set(std::size_t count, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5c));
  std::vector<ScenarioSpec> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto sharp = static_cast<std::size_t>(rng.uniform_int(0, kSetHeads));
    out.push_back(random_shortcut(rng, sharp, i, "shortcut"));
  }
  return out;
}

std::vector<ScenarioSpec> make_single_sharp_head_set(std::size_t count, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x51));
  std::vector<ScenarioSpec> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_shortcut(rng, 1, i, "single"));
  return out;
}

std::vector<ScenarioSpec> make_mixed_scenario_set(std::size_t count, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x3d));
  std::vector<ScenarioSpec> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t sharp = 0;
    switch (i % 4) {
      case 0: sharp = 1; break;
      case 1: sharp = static_cast<std::size_t>(rng.uniform_int(2, kSetHeads - 1)); break;
      case 2: sharp = kSetHeads; break;
      default: sharp = 0; break;
    }
    out.push_back(random_shortcut(rng, sharp, i, "mixed"));
  }
  return out;
}

std::vector<TrajectoryRow> export_trajectory(const DecodeTrace& trace, Position position) {
  std::vector<TrajectoryRow> rows;
  for (const auto& s : trace.steps) {
    const auto it = std::find_if(s.scores.begin(), s.scores.end(),
                                 [&](const CandidateScore& c) { return c.position == position; });
    if (it == s.scores.end()) continue;
    TrajectoryRow row;
    row.step = s.step;
    row.peak = it->selected_peak;
    row.reference = trace.labels.language_prior_reference;
    row.confidence = it->confidence;
    row.aggregate_entropy = it->aggregate_entropy;
    row.committed = s.committed.contains(position);
    rows.push_back(row);
  }
  if (rows.empty()) {
    throw std::out_of_range("position " + std::to_string(position) +
                            " never appears among the trace's candidates");
  }
  double top = 0.0;
  for (const auto& r : rows) top = std::max(top, r.peak);
  for (auto& r : rows) r.peak_normalized = top > 0.0 ? r.peak / top : 0.0;
  return rows;
}

void write_trajectory_csv(std::span<const TrajectoryRow> rows, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "# peak: max renormalized attention of the quantile-selected head\n"
         "# peak_normalized: peak divided by its maximum over this trajectory\n"
         "# reference: synthetic language-prior constant (simulator convention)\n";
  out << "step,peak,peak_normalized,reference,confidence,aggregate_entropy,committed\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.peak << ',' << r.peak_normalized << ',' << r.reference << ','
        << r.confidence << ',' << r.aggregate_entropy << ',' << (r.committed ? 1 : 0) << '\n';
  }
  out.precision(precision);
}

void write_trace_csv(const DecodeTrace& trace, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "# fingerprint: " << trace.fingerprint << '\n';
  out << "step,position,proposal,confidence,aggregate_entropy,discrepancy_estimate,"
         "ranking_score,committed\n";
  for (const auto& s : trace.steps) {
    for (const auto& c : s.scores) {
      out << s.step << ',' << c.position << ',' << c.proposal << ',' << c.confidence << ','
          << c.aggregate_entropy << ',' << c.discrepancy_estimate << ',' << c.ranking_score
          << ',' << (s.committed.contains(c.position) ? 1 : 0) << '\n';
    }
  }
  out.precision(precision);
}

}  // namespace visage
