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

// Batch driver. Without a subcommand it decodes the given scenarios under one
// policy; subcommands run the alpha and aggregation sweeps, the stability
// sweep, trajectory export and scenario generation.
//
// Exit codes: 0 success, 2 usage, 3 I/O, 4 scenario, 5 schedule,
// 6 verification failure, 7 some batch cells failed.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "visage/decoder.hpp"
#include "visage/denoiser.hpp"
#include "visage/harness.hpp"
#include "visage/verification.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kIo = 3,
  kScenario = 4,
  kSchedule = 5,
  kVerification = 6,
  kBatchErrors = 7,
};

struct Options {
  std::vector<std::string> scenario_paths;
  std::string generate;
  std::size_t count = 1;
  std::string mode = "visage";
  double alpha = 0.5;
  double beta = 0.25;
  double delta = 1e-8;
  std::string aggregation = "quantile";
  std::string tie_break = "lowest_position";
  std::size_t gen_length = 0;
  std::size_t steps = 0;
  std::size_t block_length = 0;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::vector<std::string> exports;
};

std::vector<visage::ScenarioSpec> gather_scenarios(const Options& o) {
  std::vector<visage::ScenarioSpec> out;
  for (const auto& p : o.scenario_paths) out.push_back(visage::load_scenario(p));
  const std::uint64_t seed = o.seeds.empty() ? 0 : o.seeds.front();
  if (o.generate == "shortcut") {
    out.push_back(visage::make_shortcut_scenario(0.9, 0.6, 16, 8, 8));
  } else if (o.generate == "shortcut-set") {
    auto set = visage::make_shortcut_scenario_set(o.count, seed);
    out.insert(out.end(), set.begin(), set.end());
  } else if (o.generate == "single-sharp-set") {
    auto set = visage::make_single_sharp_head_set(o.count, seed);
    out.insert(out.end(), set.begin(), set.end());
  } else if (o.generate == "mixed-set") {
    auto set = visage::make_mixed_scenario_set(o.count, seed);
    out.insert(out.end(), set.begin(), set.end());
  } else if (o.generate == "trajectory-grounded") {
    out.push_back(visage::make_trajectory_scenario(visage::TrajectoryKind::kGrounded,
                                                   std::max<std::size_t>(o.count, 2)));
  } else if (o.generate == "trajectory-shortcut") {
    out.push_back(visage::make_trajectory_scenario(visage::TrajectoryKind::kShortcut,
                                                   std::max<std::size_t>(o.count, 2)));
  }
  if (out.empty()) throw CLI::ValidationError("no scenarios: pass --scenario or --generate");
  return out;
}

visage::DecodePolicy base_policy(const Options& o) {
  visage::DecodePolicy p;
  p.mode = visage::parse_decode_mode(o.mode);
  p.grounding.alpha = o.alpha;
  p.grounding.beta = o.beta;
  p.grounding.delta = o.delta;
  p.grounding.aggregation = visage::parse_aggregation(o.aggregation);
  p.tie_break = visage::parse_tie_break(o.tie_break);
  return p;
}

visage::ExperimentConfig make_config(const Options& o, std::vector<visage::DecodePolicy> policies) {
  visage::ExperimentConfig config;
  config.scenarios = gather_scenarios(o);
  config.policies = std::move(policies);
  if (o.gen_length || o.steps || o.block_length) {
    config.schedule = visage::ScheduleTriple{o.gen_length, o.steps, o.block_length};
  }
  if (!o.seeds.empty()) config.seeds = o.seeds;
  config.output_dir = o.out;
  config.export_jsonl = o.exports.empty();
  config.export_csv = false;
  for (const auto& e : o.exports) {
    if (e == "jsonl") config.export_jsonl = true;
    if (e == "csv") config.export_csv = true;
  }
  return config;
}

int report(const visage::ExperimentResult& result) {
  visage::write_metrics_csv(result.metrics, std::cout);
  for (const auto& e : result.errors) {
    std::cerr << "error: " << e.scenario << " / " << e.policy << " / seed " << e.seed << ": "
              << e.message << '\n';
  }
  return result.errors.empty() ? kOk : kBatchErrors;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounding-aware parallel masked decoding on synthetic scenarios"};
  app.fallthrough();
  Options o;

  app.add_option("--scenario", o.scenario_paths, "Scenario JSON file (repeatable)");
  app.add_option("--generate", o.generate, "Built-in scenario generator")
      ->check(CLI::IsMember({"shortcut", "shortcut-set", "single-sharp-set", "mixed-set",
                             "trajectory-grounded", "trajectory-shortcut"}));
  app.add_option("--count", o.count, "Scenario count for set generators, steps for trajectories");
  app.add_option("--mode", o.mode, "Ranking policy")->check(CLI::IsMember({"baseline", "visage"}));
  app.add_option("--alpha", o.alpha, "Penalty exponent")->check(CLI::NonNegativeNumber);
  app.add_option("--beta", o.beta, "Head-entropy quantile")->check(CLI::Range(0.0, 1.0));
  app.add_option("--delta", o.delta, "Attention smoothing constant")->check(CLI::PositiveNumber);
  app.add_option("--aggregation", o.aggregation, "Head aggregation")
      ->check(CLI::IsMember({"quantile", "min", "mean"}));
  app.add_option("--tie-break", o.tie_break, "Top-k tie rule")
      ->check(CLI::IsMember({"lowest_position", "highest_confidence_then_lowest_position"}));
  app.add_option("--gen-length", o.gen_length, "Response length L");
  app.add_option("--steps", o.steps, "Decoding steps T");
  app.add_option("--block-length", o.block_length, "Block length B");
  app.add_option("--seed", o.seeds, "Seed (repeatable)");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--export", o.exports, "Export formats")
      ->check(CLI::IsMember({"jsonl", "csv"}));

  std::vector<double> alphas{0.1, 0.3, 0.5};
  auto* sweep_alpha = app.add_subcommand("sweep-alpha", "Run one policy per alpha");
  sweep_alpha->add_option("--alphas", alphas, "Alpha grid")->delimiter(',');

  auto* sweep_agg = app.add_subcommand("sweep-aggregation", "Run quantile, min and mean");

  visage::SweepOptions stability;
  auto* stab = app.add_subcommand("stability", "Monte-Carlo check of the selection bound");
  stab->add_option("--trials", stability.trials, "Number of trials");
  stab->add_option("--max-candidates", stability.max_candidates, "Largest n")
      ->check(CLI::Range(1, 20));
  stab->add_option("--max-budget", stability.max_budget, "Largest k");
  stab->add_option("--max-epsilon", stability.max_epsilon, "Largest noise bound");

  std::string trace_path;
  visage::Position tracked = 0;
  auto* traj = app.add_subcommand("trajectory", "Export a tracked position's trajectory");
  traj->add_option("--trace", trace_path, "Trace JSONL file")->required();
  traj->add_option("--position", tracked, "Tracked position (default: trace label)");

  std::string scenario_out;
  auto* make = app.add_subcommand("make-scenario", "Write a generated scenario to JSON");
  make->add_option("--file", scenario_out, "Destination file")->required();

  auto* fidelity = app.add_subcommand("fidelity", "Compare b-hat with scenario ground truth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sweep_alpha) {
      auto policies = visage::alpha_sweep_policies(alphas, o.beta);
      for (auto& p : policies) {
        p.grounding.delta = o.delta;
        p.grounding.aggregation = visage::parse_aggregation(o.aggregation);
      }
      return report(visage::run_experiment(make_config(o, std::move(policies))));
    }
    if (*sweep_agg) {
      auto policies = visage::aggregation_sweep_policies(o.alpha, o.beta);
      for (auto& p : policies) p.grounding.delta = o.delta;
      return report(visage::run_experiment(make_config(o, std::move(policies))));
    }
    if (*stab) {
      stability.seed = o.seeds.empty() ? 0 : o.seeds.front();
      const auto rows = visage::run_stability_sweep(stability);
      std::size_t violations = 0;
      for (const auto& r : rows) violations += r.trial.violated ? 1 : 0;
      if (o.out.empty()) {
        visage::write_stability_csv(rows, std::cout);
      } else {
        std::filesystem::create_directories(o.out);
        const auto path = std::filesystem::path(o.out) / "stability.csv";
        std::ofstream out(path);
        if (!out) throw visage::HarnessIoError("cannot write " + path.string());
        visage::write_stability_csv(rows, out);
      }
      std::cerr << rows.size() << " trials, " << violations << " violations\n";
      return violations == 0 ? kOk : kVerification;
    }
    if (*traj) {
      const auto trace = visage::load_trace(trace_path);
      if (tracked == 0) {
        if (!trace.labels.tracked_position) {
          throw CLI::ValidationError("trace has no tracked position; pass --position");
        }
        tracked = *trace.labels.tracked_position;
      }
      visage::write_trajectory_csv(visage::export_trajectory(trace, tracked), std::cout);
      return kOk;
    }
    if (*make) {
      const auto scenarios = gather_scenarios(o);
      visage::save_scenario(scenarios.front(), scenario_out);
      return kOk;
    }
    if (*fidelity) {
      visage::GroundingConfig g = base_policy(o).grounding;
      const auto scenarios = gather_scenarios(o);
      const auto rep = visage::estimator_fidelity_report(scenarios, g);
      std::cout.precision(17);
      std::cout << "scenario,epsilon_realized,commitments_match\n";
      for (const auto& row : rep.rows) {
        std::cout << row.scenario << ',' << row.epsilon_realized << ','
                  << (row.commitments_match ? "true" : "false") << '\n';
      }
      return kOk;
    }
    return report(visage::run_experiment(make_config(o, {base_policy(o)})));
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const visage::HarnessIoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const visage::ScenarioFormatError& e) {
    std::cerr << "scenario error: " << e.what() << '\n';
    return kScenario;
  } catch (const visage::ScenarioCoverageError& e) {
    std::cerr << "scenario error: " << e.what() << '\n';
    return kScenario;
  } catch (const visage::ScheduleError& e) {
    std::cerr << "schedule error: " << e.what() << '\n';
    return kSchedule;
  } catch (const visage::TheoremFalsification& e) {
    std::cerr << "verification failure: " << e.what() << '\n';
    return kVerification;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
