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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "visage/core.hpp"
#include "visage/decoder.hpp"
#include "visage/denoiser.hpp"
#include "visage/grounding.hpp"
#include "visage/harness.hpp"
#include "visage/verification.hpp"

namespace py = pybind11;
using namespace visage;

namespace {

py::dict trial_to_dict(const StabilityTrial& t) {
  py::dict d;
  d["k"] = t.k;
  d["true_scores"] = t.true_scores;
  d["estimates"] = t.estimates;
  d["epsilon"] = t.epsilon;
  d["selected"] = t.selected;
  d["optimal"] = t.optimal;
  d["loss"] = t.loss;
  d["m"] = t.swapped;
  d["bound"] = t.bound;
  d["refined_bound"] = t.refined_bound;
  d["violated"] = t.violated;
  return d;
}

DecodePolicy make_policy(const std::string& mode, double alpha, double beta, double delta,
                         const std::string& aggregation, const std::string& tie_break) {
  DecodePolicy p;
  p.mode = parse_decode_mode(mode);
  p.grounding.alpha = alpha;
  p.grounding.beta = beta;
  p.grounding.delta = delta;
  p.grounding.aggregation = parse_aggregation(aggregation);
  p.tie_break = parse_tie_break(tie_break);
  return p;
}

}  // namespace

PYBIND11_MODULE(_visage, m) {
  m.doc() = "Grounding-aware parallel masked decoding";

  py::register_exception<ScheduleError>(m, "ScheduleError", PyExc_ValueError);
  py::register_exception<CommitViolation>(m, "CommitViolation", PyExc_RuntimeError);
  py::register_exception<ScenarioCoverageError>(m, "ScenarioCoverageError", PyExc_RuntimeError);
  py::register_exception<ScenarioFormatError>(m, "ScenarioFormatError", PyExc_ValueError);
  py::register_exception<OracleSizeError>(m, "OracleSizeError", PyExc_ValueError);
  py::register_exception<TheoremFalsification>(m, "TheoremFalsification", PyExc_AssertionError);

  py::class_<UnmaskSchedule>(m, "UnmaskSchedule")
      .def_readonly("gen_length", &UnmaskSchedule::gen_length)
      .def_readonly("steps", &UnmaskSchedule::steps)
      .def_readonly("block_length", &UnmaskSchedule::block_length)
      .def_readonly("budgets", &UnmaskSchedule::budgets)
      .def_property_readonly("num_blocks", &UnmaskSchedule::num_blocks)
      .def_property_readonly("steps_per_block", &UnmaskSchedule::steps_per_block);

  m.def("make_block_schedule", &make_block_schedule, py::arg("gen_length"), py::arg("steps"),
        py::arg("block_length"));

  m.def("renormalize_attention",
        [](const std::vector<double>& row, double delta) { return renormalize_attention(row, delta); },
        py::arg("row"), py::arg("delta") = 1e-8);
  m.def("head_entropy", [](const std::vector<double>& d) { return head_entropy(d); });
  m.def("quantile_aggregate",
        [](const std::vector<double>& h, double beta) { return quantile_aggregate(h, beta); },
        py::arg("entropies"), py::arg("beta"));
  m.def("ranking_score", &ranking_score, py::arg("confidence"), py::arg("aggregate_entropy"),
        py::arg("alpha"));
  m.def("discrepancy_estimate", &discrepancy_estimate, py::arg("aggregate_entropy"),
        py::arg("alpha"));

  m.def("brute_force_select",
        [](const std::vector<double>& scores, std::size_t k) {
          const auto sel = brute_force_select(scores, k);
          return py::make_tuple(sel.positions, sel.value);
        },
        py::arg("log_scores"), py::arg("k"));
  m.def("topk_positions",
        [](const std::vector<double>& values, std::size_t k) { return topk_positions(values, k); },
        py::arg("values"), py::arg("k"));
  m.def("run_stability_trial",
        [](const std::vector<double>& truth, double eps, std::size_t k, std::uint64_t seed) {
          return trial_to_dict(run_stability_trial(truth, eps, k, seed));
        },
        py::arg("true_scores"), py::arg("epsilon"), py::arg("k"), py::arg("seed") = 0);
  m.def("worst_case_trial",
        [](std::size_t k, double eps, double gap) {
          const auto w = construct_worst_case(k, eps, gap);
          return trial_to_dict(evaluate_stability(w.true_scores, w.estimates, w.k));
        },
        py::arg("k"), py::arg("epsilon"), py::arg("gap"));

  py::class_<ScenarioSpec>(m, "ScenarioSpec")
      .def_readonly("name", &ScenarioSpec::name)
      .def_readonly("gen_length", &ScenarioSpec::gen_length)
      .def_readonly("heads", &ScenarioSpec::heads)
      .def_readonly("image_tokens", &ScenarioSpec::image_tokens)
      .def_readonly("grounded_position", &ScenarioSpec::grounded_position)
      .def_readonly("ungrounded_position", &ScenarioSpec::ungrounded_position)
      .def_readonly("tracked_position", &ScenarioSpec::tracked_position)
      .def("to_json", &dump_scenario);

  m.def("make_shortcut_scenario",
        [](double cs, double cg, std::size_t n, std::size_t heads, std::size_t sharp) {
          return make_shortcut_scenario(cs, cg, n, heads, sharp);
        },
        py::arg("c_shortcut"), py::arg("c_grounded"), py::arg("image_tokens") = 16,
        py::arg("heads") = 8, py::arg("sharp_heads") = 8);
  m.def("make_trajectory_scenario",
        [](const std::string& kind, std::size_t steps) {
          return make_trajectory_scenario(
              kind == "grounded" ? TrajectoryKind::kGrounded : TrajectoryKind::kShortcut, steps);
        },
        py::arg("kind"), py::arg("steps"));
  m.def("parse_scenario", [](const std::string& text) { return parse_scenario(text); });
  m.def("load_scenario", &load_scenario);

  py::class_<DecodeTrace>(m, "DecodeTrace")
      .def_readonly("fingerprint", &DecodeTrace::fingerprint)
      .def_readonly("final_response", &DecodeTrace::final_response)
      .def_property_readonly("committed",
                             [](const DecodeTrace& t) {
                               std::vector<std::vector<Position>> out;
                               for (const auto& s : t.steps) out.push_back(s.committed_positions());
                               return out;
                             })
      .def("commit_step", &DecodeTrace::commit_step)
      .def("to_jsonl", [](const DecodeTrace& t) {
        std::ostringstream os;
        write_trace_jsonl(t, os);
        return os.str();
      });

  m.def("decode",
        [](const ScenarioSpec& spec, const std::string& mode, double alpha, double beta,
           double delta, const std::string& aggregation, const std::string& tie_break,
           std::uint64_t seed) {
          const ScriptedDenoiser denoiser(spec);
          return decode(denoiser, spec.default_schedule(),
                        make_policy(mode, alpha, beta, delta, aggregation, tie_break), seed)
              .trace;
        },
        py::arg("scenario"), py::arg("mode") = "visage", py::arg("alpha") = 0.5,
        py::arg("beta") = 0.25, py::arg("delta") = 1e-8, py::arg("aggregation") = "quantile",
        py::arg("tie_break") = "lowest_position", py::arg("seed") = 0);
  m.def("replay_trace", &replay_trace);
  m.def("export_trajectory",
        [](const DecodeTrace& trace, Position position) {
          py::list rows;
          for (const auto& r : export_trajectory(trace, position)) {
            py::dict d;
            d["step"] = r.step;
            d["peak"] = r.peak;
            d["peak_normalized"] = r.peak_normalized;
            d["reference"] = r.reference;
            d["confidence"] = r.confidence;
            d["aggregate_entropy"] = r.aggregate_entropy;
            d["committed"] = r.committed;
            rows.append(d);
          }
          return rows;
        },
        py::arg("trace"), py::arg("position"));
}
