/* Copyright 2026 The sdlab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Accounting over decode traces: tokens per target pass, modeled and wall
// throughput, and the per-run breakdown used in the result tables.

#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "sdlab/specdec.hpp"

namespace sdlab {

struct CostModel {
  double c_target = 20.0;
  double c_draft = 1.0;
  double c_policy = 0.05;

  void validate() const {
    if (c_target < 0.0 || c_draft < 0.0 || c_policy < 0.0) throw Error("costs must be non-negative");
    if (!(c_target > 0.0)) throw Error("c_target must be positive");
  }
};

struct RunReport {
  long samples = 0;
  double tau = 0.0;
  double tok_s_wall = 0.0;
  double tok_s_model = 0.0;  // tokens per modeled cost unit, times c_target
  double speedup = 0.0;      // modeled, vs one target pass per token
  double T_total_wall = 0.0;
  double T_draft_wall = 0.0;
  double T_target_wall = 0.0;
  double T_total_model = 0.0;
  double T_draft_model = 0.0;
  double T_target_model = 0.0;
  double T_policy_model = 0.0;
  long N_draft = 0;
  long N_target = 0;
  long N_waste = 0;
  long N_accepted = 0;
  long N_policy = 0;
  long total_tokens = 0;
};

inline RunReport compute_metrics(std::span<const IterationTrace> traces, const PhaseTimes& wall,
                                 const CostModel& cost, long total_tokens) {
  cost.validate();
  if (traces.empty()) throw Error("no iterations to report");
  RunReport r;
  r.samples = 1;
  r.total_tokens = total_tokens;
  r.N_target = static_cast<long>(traces.size());
  for (const auto& t : traces) {
    r.N_draft += t.drafted;
    r.N_accepted += t.accepted;
    r.N_policy += t.predicted_len.has_value();
  }
  r.N_waste = r.N_draft - r.N_accepted;
  r.tau = static_cast<double>(total_tokens) / static_cast<double>(r.N_target);

  r.T_target_model = static_cast<double>(r.N_target) * cost.c_target;
  r.T_draft_model = static_cast<double>(r.N_draft) * cost.c_draft;
  r.T_policy_model = static_cast<double>(r.N_policy) * cost.c_policy;
  r.T_total_model = r.T_target_model + r.T_draft_model + r.T_policy_model;
  r.tok_s_model = static_cast<double>(total_tokens) * cost.c_target / r.T_total_model;
  r.speedup = r.tok_s_model;

  r.T_total_wall = wall.total;
  r.T_draft_wall = wall.draft;
  r.T_target_wall = wall.target;
  r.tok_s_wall = wall.total > 0.0 ? static_cast<double>(total_tokens) / wall.total : 0.0;
  return r;
}

inline RunReport compute_metrics(const DecodeResult& res, const CostModel& cost) {
  return compute_metrics(res.traces, res.wall, cost, static_cast<long>(res.output.size()));
}

/// Rates are means over the per-sample reports; counts and times are sums.
inline RunReport aggregate(std::span<const RunReport> reports) {
  if (reports.empty()) throw Error("nothing to aggregate");
  RunReport a;
  double w = 0.0;
  for (const auto& r : reports) {
    const auto n = static_cast<double>(r.samples);
    w += n;
    a.samples += r.samples;
    a.tau += r.tau * n;
    a.tok_s_wall += r.tok_s_wall * n;
    a.tok_s_model += r.tok_s_model * n;
    a.speedup += r.speedup * n;
    a.T_total_wall += r.T_total_wall;
    a.T_draft_wall += r.T_draft_wall;
    a.T_target_wall += r.T_target_wall;
    a.T_total_model += r.T_total_model;
    a.T_draft_model += r.T_draft_model;
    a.T_target_model += r.T_target_model;
    a.T_policy_model += r.T_policy_model;
    a.N_draft += r.N_draft;
    a.N_target += r.N_target;
    a.N_waste += r.N_waste;
    a.N_accepted += r.N_accepted;
    a.N_policy += r.N_policy;
    a.total_tokens += r.total_tokens;
  }
  a.tau /= w;
  a.tok_s_wall /= w;
  a.tok_s_model /= w;
  a.speedup /= w;
  return a;
}

struct MethodRow {
  std::string method;
  std::string draft_len;  // "k", "adaptive", or "-"
  RunReport report;
};

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

/// Result table with modeled times only, so the file is reproducible.
inline std::string report_csv(std::span<const MethodRow> rows) {
  std::string out = "method,draft_len,tau,tok_s,T_total,T_draft,T_target,N_draft,N_target,N_waste\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    out += row.method + ',' + row.draft_len + ',' + fmt("%.4f", r.tau) + ',' +
           fmt("%.4f", r.tok_s_model) + ',' + fmt("%.2f", r.T_total_model) + ',' +
           fmt("%.2f", r.T_draft_model) + ',' + fmt("%.2f", r.T_target_model) + ',' +
           std::to_string(r.N_draft) + ',' + std::to_string(r.N_target) + ',' +
           std::to_string(r.N_waste) + '\n';
  }
  return out;
}

inline std::string report_markdown(std::span<const MethodRow> rows) {
  std::string out =
      "| method | draft len | tau | tok/cost (model) | speedup | tok/s (wall) | T_total wall (s) | "
      "N_draft | N_target | N_waste |\n"
      "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    out += "| " + row.method + " | " + row.draft_len + " | " + fmt("%.3f", r.tau) + " | " +
           fmt("%.3f", r.tok_s_model) + " | " + fmt("%.2fx", r.speedup) + " | " +
           fmt("%.0f", r.tok_s_wall) + " | " + fmt("%.3f", r.T_total_wall) + " | " +
           std::to_string(r.N_draft) + " | " + std::to_string(r.N_target) + " | " +
           std::to_string(r.N_waste) + " |\n";
  }
  return out;
}

}  // namespace sdlab
