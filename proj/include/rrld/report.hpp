// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrld/common.hpp"
#include "rrld/trainer.hpp"

namespace rrld {

// Aggregated result table: one row per method variant, one column per target
// domain plus the Average (mean of per-target means).
struct ReportTable {
  std::vector<std::string> domains;
  struct Row {
    std::string variant;
    std::vector<double> mean;  // aligned with domains
    std::vector<double> stdev;
    double average = 0.0;
  };
  std::vector<Row> rows;
};

inline void to_json(nlohmann::json& j, const ReportTable::Row& r) {
  j = {{"variant", r.variant}, {"mean", r.mean}, {"stdev", r.stdev},
       {"average", r.average}};
}

inline void to_json(nlohmann::json& j, const ReportTable& t) {
  j = {{"schema_version", 1}, {"domains", t.domains}, {"rows", t.rows}};
}

// Builds the table from (variant, RunResult) pairs; all runs must cover the
// same domain set.
inline ReportTable build_report(
    const std::vector<std::pair<std::string, RunResult>>& runs) {
  if (runs.empty()) throw ValueError("build_report: no runs given");
  ReportTable table;
  for (const auto& t : runs.front().second.per_target)
    table.domains.push_back(t.target_domain);
  for (const auto& [variant, result] : runs) {
    std::vector<std::string> domains;
    for (const auto& t : result.per_target) domains.push_back(t.target_domain);
    if (domains != table.domains)
      throw ValueError("build_report: run '" + variant +
                       "' covers a different domain set");
    ReportTable::Row row;
    row.variant = variant;
    for (const auto& t : result.per_target) {
      row.mean.push_back(t.mean_test_accuracy);
      row.stdev.push_back(t.std_test_accuracy);
    }
    row.average = result.average_accuracy;
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Text rendering; the best variant per column is flagged with '*'.
inline std::string render_report(const ReportTable& table) {
  std::ostringstream out;
  auto cell = [](double mean, double stdev, bool best) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(3) << mean << " +/- " << stdev
      << (best ? " *" : "  ");
    return c.str();
  };
  out << std::left << std::setw(12) << "variant";
  for (const auto& d : table.domains) out << std::setw(18) << d;
  out << std::setw(18) << "Average" << "\n";
  for (const auto& r : table.rows) {
    out << std::left << std::setw(12) << r.variant;
    for (std::size_t c = 0; c < table.domains.size(); ++c) {
      double best = -1.0;
      for (const auto& rr : table.rows) best = std::max(best, rr.mean[c]);
      out << std::setw(18) << cell(r.mean[c], r.stdev[c], r.mean[c] == best);
    }
    double best_avg = -1.0;
    for (const auto& rr : table.rows) best_avg = std::max(best_avg, rr.average);
    std::ostringstream avg;
    avg << std::fixed << std::setprecision(3) << r.average
        << (r.average == best_avg ? " *" : "");
    out << std::setw(18) << avg.str() << "\n";
  }
  return out.str();
}

}  // namespace rrld
