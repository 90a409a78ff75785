#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascade/metrics.hpp"
#include "cascade/types.hpp"

namespace cascade {

// Primary output record per evaluated method. KS compares the method's test
// interval lengths against the split-CP baseline; Spearman correlates lengths
// with the Venn-Abers uncertainty score.
struct MetricsReport {
  std::string method;
  Real marginal_coverage = 0.0;
  Real avg_length = 0.0;
  Real cascade_ratio = metrics::kUndefined;
  Real winkler = 0.0;
  metrics::KsResult ks_vs_baseline;
  metrics::SpearmanResult spearman;
  std::vector<metrics::StratumRow> per_stratum;
  std::map<std::string, metrics::ConfidenceInterval> ci;
};

// Round to 12 significant digits; all report files render numbers through
// this so reruns are byte-identical and shortest-round-trip JSON output never
// exceeds 12 digits.
Real snap_significant(Real x, int digits = 12);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

void write_reports_json(const std::vector<MetricsReport>& reports,
                        const nlohmann::json& metadata,
                        const std::filesystem::path& path);
std::vector<MetricsReport> read_reports_json(const std::filesystem::path& path,
                                             nlohmann::json* metadata = nullptr);

// Flat CSV: one `overall` row per method with every metric, then one row per
// stratum carrying coverage and mean length. Column order is fixed:
// method,stratum,count,coverage,avg_length,cascade_ratio,winkler,
// ks_d,ks_p,spearman_rho,spearman_p,
// coverage_ci_lo,coverage_ci_hi,avg_length_ci_lo,avg_length_ci_hi,
// cascade_ratio_ci_lo,cascade_ratio_ci_hi,winkler_ci_lo,winkler_ci_hi
std::string reports_to_csv(const std::vector<MetricsReport>& reports);
void write_reports_csv(const std::vector<MetricsReport>& reports,
                       const std::filesystem::path& path);

}  // namespace cascade
