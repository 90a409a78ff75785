#include "cascade/report.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "cascade/errors.hpp"
#include "internal/csv.hpp"

namespace cascade {

using nlohmann::json;

Real snap_significant(Real x, int digits) {
  if (!std::isfinite(x)) return x;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*e", digits - 1, x);
  return std::strtod(buf, nullptr);
}

namespace {

json number_or_null(Real x) {
  if (std::isnan(x)) return nullptr;
  return snap_significant(x);
}

Real from_number_or_null(const json& j) {
  if (j.is_null()) return metrics::kUndefined;
  return j.get<Real>();
}

std::string csv_number(Real x) {
  if (std::isnan(x)) return "nan";
  return io::format_real(snap_significant(x), 12);
}

}  // namespace

json report_to_json(const MetricsReport& report) {
  json j;
  j["method"] = report.method;
  j["marginal_coverage"] = number_or_null(report.marginal_coverage);
  j["avg_length"] = number_or_null(report.avg_length);
  j["cascade_ratio"] = number_or_null(report.cascade_ratio);
  j["winkler"] = number_or_null(report.winkler);
  j["ks_vs_baseline"] = {{"d", number_or_null(report.ks_vs_baseline.d)},
                         {"p", number_or_null(report.ks_vs_baseline.p)}};
  j["spearman"] = {{"rho", number_or_null(report.spearman.rho)},
                   {"p", number_or_null(report.spearman.p)}};
  j["per_stratum"] = json::array();
  for (const auto& row : report.per_stratum) {
    j["per_stratum"].push_back({{"stratum", row.label},
                                {"count", row.count},
                                {"coverage", number_or_null(row.coverage)},
                                {"mean_length", number_or_null(row.mean_length)}});
  }
  j["ci"] = json::object();
  for (const auto& [metric, interval] : report.ci) {
    j["ci"][metric] = {{"lo", number_or_null(interval.lo)},
                       {"hi", number_or_null(interval.hi)}};
  }
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport report;
  report.method = j.at("method").get<std::string>();
  report.marginal_coverage = from_number_or_null(j.at("marginal_coverage"));
  report.avg_length = from_number_or_null(j.at("avg_length"));
  report.cascade_ratio = from_number_or_null(j.at("cascade_ratio"));
  report.winkler = from_number_or_null(j.at("winkler"));
  report.ks_vs_baseline.d = from_number_or_null(j.at("ks_vs_baseline").at("d"));
  report.ks_vs_baseline.p = from_number_or_null(j.at("ks_vs_baseline").at("p"));
  report.spearman.rho = from_number_or_null(j.at("spearman").at("rho"));
  report.spearman.p = from_number_or_null(j.at("spearman").at("p"));
  for (const auto& row : j.at("per_stratum")) {
    metrics::StratumRow stratum;
    stratum.label = row.at("stratum").get<std::string>();
    stratum.count = row.at("count").get<Index>();
    stratum.coverage = from_number_or_null(row.at("coverage"));
    stratum.mean_length = from_number_or_null(row.at("mean_length"));
    report.per_stratum.push_back(std::move(stratum));
  }
  for (const auto& [metric, interval] : j.at("ci").items()) {
    report.ci[metric] = {from_number_or_null(interval.at("lo")),
                         from_number_or_null(interval.at("hi"))};
  }
  return report;
}

void write_reports_json(const std::vector<MetricsReport>& reports,
                        const json& metadata, const std::filesystem::path& path) {
  if (reports.empty()) throw ArgumentError("write_reports_json: no reports");
  json j;
  j["metadata"] = metadata;
  j["reports"] = json::array();
  for (const auto& report : reports) j["reports"].push_back(report_to_json(report));
  auto out = io::open_output(path);
  out << j.dump(2) << "\n";
}

std::vector<MetricsReport> read_reports_json(const std::filesystem::path& path,
                                             json* metadata) {
  auto in = io::open_input(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
  if (metadata != nullptr) *metadata = j.value("metadata", json::object());
  std::vector<MetricsReport> reports;
  try {
    for (const auto& item : j.at("reports")) reports.push_back(report_from_json(item));
  } catch (const json::exception& e) {
    throw DataError("malformed report file " + path.string() + ": " + e.what());
  }
  return reports;
}

std::string reports_to_csv(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ArgumentError("reports_to_csv: no reports");
  std::string out =
      "method,stratum,count,coverage,avg_length,cascade_ratio,winkler,"
      "ks_d,ks_p,spearman_rho,spearman_p,"
      "coverage_ci_lo,coverage_ci_hi,avg_length_ci_lo,avg_length_ci_hi,"
      "cascade_ratio_ci_lo,cascade_ratio_ci_hi,winkler_ci_lo,winkler_ci_hi\n";
  auto ci_of = [](const MetricsReport& r, const std::string& key) {
    auto it = r.ci.find(key);
    if (it == r.ci.end())
      return std::pair<Real, Real>(metrics::kUndefined, metrics::kUndefined);
    return std::pair<Real, Real>(it->second.lo, it->second.hi);
  };
  for (const auto& r : reports) {
    const auto [cov_lo, cov_hi] = ci_of(r, "coverage");
    const auto [len_lo, len_hi] = ci_of(r, "avg_length");
    const auto [cr_lo, cr_hi] = ci_of(r, "cascade_ratio");
    const auto [wk_lo, wk_hi] = ci_of(r, "winkler");
    Index total = 0;
    for (const auto& s : r.per_stratum) total += s.count;
    out += r.method + ",overall," + std::to_string(total) +
           ',' + csv_number(r.marginal_coverage) + ',' + csv_number(r.avg_length) +
           ',' + csv_number(r.cascade_ratio) + ',' + csv_number(r.winkler) + ',' +
           csv_number(r.ks_vs_baseline.d) + ',' + csv_number(r.ks_vs_baseline.p) +
           ',' + csv_number(r.spearman.rho) + ',' + csv_number(r.spearman.p) + ',' +
           csv_number(cov_lo) + ',' + csv_number(cov_hi) + ',' + csv_number(len_lo) +
           ',' + csv_number(len_hi) + ',' + csv_number(cr_lo) + ',' +
           csv_number(cr_hi) + ',' + csv_number(wk_lo) + ',' + csv_number(wk_hi) +
           "\n";
    for (const auto& s : r.per_stratum) {
      out += r.method + ',' + s.label + ',' + std::to_string(s.count) + ',' +
             csv_number(s.coverage) + ',' + csv_number(s.mean_length) +
             ",,,,,,,,,,,,,,\n";
    }
  }
  return out;
}

void write_reports_csv(const std::vector<MetricsReport>& reports,
                       const std::filesystem::path& path) {
  auto out = io::open_output(path);
  out << reports_to_csv(reports);
}

}  // namespace cascade
