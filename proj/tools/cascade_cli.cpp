// CASCADE command-line harness: generate cohorts, run conformal experiments,
// sweep ablation grids and re-render persisted reports.

#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cascade/datagen.hpp"
#include "cascade/errors.hpp"
#include "cascade/harness.hpp"
#include "cascade/random.hpp"
#include "cascade/report.hpp"

namespace {

using cascade::harness::ExperimentConfig;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::vector<std::string> methods;
  std::optional<std::string> filter;
  std::optional<std::string> out_dir;
  std::optional<std::string> format;
  std::optional<int> threads;
  std::optional<std::string> predictions;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file");
  cmd->add_option("--seed", flags.seed, "master seed");
  cmd->add_option("--alpha", flags.alpha, "miscoverage level in (0,1)");
  cmd->add_option("--beta", flags.beta, "cascade sensitivity factor");
  cmd->add_option("--methods", flags.methods,
                  "comma-separated methods (naive,split,cv_plus,jab,mondrian,cascade)")
      ->delimiter(',');
  cmd->add_option("--filter", flags.filter, "evaluation filter: truth|predicted");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--format", flags.format, "report format: json|csv");
  cmd->add_option("--threads", flags.threads, "worker threads");
  cmd->add_option("--predictions", flags.predictions,
                  "ingest externally computed predictions (CSV)");
}

// CLI flags override config-file values.
ExperimentConfig resolve_config(const CommonFlags& flags) {
  ExperimentConfig config = flags.config_path.empty()
                                ? cascade::harness::default_experiment_config()
                                : cascade::harness::config_from_file(flags.config_path);
  if (flags.seed) config.seed = *flags.seed;
  if (flags.alpha) config.alpha = *flags.alpha;
  if (flags.beta) config.beta = *flags.beta;
  if (!flags.methods.empty()) {
    config.methods.clear();
    for (const auto& name : flags.methods)
      config.methods.push_back(cascade::harness::method_from_string(name));
  }
  if (flags.filter) config.filter = cascade::harness::filter_from_string(*flags.filter);
  if (flags.out_dir) config.out_dir = *flags.out_dir;
  if (flags.format) config.format = *flags.format;
  if (flags.threads) config.threads = *flags.threads;
  if (flags.predictions) config.predictions_path = *flags.predictions;
  cascade::harness::validate(config);
  return config;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"CASCADE conformal prediction harness"};
  app.require_subcommand(1);

  CommonFlags gen_flags, run_flags, ablate_flags;
  std::string ablate_param = "beta";
  std::string report_in, report_out, report_format = "csv";

  auto* generate = app.add_subcommand("generate", "write a synthetic cohort CSV");
  add_common_flags(generate, gen_flags);

  auto* run = app.add_subcommand("run", "run a full conformal experiment");
  add_common_flags(run, run_flags);

  auto* ablate = app.add_subcommand("ablate", "sweep one parameter grid");
  add_common_flags(ablate, ablate_flags);
  ablate->add_option("--param", ablate_param, "beta|alpha|K")->required();

  auto* report = app.add_subcommand("report", "re-render persisted results");
  report->add_option("--in", report_in, "directory holding report.json")->required();
  report->add_option("--out", report_out, "output directory (default: --in)");
  report->add_option("--format", report_format, "target format: json|csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the usage message
    return 2;     // command-line misuse is a configuration error
  }

  if (generate->parsed()) {
    const auto config = resolve_config(gen_flags);
    auto gen = config.generator;
    gen.seed = cascade::derive_seed(config.seed, 1);
    const auto cohort = cascade::datagen::generate_cohort(gen);
    const auto path = config.out_dir / "cohort.csv";
    cascade::datagen::save_cohort_csv(cohort, path);
    std::cout << "wrote " << path.string() << " (" << cohort.size() << " subjects)\n";
    return 0;
  }

  if (run->parsed()) {
    const auto config = resolve_config(run_flags);
    const auto result = cascade::harness::run_and_persist(config);
    std::cout << "wrote " << (config.out_dir / "report.json").string() << " ("
              << result.reports.size() << " methods)\n";
    return 0;
  }

  if (ablate->parsed()) {
    const auto config = resolve_config(ablate_flags);
    const auto table = cascade::harness::ablate(config, ablate_param);
    const auto csv_path = config.out_dir / ("ablation_" + ablate_param + ".csv");
    const auto json_path = config.out_dir / ("ablation_" + ablate_param + ".json");
    cascade::harness::write_ablation_csv(table, csv_path);
    cascade::harness::write_ablation_json(table, json_path);
    std::cout << "wrote " << csv_path.string() << " (" << table.rows.size()
              << " rows)\n";
    return 0;
  }

  // report re-render
  if (report_format != "json" && report_format != "csv")
    throw cascade::ConfigError("format must be json or csv");
  const std::filesystem::path in_dir = report_in;
  const std::filesystem::path out_dir = report_out.empty() ? in_dir
                                                           : std::filesystem::path(report_out);
  nlohmann::json metadata;
  const auto reports = cascade::read_reports_json(in_dir / "report.json", &metadata);
  if (report_format == "csv") {
    cascade::write_reports_csv(reports, out_dir / "report.csv");
    std::cout << "wrote " << (out_dir / "report.csv").string() << "\n";
  } else {
    cascade::write_reports_json(reports, metadata, out_dir / "report.json");
    std::cout << "wrote " << (out_dir / "report.json").string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const cascade::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const cascade::ArgumentError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const cascade::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const cascade::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
}
