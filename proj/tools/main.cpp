// dtfl: run, sweep and align experiments from a JSON config.
//
//   dtfl run <config>
//   dtfl sweep <config> --param <name> --values <v1,v2,...> --seeds <n>
//   dtfl align <config>
//
// Exit codes: 0 success, 2 configuration/input error, 3 numeric failure.
// DTFL_OUTPUT_ROOT overrides the config's output_root.

#include <cstdio>
#include <exception>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtfl/errors.hpp"
#include "dtfl/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNumericError = 3;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

void print_run_summary(const std::vector<dtfl::experiment::Cell>& cells, std::size_t max_rounds) {
  std::printf("%-8s %6s %8s %9s %8s\n", "strategy", "seed", "rounds", "accuracy", "auc");
  for (const auto& c : cells) {
    const auto& s = c.result.summary;
    std::string rounds = s.rounds_to_target ? std::to_string(*s.rounds_to_target) : ">" + std::to_string(max_rounds);
    const double acc = s.final_metrics ? s.final_metrics->accuracy : 0.0;
    const double auc = s.final_metrics && s.final_metrics->auc ? *s.final_metrics->auc : 0.0;
    std::printf("%-8s %6llu %8s %9.4f %8.4f\n", c.strategy.c_str(), static_cast<unsigned long long>(c.seed),
                rounds.c_str(), acc, auc);
  }
}

}  // namespace

int main(int argc, char** argv) {
  namespace ex = dtfl::experiment;

  CLI::App app{"Digital-twin federated anomaly detection simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::size_t jobs = 0;
  app.add_option("--jobs", jobs, "Concurrent experiment cells (overrides the config)");

  auto* run = app.add_subcommand("run", "Run every strategy x seed of a config");
  run->add_option("config", config_path, "Config file")->required();

  std::string param, values;
  std::size_t seeds = 0;
  auto* sweep = app.add_subcommand("sweep", "Sweep one parameter");
  sweep->add_option("config", config_path, "Config file")->required();
  sweep->add_option("--param", param, "E, B, C, gamma, teacher_epochs or exchange_policy");
  sweep->add_option("--values", values, "Comma-separated values");
  sweep->add_option("--seeds", seeds, "Seeds per cell (0..n-1); default: the config's seed list");

  auto* align = app.add_subcommand("align", "Alignment report between the real and twin datasets");
  align->add_option("config", config_path, "Config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    auto config = ex::load_config(config_path);
    if (jobs > 0) config.jobs = jobs;

    if (run->parsed()) {
      const auto cells = ex::run_cells(config);
      const auto dir = ex::write_run_bundle(config, cells);
      print_run_summary(cells, config.fl.max_rounds);
      std::printf("results: %s\n", dir.string().c_str());
    } else if (sweep->parsed()) {
      ex::SweepSpec spec;
      if (config.sweep) spec = *config.sweep;
      if (!param.empty()) spec.param = param;
      if (!values.empty()) spec.values = split_list(values);
      if (spec.param.empty()) throw dtfl::ConfigError("sweep.param", "no sweep parameter given");
      if (seeds > 0) {
        config.seeds.resize(seeds);
        std::iota(config.seeds.begin(), config.seeds.end(), std::uint64_t{0});
      }
      const auto dir = ex::run_sweep(config, spec);
      std::printf("results: %s\n", dir.string().c_str());
    } else if (align->parsed()) {
      const auto dir = ex::run_alignment(config);
      std::printf("results: %s\n", dir.string().c_str());
    }
    return kOk;
  } catch (const dtfl::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const dtfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const dtfl::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfigError;
  } catch (const dtfl::IngestError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
