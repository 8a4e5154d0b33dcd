#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "orlab/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

void print_run_summary(const orlab::RunSummary& s) {
  std::printf("run %s: %zu seed(s)", s.dir.c_str(), s.seeds.size());
  if (s.final_median) {
    std::printf(", final normalized score median %.2f (mean %.2f +/- %.2f)",
                *s.final_median, *s.final_mean, *s.final_std);
  }
  if (s.any_failed) std::printf(", contains failed run(s)");
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offline RL laboratory for contaminated demonstration datasets"};
  app.require_subcommand(1);

  // dataset
  auto* ds_cmd = app.add_subcommand("dataset", "build datasets and a stats table");
  std::string ds_env = "pointmass2d";
  std::string ds_mix = "expert-random";
  double ds_ratio = 0.5;
  std::int64_t ds_n = 40000;
  std::uint64_t ds_seed = 7;
  std::string ds_out = "data";
  ds_cmd->add_option("--env", ds_env, "pointmass2d or pendulum");
  ds_cmd->add_option("--mix", ds_mix,
                     "expert | medium | random | expert-random | expert-medium");
  ds_cmd->add_option("--ratio", ds_ratio, "contamination ratio in [0,1]");
  ds_cmd->add_option("--n", ds_n, "expert dataset size (mixture size)");
  ds_cmd->add_option("--seed", ds_seed, "generation seed");
  ds_cmd->add_option("--out", ds_out, "output directory");

  // train / ablate / sweep
  std::string train_config, ablate_config, sweep_config;
  auto* train_cmd = app.add_subcommand("train", "train per the JSON config");
  train_cmd->add_option("--config", train_config, "config path")->required();
  auto* ablate_cmd =
      app.add_subcommand("ablate", "run plain/+GP/+CR/++ on each listed dataset");
  ablate_cmd->add_option("--config", ablate_config, "config path")->required();
  auto* sweep_cmd = app.add_subcommand("sweep", "sweep lambda_gp over a value grid");
  sweep_cmd->add_option("--config", sweep_config, "config path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ds_cmd->parsed()) {
      const auto kind = orlab::env_kind_from_string(ds_env);
      const auto res =
          orlab::cmd_dataset(kind, ds_mix, ds_ratio, ds_n, ds_seed, ds_out);
      for (const auto& p : res.paths) std::printf("wrote %s\n", p.c_str());
      std::printf("wrote %s\n", res.stats_csv.c_str());
    } else if (train_cmd->parsed()) {
      const auto parsed = orlab::load_config(train_config, orlab::ConfigKind::train);
      print_run_summary(orlab::run_train(parsed.run));
    } else if (ablate_cmd->parsed()) {
      const auto parsed = orlab::load_config(ablate_config, orlab::ConfigKind::ablate);
      const auto outcomes = orlab::run_ablate(parsed.run, parsed.ablate_datasets);
      for (const auto& o : outcomes) {
        std::printf("%s / %s: ", o.dataset.c_str(), o.variant.c_str());
        print_run_summary(o.summary);
      }
    } else if (sweep_cmd->parsed()) {
      const auto parsed = orlab::load_config(sweep_config, orlab::ConfigKind::sweep);
      const auto outcomes = orlab::run_sweep(parsed.run, parsed.sweep_values);
      for (const auto& o : outcomes) {
        std::printf("lambda_gp=%g: ", o.first);
        print_run_summary(o.second);
      }
    }
  } catch (const orlab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const orlab::ContractError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const orlab::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitOk;
}
