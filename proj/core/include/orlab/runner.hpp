#pragma once

#include "orlab/agent.hpp"

namespace orlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Generation recipe for a dataset: a pure set ("expert", "medium", "random")
// or a contaminated mixture ("expert-random", "expert-medium") where the
// final floor(ratio*n) expert transitions are replaced.
struct DatasetRecipe {
  std::string mix = "expert-random";
  double ratio = 0.5;
  std::int64_t n = 40000;
  std::uint64_t seed = 7;
};

struct RunConfig {
  EnvKind env = EnvKind::pointmass2d;
  std::optional<std::string> dataset_path;
  std::optional<DatasetRecipe> recipe;
  std::string out_dir;
  std::vector<std::uint64_t> seeds = {0};
  int workers = 0;  // 0 = use available parallelism
  std::optional<double> percentile;  // optional top-X% reward filter
  AgentConfig agent;
};

// Strict parsing: unknown keys are rejected. `section` extends the schema for
// the ablate ("datasets") and sweep ("sweep") commands.
enum class ConfigKind { train, ablate, sweep };

struct ParsedConfig {
  RunConfig run;
  std::vector<std::string> ablate_datasets;
  std::vector<double> sweep_values = {0.0, 0.01, 0.1, 1.0, 5.0};
};

ParsedConfig parse_config_text(const std::string& text, ConfigKind kind);
ParsedConfig load_config(const std::string& path, ConfigKind kind);
std::string config_to_json(const RunConfig& cfg);

Dataset build_pure_dataset(EnvKind kind, PolicyLevel level, std::int64_t n,
                           std::uint64_t seed);
Dataset build_dataset_from_recipe(EnvKind kind, const DatasetRecipe& recipe);
Dataset obtain_dataset(const RunConfig& cfg);

struct SeedSummary {
  std::uint64_t seed = 0;
  bool failed = false;
  std::int64_t abort_step = -1;
  std::string abort_reason;
  int checkpoints = 0;
  std::optional<double> final_score_mean;
  std::optional<double> final_score_std;
  double best_score = 0.0;
  FailureVerdict verdict;
};

struct RunSummary {
  std::string dir;
  std::vector<SeedSummary> seeds;
  std::optional<double> final_mean;
  std::optional<double> final_std;
  std::optional<double> final_median;
  bool any_failed = false;
};

// One run per seed under out_dir/seed_<s>/ plus an aggregate summary.json.
RunSummary run_train(const RunConfig& cfg);

struct AblateOutcome {
  std::string dataset;
  std::string variant;  // plain, +GP, +CR, ++
  RunSummary summary;
};

std::vector<AblateOutcome> run_ablate(const RunConfig& base,
                                      const std::vector<std::string>& dataset_paths);

std::vector<std::pair<double, RunSummary>> run_sweep(const RunConfig& base,
                                                     std::vector<double> values);

struct DatasetBuildResult {
  std::vector<std::string> paths;
  std::string stats_csv;
};

// Builds the requested sets, writes them as JSONL + metadata, and appends one
// stats row per written dataset.
DatasetBuildResult cmd_dataset(EnvKind kind, const std::string& mix, double ratio,
                               std::int64_t n, std::uint64_t seed,
                               const std::string& out_dir);

std::string format_double(double v);  // %.17g, round-trip exact
double median_of(std::vector<double> values);

}  // namespace orlab
