#include "orlab/runner.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

namespace orlab {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

// Append-only writer; sync() flushes through to disk at checkpoints.
class AppendWriter {
 public:
  explicit AppendWriter(const std::string& path) {
    f_ = std::fopen(path.c_str(), "w");
    if (!f_) throw IoError("cannot open " + path + " for writing");
  }
  ~AppendWriter() {
    if (f_) std::fclose(f_);
  }
  AppendWriter(const AppendWriter&) = delete;
  AppendWriter& operator=(const AppendWriter&) = delete;

  void line(const std::string& s) {
    if (std::fputs(s.c_str(), f_) == EOF || std::fputc('\n', f_) == EOF) {
      throw IoError("write failed");
    }
  }
  void sync() {
    std::fflush(f_);
    ::fsync(fileno(f_));
  }

 private:
  FILE* f_ = nullptr;
};

constexpr const char* kMetricsHeader =
    "step,mean_return,normalized_score,divergence_expert_p75,"
    "divergence_nonexpert_p75,q_separability_auc,grad_norm_p50,grad_norm_p75,"
    "grad_norm_p99,grad_norm_max,theorem2_bound";

constexpr const char* kTrainMetricsHeader =
    "step,critic_loss,actor_loss,gp_penalty,mean_abs_q,mean_w,mmd,multiplier,"
    "grad_norm_p99";

constexpr const char* kHistHeader =
    "step,bin,lo,hi,expert_count,nonexpert_count";

constexpr const char* kStatsHeader =
    "env,name,total_transitions,expert_transitions,medium_transitions,"
    "random_transitions,average_reward";

std::string metrics_row(const EvalReport& r) {
  std::string s = std::to_string(r.step);
  s += "," + format_double(r.mean_return);
  s += "," + format_double(r.normalized_score);
  s += "," + opt_field(r.divergence_expert_p75);
  s += "," + opt_field(r.divergence_nonexpert_p75);
  s += "," + opt_field(r.q_separability_auc);
  s += "," + format_double(r.grad_norms.p50);
  s += "," + format_double(r.grad_norms.p75);
  s += "," + format_double(r.grad_norms.p99);
  s += "," + format_double(r.grad_norms.max);
  s += "," + opt_field(r.theorem2);
  return s;
}

std::string step_row(const StepMetrics& m) {
  std::string s = std::to_string(m.step);
  s += "," + opt_field(m.critic_loss);
  s += "," + opt_field(m.actor_loss);
  s += "," + opt_field(m.gp_penalty);
  s += "," + opt_field(m.mean_abs_q);
  s += "," + opt_field(m.mean_w);
  s += "," + opt_field(m.mmd);
  s += "," + opt_field(m.multiplier);
  s += "," + opt_field(m.grad_norm_p99);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (const auto& item : j.items()) {
    if (!allowed.contains(item.key())) {
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <typename T>
T get_as(const json& j, const std::string& key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + key + "' has the wrong type");
  }
}

}  // namespace

ParsedConfig parse_config_text(const std::string& text, ConfigKind kind) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  std::set<std::string> allowed = {
      "env", "dataset", "out_dir", "seeds", "workers", "percentile",
      "algorithm", "use_gp", "use_cr", "gamma", "alpha", "lambda_gp",
      "gp_interval", "gp_threshold", "gp_sampling", "gp_expansion", "epsilon",
      "tau", "policy_noise", "noise_clip", "policy_delay", "batch_size",
      "total_steps", "eval_interval", "eval_episodes", "hidden_dims",
      "normalize_states", "cr_mode", "dual_lr", "mmd_kernel", "mmd_sigma",
      "mmd_samples", "behavior_steps", "behavior_lr", "actor_lr", "critic_lr",
      "sep_samples", "gradnorm_samples", "lipschitz_lpt", "failure"};
  if (kind == ConfigKind::ablate) allowed.insert("datasets");
  if (kind == ConfigKind::sweep) allowed.insert("sweep");
  check_keys(j, allowed, "config");

  ParsedConfig out;
  RunConfig& cfg = out.run;
  try {
    cfg.env = env_kind_from_string(get_as<std::string>(j, "env", "pointmass2d"));
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d, {"path", "recipe"}, "dataset");
    if (d.contains("path") == d.contains("recipe")) {
      throw ConfigError("dataset needs exactly one of 'path' or 'recipe'");
    }
    if (d.contains("path")) {
      cfg.dataset_path = d.at("path").get<std::string>();
    } else {
      const json& r = d["recipe"];
      check_keys(r, {"mix", "ratio", "n", "seed"}, "dataset.recipe");
      DatasetRecipe rec;
      rec.mix = get_as<std::string>(r, "mix", rec.mix);
      rec.ratio = get_as<double>(r, "ratio", rec.ratio);
      rec.n = get_as<std::int64_t>(r, "n", rec.n);
      rec.seed = get_as<std::uint64_t>(r, "seed", rec.seed);
      static const std::set<std::string> mixes = {
          "expert", "medium", "random", "expert-random", "expert-medium"};
      if (!mixes.contains(rec.mix)) throw ConfigError("unknown dataset mix: " + rec.mix);
      if (rec.ratio < 0.0 || rec.ratio > 1.0) {
        throw ConfigError("dataset ratio must be in [0, 1]");
      }
      if (rec.n < 1) throw ConfigError("dataset n must be >= 1");
      cfg.recipe = rec;
    }
  } else if (kind != ConfigKind::ablate) {
    throw ConfigError("config requires a 'dataset' entry");
  }

  cfg.out_dir = get_as<std::string>(j, "out_dir", "");
  if (cfg.out_dir.empty()) throw ConfigError("config requires 'out_dir'");
  cfg.seeds = get_as<std::vector<std::uint64_t>>(j, "seeds", cfg.seeds);
  if (cfg.seeds.empty()) throw ConfigError("'seeds' must be non-empty");
  cfg.workers = get_as<int>(j, "workers", 0);
  if (j.contains("percentile")) {
    cfg.percentile = j.at("percentile").get<double>();
    if (*cfg.percentile <= 0.0 || *cfg.percentile > 100.0) {
      throw ConfigError("percentile must be in (0, 100]");
    }
  }

  AgentConfig& a = cfg.agent;
  try {
    a.algorithm = algorithm_from_string(get_as<std::string>(j, "algorithm", "td3bc"));
    a.gp_sampling =
        grad_sampler_from_string(get_as<std::string>(j, "gp_sampling", "random"));
    a.cr_mode = cr_mode_from_string(get_as<std::string>(j, "cr_mode", "minmax"));
    a.mmd_kernel =
        kernel_kind_from_string(get_as<std::string>(j, "mmd_kernel", "laplacian"));
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  a.use_gp = get_as<bool>(j, "use_gp", a.use_gp);
  a.use_cr = get_as<bool>(j, "use_cr", a.use_cr);
  a.gamma = get_as<double>(j, "gamma", a.gamma);
  a.alpha = get_as<double>(j, "alpha", a.alpha);
  a.lambda_gp = get_as<double>(j, "lambda_gp", a.lambda_gp);
  a.gp_interval = get_as<int>(j, "gp_interval", a.gp_interval);
  a.gp_threshold = get_as<double>(j, "gp_threshold", a.gp_threshold);
  a.gp_expansion = get_as<int>(j, "gp_expansion", a.gp_expansion);
  a.epsilon = get_as<double>(j, "epsilon", a.epsilon);
  a.tau = get_as<double>(j, "tau", a.tau);
  a.policy_noise = get_as<double>(j, "policy_noise", a.policy_noise);
  a.noise_clip = get_as<double>(j, "noise_clip", a.noise_clip);
  a.policy_delay = get_as<int>(j, "policy_delay", a.policy_delay);
  a.batch_size = get_as<int>(j, "batch_size", a.batch_size);
  a.total_steps = get_as<std::int64_t>(j, "total_steps", a.total_steps);
  a.eval_interval = get_as<std::int64_t>(j, "eval_interval", a.eval_interval);
  a.eval_episodes = get_as<int>(j, "eval_episodes", a.eval_episodes);
  a.hidden_dims = get_as<std::vector<int>>(j, "hidden_dims", a.hidden_dims);
  a.normalize_states = get_as<bool>(j, "normalize_states", a.normalize_states);
  a.dual_lr = get_as<double>(j, "dual_lr", a.dual_lr);
  a.mmd_sigma = get_as<double>(j, "mmd_sigma", a.mmd_sigma);
  a.mmd_samples = get_as<int>(j, "mmd_samples", a.mmd_samples);
  a.behavior_steps = get_as<std::int64_t>(j, "behavior_steps", a.behavior_steps);
  a.behavior_lr = get_as<double>(j, "behavior_lr", a.behavior_lr);
  a.actor_lr = get_as<double>(j, "actor_lr", a.actor_lr);
  a.critic_lr = get_as<double>(j, "critic_lr", a.critic_lr);
  a.sep_samples = get_as<int>(j, "sep_samples", a.sep_samples);
  a.gradnorm_samples = get_as<int>(j, "gradnorm_samples", a.gradnorm_samples);
  a.lipschitz_lpt = get_as<double>(j, "lipschitz_lpt", a.lipschitz_lpt);
  if (j.contains("failure")) {
    const json& f = j["failure"];
    check_keys(f, {"drop_frac", "patience", "gradnorm_factor"}, "failure");
    a.failure.drop_frac = get_as<double>(f, "drop_frac", a.failure.drop_frac);
    a.failure.patience = get_as<int>(f, "patience", a.failure.patience);
    a.failure.gradnorm_factor =
        get_as<double>(f, "gradnorm_factor", a.failure.gradnorm_factor);
  }
  try {
    a.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }

  if (kind == ConfigKind::ablate) {
    if (!j.contains("datasets") || !j["datasets"].is_array() || j["datasets"].empty()) {
      throw ConfigError("ablate config requires a non-empty 'datasets' array");
    }
    for (const auto& d : j["datasets"]) {
      out.ablate_datasets.push_back(d.get<std::string>());
    }
  }
  if (kind == ConfigKind::sweep) {
    if (j.contains("sweep")) {
      const json& s = j["sweep"];
      check_keys(s, {"param", "values"}, "sweep");
      const std::string param = get_as<std::string>(s, "param", "lambda_gp");
      if (param != "lambda_gp") {
        throw ConfigError("only 'lambda_gp' sweeps are supported");
      }
      if (s.contains("values")) {
        out.sweep_values = s.at("values").get<std::vector<double>>();
        if (out.sweep_values.empty()) throw ConfigError("sweep values must be non-empty");
      }
    }
  }
  return out;
}

ParsedConfig load_config(const std::string& path, ConfigKind kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text, kind);
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["env"] = to_string(cfg.env);
  if (cfg.dataset_path) {
    j["dataset"] = {{"path", *cfg.dataset_path}};
  } else if (cfg.recipe) {
    j["dataset"] = {{"recipe",
                     {{"mix", cfg.recipe->mix},
                      {"ratio", cfg.recipe->ratio},
                      {"n", cfg.recipe->n},
                      {"seed", cfg.recipe->seed}}}};
  }
  j["out_dir"] = cfg.out_dir;
  j["seeds"] = cfg.seeds;
  j["workers"] = cfg.workers;
  if (cfg.percentile) j["percentile"] = *cfg.percentile;
  const AgentConfig& a = cfg.agent;
  j["algorithm"] = to_string(a.algorithm);
  j["use_gp"] = a.use_gp;
  j["use_cr"] = a.use_cr;
  j["gamma"] = a.gamma;
  j["alpha"] = a.alpha;
  j["lambda_gp"] = a.lambda_gp;
  j["gp_interval"] = a.gp_interval;
  j["gp_threshold"] = a.gp_threshold;
  j["gp_sampling"] = to_string(a.gp_sampling);
  j["gp_expansion"] = a.gp_expansion;
  j["epsilon"] = a.epsilon;
  j["tau"] = a.tau;
  j["policy_noise"] = a.policy_noise;
  j["noise_clip"] = a.noise_clip;
  j["policy_delay"] = a.policy_delay;
  j["batch_size"] = a.batch_size;
  j["total_steps"] = a.total_steps;
  j["eval_interval"] = a.eval_interval;
  j["eval_episodes"] = a.eval_episodes;
  j["hidden_dims"] = a.hidden_dims;
  j["normalize_states"] = a.normalize_states;
  j["cr_mode"] = to_string(a.cr_mode);
  j["dual_lr"] = a.dual_lr;
  j["mmd_kernel"] = to_string(a.mmd_kernel);
  j["mmd_sigma"] = a.mmd_sigma;
  j["mmd_samples"] = a.mmd_samples;
  j["behavior_steps"] = a.behavior_steps;
  j["behavior_lr"] = a.behavior_lr;
  j["actor_lr"] = a.actor_lr;
  j["critic_lr"] = a.critic_lr;
  j["sep_samples"] = a.sep_samples;
  j["gradnorm_samples"] = a.gradnorm_samples;
  j["lipschitz_lpt"] = a.lipschitz_lpt;
  j["failure"] = {{"drop_frac", a.failure.drop_frac},
                  {"patience", a.failure.patience},
                  {"gradnorm_factor", a.failure.gradnorm_factor}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Dataset building

Dataset build_pure_dataset(EnvKind kind, PolicyLevel level, std::int64_t n,
                           std::uint64_t seed) {
  Rng r(seed);
  const int li = static_cast<int>(level);
  Env env(kind, r.child(2 * li).base_seed());
  Dataset ds = collect(env, scripted_policy(level, kind), n,
                       r.child(2 * li + 1).base_seed());
  ds.meta.seed = seed;
  ds.meta.ref_returns = reference_returns(kind, r.child(100).base_seed());
  ds.meta.name = to_string(level);
  return ds;
}

Dataset build_dataset_from_recipe(EnvKind kind, const DatasetRecipe& recipe) {
  if (recipe.mix == "expert" || recipe.mix == "medium" || recipe.mix == "random") {
    return build_pure_dataset(kind, policy_level_from_string(recipe.mix), recipe.n,
                              recipe.seed);
  }
  const PolicyLevel contaminant = recipe.mix == "expert-random"
                                      ? PolicyLevel::random
                                      : PolicyLevel::medium;
  Dataset expert = build_pure_dataset(kind, PolicyLevel::expert, recipe.n, recipe.seed);
  const auto k = static_cast<std::int64_t>(
      std::floor(recipe.ratio * static_cast<double>(recipe.n) + 1e-9));
  const std::string tag = contaminant == PolicyLevel::random ? "er" : "em";
  const std::string name =
      tag + std::to_string(static_cast<int>(std::llround(recipe.ratio * 100.0)));
  if (k == 0) {
    expert.meta.name = name;
    return expert;
  }
  const Dataset nonexpert = build_pure_dataset(kind, contaminant, k, recipe.seed);
  Dataset mixed = contaminate(expert, nonexpert, recipe.ratio);
  mixed.meta.name = name;
  return mixed;
}

Dataset obtain_dataset(const RunConfig& cfg) {
  Dataset ds;
  if (cfg.dataset_path) {
    ds = load(*cfg.dataset_path);
  } else if (cfg.recipe) {
    ds = build_dataset_from_recipe(cfg.env, *cfg.recipe);
  } else {
    throw ConfigError("run config has neither a dataset path nor a recipe");
  }
  if (ds.meta.env != cfg.env) {
    throw ConfigError("dataset env '" + to_string(ds.meta.env) +
                      "' does not match configured env '" + to_string(cfg.env) + "'");
  }
  if (cfg.percentile) ds = percentile_filter(ds, *cfg.percentile);
  return ds;
}

// ---------------------------------------------------------------------------
// Training runs

namespace {

SeedSummary summarize_seed(std::uint64_t seed, const TrainResult& res,
                           const FailureConfig& failure_cfg) {
  SeedSummary s;
  s.seed = seed;
  s.failed = res.failed;
  s.abort_step = res.abort_step;
  s.abort_reason = res.abort_reason;
  s.checkpoints = static_cast<int>(res.eval_log.size());
  if (!res.eval_log.empty()) {
    const int window = std::min<int>(10, s.checkpoints);
    double sum = 0.0, sumsq = 0.0;
    for (int i = s.checkpoints - window; i < s.checkpoints; ++i) {
      sum += res.eval_log[i].normalized_score;
    }
    const double mean = sum / window;
    for (int i = s.checkpoints - window; i < s.checkpoints; ++i) {
      const double d = res.eval_log[i].normalized_score - mean;
      sumsq += d * d;
    }
    s.final_score_mean = mean;
    s.final_score_std = std::sqrt(sumsq / window);
    double best = res.eval_log.front().normalized_score;
    for (const auto& r : res.eval_log) best = std::max(best, r.normalized_score);
    s.best_score = best;
  }
  s.verdict = failure_detector(res.eval_log, failure_cfg, res.failed, res.abort_step);
  return s;
}

json seed_summary_json(const SeedSummary& s) {
  json j;
  j["seed"] = s.seed;
  j["failed"] = s.failed;
  if (s.failed) {
    j["abort_step"] = s.abort_step;
    j["abort_reason"] = s.abort_reason;
  }
  j["checkpoints"] = s.checkpoints;
  if (s.final_score_mean) {
    j["final_score_mean"] = *s.final_score_mean;
    j["final_score_std"] = *s.final_score_std;
    j["best_normalized_score"] = s.best_score;
  }
  j["failure_detector"] = {{"failed", s.verdict.failed},
                           {"onset_step", s.verdict.onset_step},
                           {"reason", s.verdict.reason}};
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.close();
  if (!out) throw IoError("write failed for " + path);
}

SeedSummary run_one_seed(const RunConfig& cfg, const Dataset& ds,
                         std::uint64_t seed, const std::string& dir) {
  fs::create_directories(dir);
  AgentConfig acfg = cfg.agent;
  acfg.seed = seed;

  AppendWriter metrics(dir + "/metrics.csv");
  AppendWriter train_metrics(dir + "/train_metrics.csv");
  AppendWriter hist(dir + "/q_hist.csv");
  metrics.line(kMetricsHeader);
  train_metrics.line(kTrainMetricsHeader);
  hist.line(kHistHeader);

  std::vector<StepMetrics> pending;
  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    if (m.step % 100 == 0) pending.push_back(m);
  };
  hooks.on_eval = [&](const EvalReport& r, const CheckpointHistogram& h) {
    for (const auto& m : pending) train_metrics.line(step_row(m));
    pending.clear();
    metrics.line(metrics_row(r));
    for (std::size_t b = 0; b < h.bins.size(); ++b) {
      const auto& bin = h.bins[b];
      hist.line(std::to_string(h.step) + "," + std::to_string(b) + "," +
                format_double(bin.lo) + "," + format_double(bin.hi) + "," +
                std::to_string(bin.expert_count) + "," +
                std::to_string(bin.nonexpert_count));
    }
    metrics.sync();
    train_metrics.sync();
    hist.sync();
  };

  const TrainResult res = train(acfg, ds, &hooks);
  // flush whatever is left (aborted runs keep their partial logs)
  for (const auto& m : pending) train_metrics.line(step_row(m));
  pending.clear();
  metrics.sync();
  train_metrics.sync();
  hist.sync();

  save_checkpoint(res.state, dir + "/final.ckpt.json");
  save_checkpoint(res.best_state, dir + "/best.ckpt.json");

  const SeedSummary summary = summarize_seed(seed, res, acfg.failure);
  write_text(dir + "/summary.json", seed_summary_json(summary).dump(2) + "\n");
  return summary;
}

}  // namespace

RunSummary run_train(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("run_train: out_dir required");
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/config.json", config_to_json(cfg));

  const Dataset ds = obtain_dataset(cfg);
  if (!ds.meta.ref_returns) {
    throw ConfigError("dataset has no reference returns; rebuild it with the dataset command");
  }

  RunSummary out;
  out.dir = cfg.out_dir;
  out.seeds.resize(cfg.seeds.size());

  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int workers = std::max(
      1, std::min<int>(cfg.workers > 0 ? cfg.workers : std::max(1, hw),
                       static_cast<int>(cfg.seeds.size())));

  std::vector<std::exception_ptr> errors(cfg.seeds.size());
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= cfg.seeds.size()) return;
        i = next++;
      }
      try {
        const std::string dir =
            cfg.out_dir + "/seed_" + std::to_string(cfg.seeds[i]);
        out.seeds[i] = run_one_seed(cfg, ds, cfg.seeds[i], dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<double> finals;
  for (const auto& s : out.seeds) {
    if (s.failed) out.any_failed = true;
    if (s.final_score_mean) finals.push_back(*s.final_score_mean);
  }
  if (!finals.empty()) {
    double sum = 0.0;
    for (double v : finals) sum += v;
    const double mean = sum / static_cast<double>(finals.size());
    double sumsq = 0.0;
    for (double v : finals) sumsq += (v - mean) * (v - mean);
    out.final_mean = mean;
    out.final_std = std::sqrt(sumsq / static_cast<double>(finals.size()));
    out.final_median = median_of(finals);
  }

  json agg;
  agg["seeds"] = json::array();
  for (const auto& s : out.seeds) agg["seeds"].push_back(seed_summary_json(s));
  if (out.final_mean) {
    agg["final_mean"] = *out.final_mean;
    agg["final_std"] = *out.final_std;
    agg["final_median"] = *out.final_median;
  }
  agg["any_failed"] = out.any_failed;
  write_text(cfg.out_dir + "/summary.json", agg.dump(2) + "\n");
  return out;
}

std::vector<AblateOutcome> run_ablate(const RunConfig& base,
                                      const std::vector<std::string>& dataset_paths) {
  struct Variant {
    const char* label;
    const char* dirname;
    bool gp, cr;
  };
  static constexpr Variant kVariants[] = {{"plain", "plain", false, false},
                                          {"+GP", "gp", true, false},
                                          {"+CR", "cr", false, true},
                                          {"++", "gpcr", true, true}};
  std::vector<AblateOutcome> out;
  fs::create_directories(base.out_dir);
  AppendWriter csv(base.out_dir + "/ablation.csv");
  csv.line("dataset,variant,final_median,final_mean,final_std,failed_runs");
  for (const auto& path : dataset_paths) {
    const std::string ds_name = fs::path(path).stem().string();
    for (const auto& v : kVariants) {
      RunConfig cfg = base;
      cfg.dataset_path = path;
      cfg.recipe.reset();
      cfg.out_dir = base.out_dir + "/" + ds_name + "/" + v.dirname;
      cfg.agent.use_gp = v.gp;
      cfg.agent.use_cr = v.cr;
      AblateOutcome o;
      o.dataset = ds_name;
      o.variant = v.label;
      o.summary = run_train(cfg);
      int failed = 0;
      for (const auto& s : o.summary.seeds) failed += s.failed ? 1 : 0;
      csv.line(ds_name + "," + v.label + "," + opt_field(o.summary.final_median) +
               "," + opt_field(o.summary.final_mean) + "," +
               opt_field(o.summary.final_std) + "," + std::to_string(failed));
      csv.sync();
      out.push_back(std::move(o));
    }
  }
  return out;
}

std::vector<std::pair<double, RunSummary>> run_sweep(const RunConfig& base,
                                                     std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::vector<std::pair<double, RunSummary>> out;
  fs::create_directories(base.out_dir);
  AppendWriter csv(base.out_dir + "/sweep.csv");
  csv.line("lambda_gp,final_median,final_mean,final_std,failed_runs");
  for (double v : values) {
    RunConfig cfg = base;
    char tag[48];
    std::snprintf(tag, sizeof(tag), "lgp_%g", v);
    cfg.out_dir = base.out_dir + "/" + tag;
    if (v == 0.0) {
      // the zero entry is the plain variant by construction
      cfg.agent.use_gp = false;
      cfg.agent.lambda_gp = 0.0;
    } else {
      cfg.agent.use_gp = true;
      cfg.agent.lambda_gp = v;
    }
    RunSummary s = run_train(cfg);
    int failed = 0;
    for (const auto& seed : s.seeds) failed += seed.failed ? 1 : 0;
    csv.line(format_double(v) + "," + opt_field(s.final_median) + "," +
             opt_field(s.final_mean) + "," + opt_field(s.final_std) + "," +
             std::to_string(failed));
    csv.sync();
    out.emplace_back(v, std::move(s));
  }
  return out;
}

DatasetBuildResult cmd_dataset(EnvKind kind, const std::string& mix, double ratio,
                               std::int64_t n, std::uint64_t seed,
                               const std::string& out_dir) {
  static const std::set<std::string> mixes = {"expert", "medium", "random",
                                              "expert-random", "expert-medium"};
  if (!mixes.contains(mix)) throw ConfigError("unknown dataset mix: " + mix);
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("ratio must be in [0, 1]");
  if (n < 1) throw ConfigError("n must be >= 1");
  fs::create_directories(out_dir);

  DatasetBuildResult out;
  std::vector<Dataset> built;
  if (mix == "expert" || mix == "medium" || mix == "random") {
    built.push_back(build_pure_dataset(kind, policy_level_from_string(mix), n, seed));
  } else {
    built.push_back(build_pure_dataset(kind, PolicyLevel::expert, n, seed));
    DatasetRecipe rec{mix, ratio, n, seed};
    built.push_back(build_dataset_from_recipe(kind, rec));
  }

  out.stats_csv = out_dir + "/stats.csv";
  AppendWriter csv(out.stats_csv);
  csv.line(kStatsHeader);
  for (const auto& ds : built) {
    const std::string path = out_dir + "/" + ds.meta.name + ".jsonl";
    save(ds, path);
    const Stats st = dataset_stats(ds);
    csv.line(to_string(ds.meta.env) + "," + ds.meta.name + "," +
             std::to_string(st.total) + "," + std::to_string(st.expert_count) + "," +
             std::to_string(st.medium_count) + "," + std::to_string(st.random_count) +
             "," + format_double(st.average_reward));
    out.paths.push_back(path);
  }
  csv.sync();
  return out;
}

}  // namespace orlab
