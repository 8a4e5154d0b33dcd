#pragma once

#include <memory>

#include "orlab/dataset.hpp"
#include "orlab/divergence.hpp"
#include "orlab/evaluate.hpp"
#include "orlab/optim.hpp"

namespace orlab {

enum class Algorithm { bc, td3bc, bear };
enum class CrMode { minmax, raw };

std::string to_string(Algorithm a);
std::string to_string(CrMode m);
Algorithm algorithm_from_string(const std::string& s);
CrMode cr_mode_from_string(const std::string& s);

struct AgentConfig {
  Algorithm algorithm = Algorithm::td3bc;
  bool use_gp = false;
  bool use_cr = false;

  double gamma = 0.99;
  double alpha = 2.5;        // BC-strength scaling of the Q term
  double lambda_gp = 1.0;
  int gp_interval = 5;
  double gp_threshold = 1.0;
  GradSampler gp_sampling = GradSampler::random;
  int gp_expansion = 16;
  double epsilon = 0.05;     // MMD constraint threshold
  double tau = 0.005;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  int policy_delay = 2;
  int batch_size = 256;
  std::int64_t total_steps = 50000;
  std::int64_t eval_interval = 5000;
  int eval_episodes = 10;
  std::uint64_t seed = 0;

  std::vector<int> hidden_dims = {64, 64};
  bool normalize_states = true;
  CrMode cr_mode = CrMode::minmax;
  double dual_lr = 1e-3;
  KernelKind mmd_kernel = KernelKind::laplacian;
  double mmd_sigma = 1.0;
  int mmd_samples = 4;
  std::int64_t behavior_steps = 5000;
  double behavior_lr = 1e-3;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;

  int sep_samples = 512;
  int gradnorm_samples = 1024;
  double lipschitz_lpt = 0.5;  // composite constant for the gradient bound
  FailureConfig failure;

  void validate() const;  // throws ContractError on violations
};

struct StepMetrics {
  std::int64_t step = 0;
  std::optional<double> critic_loss;
  std::optional<double> actor_loss;
  std::optional<double> gp_penalty;
  std::optional<double> mean_abs_q;
  std::optional<double> mean_w;
  std::optional<double> mmd;
  std::optional<double> multiplier;
  std::optional<double> grad_norm_p99;
};

struct AgentState {
  Algorithm algorithm = Algorithm::td3bc;
  int state_dim = 0;
  int action_dim = 0;
  MlpParams actor, actor_target;
  MlpParams q1, q2, q1_target, q2_target;
  OptimState opt_actor, opt_q1, opt_q2;
  std::optional<GaussianPolicy> behavior;
  double log_eta = 0.0;  // BEAR dual variable, kept in log space
  std::int64_t step = 0;
  Normalizer norm;
};

struct Batch {
  Matrix s;       // normalized states
  Matrix a;       // raw actions
  Vector r;
  Matrix s_next;  // normalized next states
  Vector done;
};

AgentState init_agent(const AgentConfig& cfg, const Dataset& ds, Rng& init_rng);

// Deterministic action heads (tanh output, or the clipped Gaussian mean).
Matrix deterministic_actions(const AgentState& st, const Matrix& states_norm);
Matrix deterministic_target_actions(const AgentState& st, const Matrix& states_norm);

// y = r + gamma * (1 - done) * min(Q1t, Q2t)(s', clip(pi_t(s') + clipped noise))
Vector critic_targets(const AgentState& st, const AgentConfig& cfg,
                      const Matrix& next_states_norm, const Vector& rewards,
                      const Vector& done, Rng& noise_rng);

// Min-max normalized mean twin-Q weights over a mini-batch, detached.
// Constant batches map to all ones. cr_mode raw returns the raw mean twin-Q.
Vector cr_weights(const AgentState& st, const AgentConfig& cfg,
                  const Matrix& states_norm, const Matrix& actions);

// Single update steps (plugin paths active per cfg flags).
StepMetrics critic_update(AgentState& st, const AgentConfig& cfg, const Batch& b,
                          Rng& noise_rng, Rng& gp_rng);
StepMetrics actor_update_td3bc(AgentState& st, const AgentConfig& cfg,
                               const Matrix& states_norm, const Matrix& actions);
StepMetrics actor_update_bear(AgentState& st, const AgentConfig& cfg,
                              const Matrix& states_norm, const Matrix& actions,
                              Rng& sample_rng);
StepMetrics bc_update(AgentState& st, const Matrix& states_norm,
                      const Matrix& actions);

// Deterministic evaluation policy over raw environment states.
PolicyFn make_policy(const AgentState& st);

struct CheckpointHistogram {
  std::int64_t step;
  std::vector<SeparabilityResult::Bin> bins;
};

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const EvalReport&, const CheckpointHistogram&)> on_eval;
};

struct TrainResult {
  AgentState state;
  std::vector<StepMetrics> step_log;
  std::vector<EvalReport> eval_log;
  std::vector<CheckpointHistogram> histograms;
  bool failed = false;
  std::int64_t abort_step = -1;
  std::string abort_reason;
  int best_eval_index = -1;
  AgentState best_state;
};

TrainResult train(const AgentConfig& cfg, const Dataset& ds,
                  const TrainHooks* hooks = nullptr);

// Identical loop with the plugin code paths compiled out of the step;
// used to check that disabled plugins leave the backbone bit-for-bit intact.
TrainResult train_backbone_only(const AgentConfig& cfg, const Dataset& ds,
                                const TrainHooks* hooks = nullptr);

void save_checkpoint(const AgentState& st, const std::string& path);
AgentState load_checkpoint(const std::string& path);

}  // namespace orlab
