#pragma once

#include <functional>
#include <optional>

#include "orlab/dataset.hpp"
#include "orlab/mlp.hpp"

namespace orlab {

using PolicyFn = std::function<Vector(const Vector& state)>;
// Batched mean twin-Q over raw (state, action) rows.
using QFn = std::function<Vector(const Matrix& states, const Matrix& actions)>;
// Batched deterministic policy over prepared (normalized) states.
using BatchPolicyFn = std::function<Matrix(const Matrix& states)>;

// Nearest-rank percentile (no interpolation); p in (0, 100].
double nearest_rank_percentile(std::vector<double> values, double p);

struct ScoreResult {
  double mean_return = 0.0;
  double normalized = 0.0;
};

// Deterministic rollouts, no exploration noise.
// normalized = 100 * (return - random_ref) / (expert_ref - random_ref).
ScoreResult rollout_score(const PolicyFn& policy, EnvKind kind, int episodes,
                          std::uint64_t seed, const RefReturns& refs);

struct DivergenceDiag {
  std::optional<double> expert_p75;
  std::optional<double> nonexpert_p75;
};

// Per-provenance 75th percentile of ||pi(s_i) - a_i||^2 over all rows.
DivergenceDiag divergence_diagnostic(const PolicyFn& policy, const Dataset& ds);

struct SeparabilityResult {
  double auc = 0.5;
  struct Bin {
    double lo, hi;
    std::int64_t expert_count, nonexpert_count;
  };
  std::vector<Bin> bins;  // 50 shared-range bins
};

// AUC = P(random expert row outscores a random non-expert row), ties half.
SeparabilityResult q_separability(const QFn& qfn, const Dataset& ds, int sample_n,
                                  Rng& rng);

enum class GradSampler { dataset, policy, random };

std::string to_string(GradSampler s);
GradSampler grad_sampler_from_string(const std::string& s);

struct GradNormPercentiles {
  double p50 = 0.0, p75 = 0.0, p99 = 0.0, max = 0.0;
};

// Percentiles of ||grad_a Q(s,a)||_2, max over the two critics, over n
// sampled pairs. `states` are already prepared for the critics (normalized),
// `actions` are the aligned dataset actions; the policy sampler needs
// `policy_batch`.
GradNormPercentiles grad_norm_profile(const MlpParams& q1, const MlpParams& q2,
                                      const Matrix& states, const Matrix& actions,
                                      GradSampler sampler, int n, Rng& rng,
                                      const BatchPolicyFn* policy_batch = nullptr);

struct LipschitzSpec {
  int action_dim = 1;
  double reward_lipschitz = 1.0;
  double gamma = 0.99;
  double policy_dynamics_lipschitz = 0.5;  // must satisfy gamma * L < 1
};

// sqrt(N) * L_r / (1 - gamma * L).
double theorem2_bound(const LipschitzSpec& spec);

struct EvalReport {
  std::int64_t step = 0;
  double mean_return = 0.0;
  double normalized_score = 0.0;
  std::optional<double> divergence_expert_p75;
  std::optional<double> divergence_nonexpert_p75;
  std::optional<double> q_separability_auc;
  GradNormPercentiles grad_norms;
  std::optional<double> theorem2;
};

struct FailureConfig {
  double drop_frac = 0.25;      // score below this fraction of the running max
  int patience = 3;             // for this many consecutive checkpoints
  double gradnorm_factor = 10.0;  // or p99 above this multiple of checkpoint 1
};

struct FailureVerdict {
  bool failed = false;
  std::int64_t onset_step = -1;
  std::string reason;
};

// Flags catastrophic failure from a checkpoint log. A run aborted on
// non-finite numerics counts as failed at the abort step.
FailureVerdict failure_detector(const std::vector<EvalReport>& log,
                                const FailureConfig& cfg = {},
                                bool aborted = false,
                                std::int64_t abort_step = -1);

}  // namespace orlab
