#include "orlab/evaluate.hpp"

#include <algorithm>
#include <cmath>

namespace orlab {

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile of empty set");
  if (p <= 0.0 || p > 100.0) throw ContractError("percentile p must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<std::int64_t>(values.size());
  std::int64_t rank = static_cast<std::int64_t>(
      std::ceil(p / 100.0 * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::int64_t>(rank, 1, n);
  return values[rank - 1];
}

ScoreResult rollout_score(const PolicyFn& policy, EnvKind kind, int episodes,
                          std::uint64_t seed, const RefReturns& refs) {
  if (refs.expert_avg <= refs.random_avg) {
    throw ContractError("rollout_score: reference returns are degenerate");
  }
  Env env(kind, seed);
  double total = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    Vector s = env.reset();
    bool done = false;
    while (!done) {
      const StepResult r = env.step(policy(s));
      total += r.reward;
      s = r.next_state;
      done = r.done;
    }
  }
  ScoreResult out;
  out.mean_return = total / static_cast<double>(episodes);
  out.normalized = 100.0 * (out.mean_return - refs.random_avg) /
                   (refs.expert_avg - refs.random_avg);
  return out;
}

DivergenceDiag divergence_diagnostic(const PolicyFn& policy, const Dataset& ds) {
  std::vector<double> expert_sq, nonexpert_sq;
  expert_sq.reserve(ds.rows.size());
  nonexpert_sq.reserve(ds.rows.size());
  for (const auto& t : ds.rows) {
    const double d2 = (policy(t.s) - t.a).squaredNorm();
    if (t.provenance == PolicyLevel::expert) {
      expert_sq.push_back(d2);
    } else {
      nonexpert_sq.push_back(d2);
    }
  }
  DivergenceDiag out;
  if (!expert_sq.empty()) out.expert_p75 = nearest_rank_percentile(expert_sq, 75.0);
  if (!nonexpert_sq.empty()) {
    out.nonexpert_p75 = nearest_rank_percentile(nonexpert_sq, 75.0);
  }
  return out;
}

SeparabilityResult q_separability(const QFn& qfn, const Dataset& ds, int sample_n,
                                  Rng& rng) {
  std::vector<std::int64_t> expert_idx, nonexpert_idx;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    (ds.rows[i].provenance == PolicyLevel::expert ? expert_idx : nonexpert_idx)
        .push_back(i);
  }
  if (expert_idx.empty() || nonexpert_idx.empty()) {
    throw ContractError("q_separability: both provenance classes required");
  }

  auto pick = [&](std::vector<std::int64_t>& pool) {
    if (static_cast<int>(pool.size()) <= sample_n) return pool;
    // partial Fisher-Yates for a uniform subset without replacement
    std::vector<std::int64_t> out = pool;
    for (int i = 0; i < sample_n; ++i) {
      const std::int64_t j = i + rng.uniform_int(static_cast<std::int64_t>(out.size()) - i);
      std::swap(out[i], out[j]);
    }
    out.resize(sample_n);
    return out;
  };
  const std::vector<std::int64_t> es = pick(expert_idx);
  const std::vector<std::int64_t> ns = pick(nonexpert_idx);

  auto gather_q = [&](const std::vector<std::int64_t>& idx) {
    const int sd = static_cast<int>(ds.rows.front().s.size());
    const int ad = static_cast<int>(ds.rows.front().a.size());
    Matrix S(idx.size(), sd), A(idx.size(), ad);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      S.row(i) = ds.rows[idx[i]].s.transpose();
      A.row(i) = ds.rows[idx[i]].a.transpose();
    }
    return qfn(S, A);
  };
  const Vector qe = gather_q(es);
  const Vector qn = gather_q(ns);

  // Mann-Whitney AUC via average ranks; ties count one half.
  struct Entry {
    double v;
    bool expert;
  };
  std::vector<Entry> all;
  all.reserve(qe.size() + qn.size());
  for (Eigen::Index i = 0; i < qe.size(); ++i) all.push_back({qe[i], true});
  for (Eigen::Index i = 0; i < qn.size(); ++i) all.push_back({qn[i], false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.v < b.v; });
  double rank_sum_expert = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].expert) rank_sum_expert += avg_rank;
    }
    i = j;
  }
  const double ne = static_cast<double>(qe.size());
  const double nn = static_cast<double>(qn.size());
  const double u = rank_sum_expert - ne * (ne + 1.0) / 2.0;

  SeparabilityResult out;
  out.auc = u / (ne * nn);

  const double lo = std::min(qe.minCoeff(), qn.minCoeff());
  const double hi = std::max(qe.maxCoeff(), qn.maxCoeff());
  const double width = (hi > lo) ? (hi - lo) / 50.0 : 1.0;
  out.bins.resize(50);
  for (int b = 0; b < 50; ++b) {
    out.bins[b] = {lo + b * width, lo + (b + 1) * width, 0, 0};
  }
  auto binify = [&](const Vector& q, bool expert) {
    for (Eigen::Index r = 0; r < q.size(); ++r) {
      int b = (hi > lo) ? static_cast<int>((q[r] - lo) / width) : 0;
      b = std::clamp(b, 0, 49);
      if (expert) {
        out.bins[b].expert_count += 1;
      } else {
        out.bins[b].nonexpert_count += 1;
      }
    }
  };
  binify(qe, true);
  binify(qn, false);
  return out;
}

std::string to_string(GradSampler s) {
  switch (s) {
    case GradSampler::dataset: return "dataset";
    case GradSampler::policy: return "policy";
    case GradSampler::random: return "random";
  }
  return "?";
}

GradSampler grad_sampler_from_string(const std::string& s) {
  if (s == "dataset") return GradSampler::dataset;
  if (s == "policy") return GradSampler::policy;
  if (s == "random") return GradSampler::random;
  throw ContractError("unknown gradient sampler: " + s);
}

GradNormPercentiles grad_norm_profile(const MlpParams& q1, const MlpParams& q2,
                                      const Matrix& states, const Matrix& actions,
                                      GradSampler sampler, int n, Rng& rng,
                                      const BatchPolicyFn* policy_batch) {
  const Eigen::Index total = states.rows();
  const int sd = static_cast<int>(states.cols());
  const int ad = static_cast<int>(actions.cols());
  Matrix S(n, sd), A(n, ad);
  for (int i = 0; i < n; ++i) {
    const std::int64_t idx = rng.uniform_int(total);
    S.row(i) = states.row(idx);
    A.row(i) = actions.row(idx);
  }
  if (sampler == GradSampler::random) {
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ad; ++c) A(i, c) = rng.uniform(-1.0, 1.0);
  } else if (sampler == GradSampler::policy) {
    if (!policy_batch) {
      throw ContractError("grad_norm_profile: policy sampler needs a policy");
    }
    A = (*policy_batch)(S);
  }

  Matrix x(n, sd + ad);
  x.leftCols(sd) = S;
  x.rightCols(ad) = A;
  const Matrix g1 = input_gradient(q1, x).rightCols(ad);
  const Matrix g2 = input_gradient(q2, x).rightCols(ad);
  std::vector<double> norms(n);
  for (int i = 0; i < n; ++i) {
    norms[i] = std::max(g1.row(i).norm(), g2.row(i).norm());
  }
  GradNormPercentiles out;
  out.p50 = nearest_rank_percentile(norms, 50.0);
  out.p75 = nearest_rank_percentile(norms, 75.0);
  out.p99 = nearest_rank_percentile(norms, 99.0);
  out.max = *std::max_element(norms.begin(), norms.end());
  return out;
}

double theorem2_bound(const LipschitzSpec& spec) {
  if (spec.action_dim < 1 || spec.reward_lipschitz < 0.0 ||
      spec.gamma < 0.0 || spec.gamma >= 1.0 || spec.policy_dynamics_lipschitz < 0.0) {
    throw std::domain_error("theorem2_bound: parameters out of range");
  }
  if (spec.gamma * spec.policy_dynamics_lipschitz >= 1.0) {
    throw std::domain_error("theorem2_bound: gamma * L must be < 1");
  }
  return std::sqrt(static_cast<double>(spec.action_dim)) * spec.reward_lipschitz /
         (1.0 - spec.gamma * spec.policy_dynamics_lipschitz);
}

FailureVerdict failure_detector(const std::vector<EvalReport>& log,
                                const FailureConfig& cfg, bool aborted,
                                std::int64_t abort_step) {
  if (aborted) {
    return {true, abort_step, "non-finite training abort"};
  }
  if (log.empty()) return {};

  // Score criterion: below drop_frac of the running max for >= patience
  // consecutive checkpoints (requires an improvement phase first).
  double running_max = log.front().normalized_score;
  int streak = 0;
  std::int64_t streak_start = -1;
  for (const auto& r : log) {
    running_max = std::max(running_max, r.normalized_score);
    if (running_max > 0.0 && r.normalized_score < cfg.drop_frac * running_max) {
      if (streak == 0) streak_start = r.step;
      streak += 1;
      if (streak >= cfg.patience) {
        return {true, streak_start, "score collapse"};
      }
    } else {
      streak = 0;
      streak_start = -1;
    }
  }

  const double base_p99 = log.front().grad_norms.p99;
  if (base_p99 > 0.0) {
    for (const auto& r : log) {
      if (r.grad_norms.p99 > cfg.gradnorm_factor * base_p99) {
        return {true, r.step, "gradient-norm blowup"};
      }
    }
  }
  return {};
}

}  // namespace orlab
