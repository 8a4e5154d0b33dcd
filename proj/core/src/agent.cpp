#include "orlab/agent.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace orlab {

using nlohmann::json;

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::bc: return "bc";
    case Algorithm::td3bc: return "td3bc";
    case Algorithm::bear: return "bear";
  }
  return "?";
}

std::string to_string(CrMode m) {
  return m == CrMode::minmax ? "minmax" : "raw";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "bc") return Algorithm::bc;
  if (s == "td3bc") return Algorithm::td3bc;
  if (s == "bear") return Algorithm::bear;
  throw ContractError("unknown algorithm: " + s);
}

CrMode cr_mode_from_string(const std::string& s) {
  if (s == "minmax") return CrMode::minmax;
  if (s == "raw") return CrMode::raw;
  throw ContractError("unknown cr_mode: " + s);
}

void AgentConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ContractError(std::string("AgentConfig: ") + msg);
  };
  require(gamma > 0.0 && gamma < 1.0, "gamma must be in (0,1)");
  require(alpha > 0.0, "alpha must be > 0");
  require(lambda_gp >= 0.0, "lambda_gp must be >= 0");
  require(gp_interval >= 1, "gp_interval must be >= 1");
  require(gp_threshold > 0.0, "gp_threshold must be > 0");
  require(gp_expansion >= 1, "gp_expansion must be >= 1");
  require(epsilon > 0.0, "epsilon must be > 0");
  require(tau > 0.0 && tau <= 1.0, "tau must be in (0,1]");
  require(policy_noise >= 0.0 && noise_clip >= 0.0, "noise parameters must be >= 0");
  require(policy_delay >= 1, "policy_delay must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(total_steps >= 1, "total_steps must be >= 1");
  require(eval_interval >= 1, "eval_interval must be >= 1");
  require(eval_episodes >= 1, "eval_episodes must be >= 1");
  require(!hidden_dims.empty(), "hidden_dims must be non-empty");
  for (int h : hidden_dims) require(h >= 1, "hidden dims must be >= 1");
  require(dual_lr > 0.0, "dual_lr must be > 0");
  require(mmd_sigma > 0.0, "mmd_sigma must be > 0");
  require(mmd_samples >= 1, "mmd_samples must be >= 1");
  require(behavior_steps >= 1, "behavior_steps must be >= 1");
  require(behavior_lr > 0.0 && actor_lr > 0.0 && critic_lr > 0.0,
          "learning rates must be > 0");
  require(sep_samples >= 1, "sep_samples must be >= 1");
  require(gradnorm_samples >= 1, "gradnorm_samples must be >= 1");
  require(lipschitz_lpt >= 0.0 && gamma * lipschitz_lpt < 1.0,
          "gamma * lipschitz_lpt must be < 1");
  require(failure.drop_frac > 0.0 && failure.drop_frac < 1.0,
          "failure.drop_frac must be in (0,1)");
  require(failure.patience >= 1, "failure.patience must be >= 1");
  require(failure.gradnorm_factor > 1.0, "failure.gradnorm_factor must be > 1");
}

AgentState init_agent(const AgentConfig& cfg, const Dataset& ds, Rng& init_rng) {
  if (ds.rows.empty()) throw ContractError("init_agent: empty dataset");
  AgentState st;
  st.algorithm = cfg.algorithm;
  st.state_dim = static_cast<int>(ds.rows.front().s.size());
  st.action_dim = static_cast<int>(ds.rows.front().a.size());

  if (cfg.normalize_states) {
    st.norm = fit_normalizer(ds);
  } else {
    st.norm.mean = Vector::Zero(st.state_dim);
    st.norm.stddev = Vector::Ones(st.state_dim);
  }

  MlpSpec actor_spec;
  actor_spec.input_dim = st.state_dim;
  actor_spec.hidden_dims = cfg.hidden_dims;
  if (cfg.algorithm == Algorithm::bear) {
    actor_spec.output_dim = 2 * st.action_dim;
    actor_spec.output_activation = Act::identity;
  } else {
    actor_spec.output_dim = st.action_dim;
    actor_spec.output_activation = Act::tanh;
  }
  MlpSpec critic_spec{st.state_dim + st.action_dim, cfg.hidden_dims, 1, Act::relu,
                      Act::identity};

  Rng ra = init_rng.split();
  Rng r1 = init_rng.split();
  Rng r2 = init_rng.split();
  st.actor = mlp_init(actor_spec, ra);
  st.q1 = mlp_init(critic_spec, r1);
  st.q2 = mlp_init(critic_spec, r2);
  st.actor_target = st.actor;
  st.q1_target = st.q1;
  st.q2_target = st.q2;
  st.opt_actor = make_optim(st.actor, cfg.actor_lr);
  st.opt_q1 = make_optim(st.q1, cfg.critic_lr);
  st.opt_q2 = make_optim(st.q2, cfg.critic_lr);
  st.log_eta = 0.0;
  st.step = 0;
  return st;
}

namespace {

Matrix det_actions(const MlpParams& actor, Algorithm alg, int action_dim,
                   const Matrix& states_norm) {
  if (alg == Algorithm::bear) {
    const GaussHeads h = gaussian_heads(actor, action_dim, -5.0, 2.0, states_norm);
    return h.mean.cwiseMax(-1.0).cwiseMin(1.0);
  }
  return forward(actor, states_norm);
}

Matrix concat_sa(const Matrix& s, const Matrix& a) {
  Matrix x(s.rows(), s.cols() + a.cols());
  x.leftCols(s.cols()) = s;
  x.rightCols(a.cols()) = a;
  return x;
}

void merge_metrics(StepMetrics& into, const StepMetrics& other) {
  if (other.critic_loss) into.critic_loss = other.critic_loss;
  if (other.actor_loss) into.actor_loss = other.actor_loss;
  if (other.gp_penalty) into.gp_penalty = other.gp_penalty;
  if (other.mean_abs_q) into.mean_abs_q = other.mean_abs_q;
  if (other.mean_w) into.mean_w = other.mean_w;
  if (other.mmd) into.mmd = other.mmd;
  if (other.multiplier) into.multiplier = other.multiplier;
  if (other.grad_norm_p99) into.grad_norm_p99 = other.grad_norm_p99;
}

}  // namespace

Matrix deterministic_actions(const AgentState& st, const Matrix& states_norm) {
  return det_actions(st.actor, st.algorithm, st.action_dim, states_norm);
}

Matrix deterministic_target_actions(const AgentState& st, const Matrix& states_norm) {
  return det_actions(st.actor_target, st.algorithm, st.action_dim, states_norm);
}

Vector critic_targets(const AgentState& st, const AgentConfig& cfg,
                      const Matrix& next_states_norm, const Vector& rewards,
                      const Vector& done, Rng& noise_rng) {
  const Eigen::Index B = next_states_norm.rows();
  Matrix a2 = deterministic_target_actions(st, next_states_norm);
  for (Eigen::Index i = 0; i < B; ++i) {
    for (int j = 0; j < a2.cols(); ++j) {
      const double noise = std::clamp(cfg.policy_noise * noise_rng.gauss(),
                                      -cfg.noise_clip, cfg.noise_clip);
      a2(i, j) = std::clamp(a2(i, j) + noise, -1.0, 1.0);
    }
  }
  const Matrix x2 = concat_sa(next_states_norm, a2);
  const Vector q1t = forward(st.q1_target, x2).col(0);
  const Vector q2t = forward(st.q2_target, x2).col(0);
  const Vector q_min = q1t.cwiseMin(q2t);
  Vector y = rewards.array() +
             cfg.gamma * (1.0 - done.array()) * q_min.array();
  if (!y.allFinite()) {
    throw NumericError("critic_targets: non-finite target value");
  }
  return y;
}

Vector cr_weights(const AgentState& st, const AgentConfig& cfg,
                  const Matrix& states_norm, const Matrix& actions) {
  if (states_norm.rows() == 0) throw ContractError("cr_weights: empty batch");
  const Matrix x = concat_sa(states_norm, actions);
  const Vector q =
      0.5 * (forward(st.q1, x).col(0) + forward(st.q2, x).col(0));
  if (cfg.cr_mode == CrMode::raw) return q;
  const double qmin = q.minCoeff();
  const double qmax = q.maxCoeff();
  if (qmax == qmin) return Vector::Ones(q.size());
  return (q.array() - qmin) / (qmax - qmin);
}

namespace {

template <bool kPlugins>
StepMetrics critic_update_impl(AgentState& st, const AgentConfig& cfg,
                               const Batch& b, Rng& noise_rng, Rng& gp_rng) {
  StepMetrics m;
  m.step = st.step;
  const Eigen::Index B = b.s.rows();
  const double inv_b = 1.0 / static_cast<double>(B);

  const Vector y = critic_targets(st, cfg, b.s_next, b.r, b.done, noise_rng);

  const Matrix x = concat_sa(b.s, b.a);
  Tape t1, t2;
  const Vector q1v = forward(st.q1, x, &t1).col(0);
  const Vector q2v = forward(st.q2, x, &t2).col(0);
  const Vector e1 = q1v - y;
  const Vector e2 = q2v - y;
  const double loss = inv_b * (e1.squaredNorm() + e2.squaredNorm());
  if (!std::isfinite(loss)) throw NumericError("critic_update: non-finite loss");
  m.critic_loss = loss;

  ParamGrads g1 = backward_params(st.q1, t1, (2.0 * inv_b) * e1);
  ParamGrads g2 = backward_params(st.q2, t2, (2.0 * inv_b) * e2);

  if constexpr (kPlugins) {
    if (cfg.use_gp) {
      if (st.step % cfg.gp_interval == 0) {
        const int R = cfg.gp_expansion;
        const int ad = st.action_dim;
        Matrix sg(B * R, b.s.cols());
        Matrix ag(B * R, ad);
        for (int k = 0; k < R; ++k) sg.middleRows(k * B, B) = b.s;
        switch (cfg.gp_sampling) {
          case GradSampler::random:
            for (Eigen::Index i = 0; i < sg.rows(); ++i)
              for (int j = 0; j < ad; ++j) ag(i, j) = gp_rng.uniform(-1.0, 1.0);
            break;
          case GradSampler::dataset:
            for (int k = 0; k < R; ++k) ag.middleRows(k * B, B) = b.a;
            break;
          case GradSampler::policy: {
            const Matrix pi = deterministic_actions(st, b.s);
            for (int k = 0; k < R; ++k) ag.middleRows(k * B, B) = pi;
            break;
          }
        }
        Vector n1, n2;
        const GpResult r1 =
            gp_value_and_param_grad(st.q1, sg, ag, cfg.gp_threshold, &n1);
        const GpResult r2 =
            gp_value_and_param_grad(st.q2, sg, ag, cfg.gp_threshold, &n2);
        g1.add_scaled(r1.grads, cfg.lambda_gp);
        g2.add_scaled(r2.grads, cfg.lambda_gp);
        m.gp_penalty = r1.penalty + r2.penalty;
        std::vector<double> norms(n1.size());
        for (Eigen::Index i = 0; i < n1.size(); ++i) norms[i] = std::max(n1[i], n2[i]);
        m.grad_norm_p99 = nearest_rank_percentile(std::move(norms), 99.0);
      } else {
        m.gp_penalty = 0.0;  // off-interval step: no second-order work
      }
    }
  }

  if (!adam_step(st.opt_q1, st.q1, g1)) {
    throw NumericError("critic_update: non-finite gradients for Q1");
  }
  if (!adam_step(st.opt_q2, st.q2, g2)) {
    throw NumericError("critic_update: non-finite gradients for Q2");
  }
  polyak_update(st.q1_target, st.q1, cfg.tau);
  polyak_update(st.q2_target, st.q2, cfg.tau);
  return m;
}

template <bool kPlugins>
StepMetrics actor_update_td3bc_impl(AgentState& st, const AgentConfig& cfg,
                                    const Matrix& states_norm,
                                    const Matrix& actions) {
  StepMetrics m;
  m.step = st.step;
  const Eigen::Index B = states_norm.rows();
  const double inv_b = 1.0 / static_cast<double>(B);

  Tape ta;
  const Matrix pi = forward(st.actor, states_norm, &ta);

  const Vector q_data = forward(st.q1, concat_sa(states_norm, actions)).col(0);
  const double mean_abs_q = q_data.cwiseAbs().mean();
  const double lambda = cfg.alpha / mean_abs_q;
  m.mean_abs_q = mean_abs_q;

  const Matrix x_pi = concat_sa(states_norm, pi);
  const Vector q_pi = forward(st.q1, x_pi).col(0);
  const Matrix gq =
      input_gradient(st.q1, x_pi).rightCols(st.action_dim);

  Vector w = Vector::Ones(B);
  if constexpr (kPlugins) {
    if (cfg.use_cr) w = cr_weights(st, cfg, states_norm, actions);
  }
  m.mean_w = w.mean();

  const Matrix diff = pi - actions;
  const double bc_term =
      (diff.rowwise().squaredNorm().array() * w.array()).mean();
  const double loss = -lambda * q_pi.mean() + bc_term;
  if (!std::isfinite(loss)) throw NumericError("actor_update: non-finite loss");
  m.actor_loss = loss;

  Matrix dpi = (-lambda * inv_b) * gq;
  dpi += (2.0 * inv_b) * (diff.array().colwise() * w.array()).matrix();
  const ParamGrads ga = backward_params(st.actor, ta, dpi);
  if (!adam_step(st.opt_actor, st.actor, ga)) {
    throw NumericError("actor_update: non-finite actor gradients");
  }
  polyak_update(st.actor_target, st.actor, cfg.tau);
  return m;
}

template <bool kPlugins>
StepMetrics actor_update_bear_impl(AgentState& st, const AgentConfig& cfg,
                                   const Matrix& states_norm,
                                   const Matrix& actions, Rng& sample_rng) {
  (void)actions;
  if (!st.behavior) {
    throw ContractError("actor_update_bear: no fitted behavior model");
  }
  StepMetrics m;
  m.step = st.step;
  const Eigen::Index B = states_norm.rows();
  const int ms = cfg.mmd_samples;
  const int ad = st.action_dim;

  const GaussHeads hb = gaussian_heads(st.behavior->net, ad,
                                       st.behavior->log_std_min,
                                       st.behavior->log_std_max, states_norm);
  const GaussHeads hp = gaussian_heads(st.actor, ad, -5.0, 2.0, states_norm);

  // Shared reparameterization noise couples the two sample sets, so the MMD
  // estimate is exactly zero when the policy coincides with the behavior model.
  Matrix eps(B * ms, ad);
  for (Eigen::Index r = 0; r < eps.rows(); ++r)
    for (int c = 0; c < ad; ++c) eps(r, c) = sample_rng.gauss();

  Matrix beta_s(B * ms, ad), pi_s(B * ms, ad), clip_open(B * ms, ad);
  const Matrix sd_b = hb.log_std.array().exp().matrix();
  const Matrix sd_p = hp.log_std.array().exp().matrix();
  for (Eigen::Index i = 0; i < B; ++i) {
    for (int j = 0; j < ms; ++j) {
      const Eigen::Index r = i * ms + j;
      beta_s.row(r) = (hb.mean.row(i).array() + sd_b.row(i).array() * eps.row(r).array())
                          .max(-1.0).min(1.0).matrix();
      const Eigen::ArrayXd pre =
          hp.mean.row(i).array() + sd_p.row(i).array() * eps.row(r).array();
      clip_open.row(r) = ((pre > -1.0) && (pre < 1.0)).cast<double>().matrix().transpose();
      pi_s.row(r) = pre.max(-1.0).min(1.0).matrix().transpose();
    }
  }

  // Q term over all policy samples, conservative twin minimum.
  Matrix s_rep(B * ms, states_norm.cols());
  for (Eigen::Index i = 0; i < B; ++i)
    for (int j = 0; j < ms; ++j) s_rep.row(i * ms + j) = states_norm.row(i);
  const Matrix x_pi = concat_sa(s_rep, pi_s);
  const Vector q1v = forward(st.q1, x_pi).col(0);
  const Vector q2v = forward(st.q2, x_pi).col(0);
  const Matrix g1 = input_gradient(st.q1, x_pi).rightCols(ad);
  const Matrix g2 = input_gradient(st.q2, x_pi).rightCols(ad);
  Vector q_min(B * ms);
  Matrix gq(B * ms, ad);
  for (Eigen::Index r = 0; r < q_min.size(); ++r) {
    if (q1v[r] <= q2v[r]) {
      q_min[r] = q1v[r];
      gq.row(r) = g1.row(r);
    } else {
      q_min[r] = q2v[r];
      gq.row(r) = g2.row(r);
    }
  }

  const Kernel kernel(cfg.mmd_kernel, cfg.mmd_sigma);
  Vector mmd(B);
  std::vector<Matrix> mmd_grads(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const Matrix bx = beta_s.middleRows(i * ms, ms);
    const Matrix py = pi_s.middleRows(i * ms, ms);
    mmd[i] = mmd_squared(bx, py, kernel);
    mmd_grads[i] = mmd_squared_grad_y(bx, py, kernel);
  }

  Vector v = Vector::Ones(B);
  if constexpr (kPlugins) {
    if (cfg.use_cr) {
      Matrix beta_first(B, ad);
      for (Eigen::Index i = 0; i < B; ++i) beta_first.row(i) = beta_s.row(i * ms);
      v = cr_weights(st, cfg, states_norm, beta_first);
    }
  }
  m.mean_w = v.mean();

  const double eta = std::exp(st.log_eta);
  const double weighted_mmd = (mmd.array() * v.array()).mean();
  const double loss = -q_min.mean() + eta * ((mmd.array() - cfg.epsilon) * v.array()).mean();
  if (!std::isfinite(loss)) throw NumericError("actor_update_bear: non-finite loss");
  m.actor_loss = loss;
  m.mmd = mmd.mean();
  m.mean_abs_q = q_min.cwiseAbs().mean();

  // Gradient with respect to each policy sample, then back through the clip,
  // the reparameterization and the clamped log-std head.
  const double inv_bm = 1.0 / static_cast<double>(B * ms);
  const double inv_b = 1.0 / static_cast<double>(B);
  Matrix dmu = Matrix::Zero(B, ad);
  Matrix dls = Matrix::Zero(B, ad);
  for (Eigen::Index i = 0; i < B; ++i) {
    for (int j = 0; j < ms; ++j) {
      const Eigen::Index r = i * ms + j;
      Eigen::ArrayXd dsample = (-inv_bm) * gq.row(r).transpose().array();
      dsample += (eta * v[i] * inv_b) * mmd_grads[i].row(j).transpose().array();
      dsample *= clip_open.row(r).transpose().array();
      dmu.row(i) += dsample.matrix().transpose();
      dls.row(i) += (dsample * sd_p.row(i).transpose().array() *
                     eps.row(r).transpose().array())
                        .matrix()
                        .transpose();
    }
  }
  dls = dls.cwiseProduct(hp.clamp_open);
  Matrix dout(B, 2 * ad);
  dout.leftCols(ad) = dmu;
  dout.rightCols(ad) = dls;
  const ParamGrads ga = backward_params(st.actor, hp.tape, dout);
  if (!adam_step(st.opt_actor, st.actor, ga)) {
    throw NumericError("actor_update_bear: non-finite actor gradients");
  }
  polyak_update(st.actor_target, st.actor, cfg.tau);

  // Dual ascent on the weighted constraint; eta stays in [1e-6, 1e6].
  st.log_eta += cfg.dual_lr * (weighted_mmd - cfg.epsilon);
  st.log_eta = std::clamp(st.log_eta, std::log(1e-6), std::log(1e6));
  m.multiplier = std::exp(st.log_eta);
  return m;
}

}  // namespace

StepMetrics critic_update(AgentState& st, const AgentConfig& cfg, const Batch& b,
                          Rng& noise_rng, Rng& gp_rng) {
  return critic_update_impl<true>(st, cfg, b, noise_rng, gp_rng);
}

StepMetrics actor_update_td3bc(AgentState& st, const AgentConfig& cfg,
                               const Matrix& states_norm, const Matrix& actions) {
  return actor_update_td3bc_impl<true>(st, cfg, states_norm, actions);
}

StepMetrics actor_update_bear(AgentState& st, const AgentConfig& cfg,
                              const Matrix& states_norm, const Matrix& actions,
                              Rng& sample_rng) {
  return actor_update_bear_impl<true>(st, cfg, states_norm, actions, sample_rng);
}

StepMetrics bc_update(AgentState& st, const Matrix& states_norm,
                      const Matrix& actions) {
  StepMetrics m;
  m.step = st.step;
  const double inv_b = 1.0 / static_cast<double>(states_norm.rows());
  Tape ta;
  const Matrix pi = forward(st.actor, states_norm, &ta);
  const Matrix diff = pi - actions;
  const double loss = diff.rowwise().squaredNorm().mean();
  if (!std::isfinite(loss)) throw NumericError("bc_update: non-finite loss");
  m.actor_loss = loss;
  const ParamGrads ga = backward_params(st.actor, ta, (2.0 * inv_b) * diff);
  if (!adam_step(st.opt_actor, st.actor, ga)) {
    throw NumericError("bc_update: non-finite gradients");
  }
  return m;
}

PolicyFn make_policy(const AgentState& st) {
  struct Snap {
    Algorithm alg;
    MlpParams actor;
    Normalizer norm;
    int action_dim;
  };
  auto snap = std::make_shared<Snap>(Snap{st.algorithm, st.actor, st.norm,
                                          st.action_dim});
  return [snap](const Vector& raw_state) -> Vector {
    const Matrix s = snap->norm.apply(raw_state).transpose();
    return det_actions(snap->actor, snap->alg, snap->action_dim, s)
        .row(0)
        .transpose();
  };
}

namespace {

template <bool kPlugins>
TrainResult train_impl(const AgentConfig& cfg, const Dataset& ds,
                       const TrainHooks* hooks) {
  cfg.validate();
  if (ds.rows.empty()) throw ContractError("train: empty dataset");
  if (!ds.meta.ref_returns) {
    throw ContractError("train: dataset metadata lacks reference returns");
  }

  Rng root(cfg.seed);
  Rng init_rng = root.split();
  Rng batch_rng = root.split();
  Rng noise_rng = root.split();
  Rng gp_rng = root.split();
  Rng bear_rng = root.split();
  Rng behavior_rng = root.split();
  Rng eval_base = root.split();

  TrainResult res;
  res.state = init_agent(cfg, ds, init_rng);
  AgentState& st = res.state;

  const DatasetView view = make_view(ds);
  const Matrix sn_all = st.norm.apply_rows(view.states);
  const Matrix s2n_all = st.norm.apply_rows(view.next_states);

  if (cfg.algorithm == Algorithm::bear) {
    BehaviorFitConfig bf;
    bf.steps = cfg.behavior_steps;
    bf.batch_size = cfg.batch_size;
    bf.lr = cfg.behavior_lr;
    bf.hidden_dims = cfg.hidden_dims;
    st.behavior = behavior_fit(ds, bf, behavior_rng, &st.norm);
  }

  const std::int64_t n = ds.size();
  const int bsz = cfg.batch_size;
  Batch b;
  b.s.resize(bsz, st.state_dim);
  b.a.resize(bsz, st.action_dim);
  b.r.resize(bsz);
  b.s_next.resize(bsz, st.state_dim);
  b.done.resize(bsz);

  const LipschitzSpec lips{st.action_dim, env_spec(ds.meta.env).reward_lipschitz,
                           cfg.gamma, cfg.lipschitz_lpt};
  const bool has_both_classes = [&] {
    bool e = false, ne = false;
    for (const auto& p : view.provenance) {
      (p == PolicyLevel::expert ? e : ne) = true;
    }
    return e && ne;
  }();

  double best_score = -std::numeric_limits<double>::infinity();
  for (std::int64_t step = 0; step < cfg.total_steps; ++step) {
    st.step = step;
    for (int i = 0; i < bsz; ++i) {
      const std::int64_t idx = batch_rng.uniform_int(n);
      b.s.row(i) = sn_all.row(idx);
      b.a.row(i) = view.actions.row(idx);
      b.r[i] = view.rewards[idx];
      b.s_next.row(i) = s2n_all.row(idx);
      b.done[i] = view.done[idx];
    }

    StepMetrics m;
    m.step = step;
    try {
      switch (cfg.algorithm) {
        case Algorithm::bc:
          m = bc_update(st, b.s, b.a);
          break;
        case Algorithm::td3bc:
          m = critic_update_impl<kPlugins>(st, cfg, b, noise_rng, gp_rng);
          if (step % cfg.policy_delay == 0) {
            merge_metrics(m, actor_update_td3bc_impl<kPlugins>(st, cfg, b.s, b.a));
          }
          break;
        case Algorithm::bear:
          m = critic_update_impl<kPlugins>(st, cfg, b, noise_rng, gp_rng);
          merge_metrics(m, actor_update_bear_impl<kPlugins>(st, cfg, b.s, b.a,
                                                            bear_rng));
          break;
      }
    } catch (const NumericError& e) {
      res.failed = true;
      res.abort_step = step;
      res.abort_reason = e.what();
      break;
    }
    res.step_log.push_back(m);
    if (hooks && hooks->on_step) hooks->on_step(m);

    if ((step + 1) % cfg.eval_interval == 0) {
      const std::int64_t label = step + 1;
      Rng ev = eval_base.child(static_cast<std::uint64_t>(label / cfg.eval_interval));
      EvalReport rep;
      rep.step = label;
      const PolicyFn pol = make_policy(st);
      const ScoreResult score = rollout_score(pol, ds.meta.env, cfg.eval_episodes,
                                              ev.split().base_seed(),
                                              *ds.meta.ref_returns);
      rep.mean_return = score.mean_return;
      rep.normalized_score = score.normalized;
      const DivergenceDiag div = divergence_diagnostic(pol, ds);
      rep.divergence_expert_p75 = div.expert_p75;
      rep.divergence_nonexpert_p75 = div.nonexpert_p75;

      CheckpointHistogram hist{label, {}};
      if (has_both_classes) {
        const QFn qfn = [&st](const Matrix& s_raw, const Matrix& a) -> Vector {
          const Matrix x = concat_sa(st.norm.apply_rows(s_raw), a);
          return 0.5 * (forward(st.q1, x).col(0) + forward(st.q2, x).col(0));
        };
        Rng sep_rng = ev.split();
        const SeparabilityResult sep =
            q_separability(qfn, ds, cfg.sep_samples, sep_rng);
        rep.q_separability_auc = sep.auc;
        hist.bins = sep.bins;
      }
      Rng gn_rng = ev.split();
      const BatchPolicyFn bp = [&st](const Matrix& s) {
        return deterministic_actions(st, s);
      };
      rep.grad_norms =
          grad_norm_profile(st.q1, st.q2, sn_all, view.actions, cfg.gp_sampling,
                            cfg.gradnorm_samples, gn_rng, &bp);
      rep.theorem2 = theorem2_bound(lips);

      res.eval_log.push_back(rep);
      res.histograms.push_back(hist);
      if (rep.normalized_score > best_score) {
        best_score = rep.normalized_score;
        res.best_eval_index = static_cast<int>(res.eval_log.size()) - 1;
        res.best_state = st;
      }
      if (hooks && hooks->on_eval) hooks->on_eval(rep, hist);
    }
  }

  if (res.best_eval_index < 0) res.best_state = st;
  return res;
}

}  // namespace

TrainResult train(const AgentConfig& cfg, const Dataset& ds,
                  const TrainHooks* hooks) {
  return train_impl<true>(cfg, ds, hooks);
}

TrainResult train_backbone_only(const AgentConfig& cfg, const Dataset& ds,
                                const TrainHooks* hooks) {
  return train_impl<false>(cfg, ds, hooks);
}

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  return m;
}

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

std::string act_name(Act a) {
  switch (a) {
    case Act::relu: return "relu";
    case Act::tanh: return "tanh";
    case Act::identity: return "identity";
  }
  return "?";
}

Act act_from_name(const std::string& s) {
  if (s == "relu") return Act::relu;
  if (s == "tanh") return Act::tanh;
  if (s == "identity") return Act::identity;
  throw std::runtime_error("checkpoint: unknown activation " + s);
}

json mlp_to_json(const MlpParams& p) {
  json j;
  j["input_dim"] = p.spec.input_dim;
  j["hidden_dims"] = p.spec.hidden_dims;
  j["output_dim"] = p.spec.output_dim;
  j["hidden_activation"] = act_name(p.spec.hidden_activation);
  j["output_activation"] = act_name(p.spec.output_activation);
  json ws = json::array(), bs = json::array();
  for (const auto& w : p.weights) ws.push_back(matrix_to_json(w));
  for (const auto& b : p.biases) bs.push_back(vector_to_json(b));
  j["weights"] = std::move(ws);
  j["biases"] = std::move(bs);
  return j;
}

MlpParams mlp_from_json(const json& j) {
  MlpParams p;
  p.spec.input_dim = j.at("input_dim").get<int>();
  p.spec.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  p.spec.output_dim = j.at("output_dim").get<int>();
  p.spec.hidden_activation = act_from_name(j.at("hidden_activation"));
  p.spec.output_activation = act_from_name(j.at("output_activation"));
  for (const auto& w : j.at("weights")) p.weights.push_back(matrix_from_json(w));
  for (const auto& b : j.at("biases")) p.biases.push_back(vector_from_json(b));
  return p;
}

json optim_to_json(const OptimState& o) {
  json j;
  j["step"] = o.step;
  j["lr"] = o.lr;
  j["beta1"] = o.beta1;
  j["beta2"] = o.beta2;
  j["eps"] = o.eps;
  json mw = json::array(), vw = json::array(), mb = json::array(), vb = json::array();
  for (const auto& m : o.m_w) mw.push_back(matrix_to_json(m));
  for (const auto& m : o.v_w) vw.push_back(matrix_to_json(m));
  for (const auto& m : o.m_b) mb.push_back(vector_to_json(m));
  for (const auto& m : o.v_b) vb.push_back(vector_to_json(m));
  j["m_w"] = std::move(mw);
  j["v_w"] = std::move(vw);
  j["m_b"] = std::move(mb);
  j["v_b"] = std::move(vb);
  return j;
}

OptimState optim_from_json(const json& j) {
  OptimState o;
  o.step = j.at("step").get<std::int64_t>();
  o.lr = j.at("lr").get<double>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.eps = j.at("eps").get<double>();
  for (const auto& m : j.at("m_w")) o.m_w.push_back(matrix_from_json(m));
  for (const auto& m : j.at("v_w")) o.v_w.push_back(matrix_from_json(m));
  for (const auto& m : j.at("m_b")) o.m_b.push_back(vector_from_json(m));
  for (const auto& m : j.at("v_b")) o.v_b.push_back(vector_from_json(m));
  return o;
}

}  // namespace

void save_checkpoint(const AgentState& st, const std::string& path) {
  json j;
  j["format"] = "orlab-checkpoint-v1";
  j["algorithm"] = to_string(st.algorithm);
  j["state_dim"] = st.state_dim;
  j["action_dim"] = st.action_dim;
  j["step"] = st.step;
  j["log_eta"] = st.log_eta;
  j["normalizer"] = {{"mean", vector_to_json(st.norm.mean)},
                     {"std", vector_to_json(st.norm.stddev)}};
  j["actor"] = mlp_to_json(st.actor);
  j["actor_target"] = mlp_to_json(st.actor_target);
  j["q1"] = mlp_to_json(st.q1);
  j["q2"] = mlp_to_json(st.q2);
  j["q1_target"] = mlp_to_json(st.q1_target);
  j["q2_target"] = mlp_to_json(st.q2_target);
  j["opt_actor"] = optim_to_json(st.opt_actor);
  j["opt_q1"] = optim_to_json(st.opt_q1);
  j["opt_q2"] = optim_to_json(st.opt_q2);
  if (st.behavior) {
    j["behavior"] = {{"net", mlp_to_json(st.behavior->net)},
                     {"action_dim", st.behavior->action_dim},
                     {"log_std_min", st.behavior->log_std_min},
                     {"log_std_max", st.behavior->log_std_max}};
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump(1) << "\n";
  out.close();
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

AgentState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("load_checkpoint: parse error: ") + e.what());
  }
  if (j.value("format", std::string()) != "orlab-checkpoint-v1") {
    throw std::runtime_error("load_checkpoint: unrecognized format");
  }
  AgentState st;
  st.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  st.state_dim = j.at("state_dim").get<int>();
  st.action_dim = j.at("action_dim").get<int>();
  st.step = j.at("step").get<std::int64_t>();
  st.log_eta = j.at("log_eta").get<double>();
  st.norm.mean = vector_from_json(j.at("normalizer").at("mean"));
  st.norm.stddev = vector_from_json(j.at("normalizer").at("std"));
  st.actor = mlp_from_json(j.at("actor"));
  st.actor_target = mlp_from_json(j.at("actor_target"));
  st.q1 = mlp_from_json(j.at("q1"));
  st.q2 = mlp_from_json(j.at("q2"));
  st.q1_target = mlp_from_json(j.at("q1_target"));
  st.q2_target = mlp_from_json(j.at("q2_target"));
  st.opt_actor = optim_from_json(j.at("opt_actor"));
  st.opt_q1 = optim_from_json(j.at("opt_q1"));
  st.opt_q2 = optim_from_json(j.at("opt_q2"));
  if (j.contains("behavior")) {
    GaussianPolicy b;
    b.net = mlp_from_json(j["behavior"].at("net"));
    b.action_dim = j["behavior"].at("action_dim").get<int>();
    b.log_std_min = j["behavior"].at("log_std_min").get<double>();
    b.log_std_max = j["behavior"].at("log_std_max").get<double>();
    st.behavior = std::move(b);
  }
  return st;
}

}  // namespace orlab
