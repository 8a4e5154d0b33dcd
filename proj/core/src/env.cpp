#include "orlab/env.hpp"

#include <cmath>

namespace orlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr double kPosBound = 3.0;
constexpr double kVelBound = 2.0;
constexpr double kOmegaBound = 8.0;
constexpr double kPendulumGravity = 1.0;  // m = l = 1

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double normalize_angle(double th) {
  th = std::fmod(th + kPi, 2.0 * kPi);
  if (th < 0.0) th += 2.0 * kPi;
  return th - kPi;
}

}  // namespace

std::string to_string(EnvKind kind) {
  return kind == EnvKind::pointmass2d ? "pointmass2d" : "pendulum";
}

std::string to_string(PolicyLevel level) {
  switch (level) {
    case PolicyLevel::expert: return "expert";
    case PolicyLevel::medium: return "medium";
    case PolicyLevel::random: return "random";
  }
  return "?";
}

EnvKind env_kind_from_string(const std::string& s) {
  if (s == "pointmass2d") return EnvKind::pointmass2d;
  if (s == "pendulum") return EnvKind::pendulum;
  throw ContractError("unknown env kind: " + s);
}

PolicyLevel policy_level_from_string(const std::string& s) {
  if (s == "expert") return PolicyLevel::expert;
  if (s == "medium") return PolicyLevel::medium;
  if (s == "random") return PolicyLevel::random;
  throw ContractError("unknown policy level: " + s);
}

EnvSpec env_spec(EnvKind kind) {
  switch (kind) {
    case EnvKind::pointmass2d:
      // dr/da = -0.02*a, so ||dr/da|| <= 0.02*sqrt(2) over the box.
      return {kind, 4, 2, 100, 0.05, 0.02 * std::sqrt(2.0)};
    case EnvKind::pendulum:
      return {kind, 3, 1, 200, 0.05, 0.002};
  }
  throw ContractError("unknown env kind");
}

Env::Env(EnvKind kind, std::uint64_t seed) : spec_(env_spec(kind)), rng_(seed) {
  state_ = Vector::Zero(spec_.state_dim);
}

Vector Env::reset() {
  t_ = 0;
  needs_reset_ = false;
  if (spec_.kind == EnvKind::pointmass2d) {
    state_ = Vector::Zero(4);
    state_[0] = rng_.uniform(-1.0, 1.0);
    state_[1] = rng_.uniform(-1.0, 1.0);
  } else {
    const double th = rng_.uniform(-kPi, kPi);
    const double omega = rng_.uniform(-1.0, 1.0);
    state_ = Vector::Zero(3);
    state_[0] = std::cos(th);
    state_[1] = std::sin(th);
    state_[2] = omega;
  }
  return state_;
}

StepResult Env::step(const Vector& action) {
  if (needs_reset_) {
    throw ContractError("step called on a finished or unreset environment");
  }
  if (action.size() != spec_.action_dim) {
    throw ContractError("step: action dim mismatch");
  }
  Vector a = action;
  for (int i = 0; i < a.size(); ++i) a[i] = clip(a[i], -1.0, 1.0);

  StepResult out;
  if (spec_.kind == EnvKind::pointmass2d) {
    const double px = state_[0], py = state_[1];
    out.reward = -(px * px + py * py) - 0.01 * a.squaredNorm();
    Vector next(4);
    next[2] = clip(state_[2] + spec_.dt * a[0], -kVelBound, kVelBound);
    next[3] = clip(state_[3] + spec_.dt * a[1], -kVelBound, kVelBound);
    next[0] = clip(px + spec_.dt * next[2], -kPosBound, kPosBound);
    next[1] = clip(py + spec_.dt * next[3], -kPosBound, kPosBound);
    out.next_state = next;
  } else {
    const double th = std::atan2(state_[1], state_[0]);
    const double omega = state_[2];
    const double u = a[0];
    out.reward = -(th * th + 0.1 * omega * omega + 0.001 * u * u);
    const double omega_next =
        clip(omega + spec_.dt * (1.5 * kPendulumGravity * std::sin(th) + 3.0 * u),
             -kOmegaBound, kOmegaBound);
    const double th_next = normalize_angle(th + spec_.dt * omega_next);
    Vector next(3);
    next[0] = std::cos(th_next);
    next[1] = std::sin(th_next);
    next[2] = omega_next;
    out.next_state = next;
  }

  state_ = out.next_state;
  t_ += 1;
  out.done = (t_ >= spec_.horizon);
  if (out.done) needs_reset_ = true;
  return out;
}

Env make_env(EnvKind kind, std::uint64_t seed) { return Env(kind, seed); }

Vector ScriptedPolicy::act(const Vector& state, Rng& rng) const {
  const EnvSpec spec = env_spec(kind);
  if (level == PolicyLevel::random) {
    Vector a(spec.action_dim);
    for (int i = 0; i < a.size(); ++i) a[i] = rng.uniform(-1.0, 1.0);
    return a;
  }

  const double gain_scale = (level == PolicyLevel::expert) ? 1.0 : 0.5;
  Vector a(spec.action_dim);
  if (kind == EnvKind::pointmass2d) {
    const double kp = 5.0 * gain_scale;
    const double kd = 4.0 * gain_scale;
    a[0] = -kp * state[0] - kd * state[2];
    a[1] = -kp * state[1] - kd * state[3];
  } else {
    const double kp = 2.0 * gain_scale;
    const double kd = 1.0 * gain_scale;
    const double th = std::atan2(state[1], state[0]);
    a[0] = -kp * th - kd * state[2];
  }
  if (level == PolicyLevel::medium) {
    for (int i = 0; i < a.size(); ++i) a[i] += 0.3 * rng.gauss();
  }
  for (int i = 0; i < a.size(); ++i) a[i] = clip(a[i], -1.0, 1.0);
  return a;
}

ScriptedPolicy scripted_policy(PolicyLevel level, EnvKind kind) {
  return ScriptedPolicy{level, kind};
}

namespace {

double mc_average_return(EnvKind kind, PolicyLevel level, std::uint64_t seed,
                         int episodes) {
  Env env(kind, seed);
  Rng policy_rng(Rng(seed).split().base_seed());
  const ScriptedPolicy pol = scripted_policy(level, kind);
  double total = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    Vector s = env.reset();
    bool done = false;
    while (!done) {
      const StepResult r = env.step(pol.act(s, policy_rng));
      total += r.reward;
      s = r.next_state;
      done = r.done;
    }
  }
  return total / static_cast<double>(episodes);
}

}  // namespace

RefReturns reference_returns(EnvKind kind, std::uint64_t seed, int episodes) {
  RefReturns refs;
  refs.random_avg = mc_average_return(kind, PolicyLevel::random, seed, episodes);
  refs.expert_avg = mc_average_return(kind, PolicyLevel::expert, seed + 1, episodes);
  return refs;
}

}  // namespace orlab
