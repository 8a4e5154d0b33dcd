#pragma once

#include <string>

#include "orlab/mlp.hpp"
#include "orlab/rng.hpp"

namespace orlab {

enum class EnvKind { pointmass2d, pendulum };
enum class PolicyLevel { expert, medium, random };

std::string to_string(EnvKind kind);
std::string to_string(PolicyLevel level);
EnvKind env_kind_from_string(const std::string& s);
PolicyLevel policy_level_from_string(const std::string& s);

struct EnvSpec {
  EnvKind kind;
  int state_dim;
  int action_dim;
  int horizon;
  double dt;
  // Exact bound on ||dr/da|| over the [-1,1]^action_dim box; both rewards
  // depend on the action only through a quadratic penalty term.
  double reward_lipschitz;
};

EnvSpec env_spec(EnvKind kind);

struct StepResult {
  Vector next_state;
  double reward;
  bool done;
};

// Deterministic continuous-control environments with fixed horizons.
//   pointmass2d: state (px, py, vx, vy), goal at the origin,
//     v += dt*a; p += dt*v; r = -||p||^2 - 0.01*||a||^2 (position before the
//     step), positions clipped to [-3,3], velocities to [-2,2].
//   pendulum: state (cos th, sin th, omega), th measured from upright,
//     omega += dt*(1.5*g*sin th + 3*u); th += dt*omega; |omega| <= 8;
//     r = -(th^2 + 0.1*omega^2 + 0.001*u^2) with th normalized to [-pi,pi],
//     m = l = 1, g = 1.
class Env {
 public:
  Env(EnvKind kind, std::uint64_t seed);

  const EnvSpec& spec() const { return spec_; }
  Vector reset();
  StepResult step(const Vector& action);
  const Vector& state() const { return state_; }

 private:
  EnvSpec spec_;
  Vector state_;
  Rng rng_;
  int t_ = 0;
  bool needs_reset_ = true;
};

Env make_env(EnvKind kind, std::uint64_t seed);

// Scripted behavior policies. Expert is a clipped PD controller toward the
// goal; medium runs the expert gains halved plus N(0, 0.3^2) noise; random is
// uniform over the action box.
struct ScriptedPolicy {
  PolicyLevel level;
  EnvKind kind;

  Vector act(const Vector& state, Rng& rng) const;
};

ScriptedPolicy scripted_policy(PolicyLevel level, EnvKind kind);

struct RefReturns {
  double random_avg = 0.0;
  double expert_avg = 0.0;
};

// Monte-Carlo normalization anchors for the normalized score.
RefReturns reference_returns(EnvKind kind, std::uint64_t seed, int episodes = 100);

}  // namespace orlab
