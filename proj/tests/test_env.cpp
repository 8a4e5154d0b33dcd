#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "orlab/env.hpp"

using namespace orlab;

namespace {

double episode_return(Env& env, const ScriptedPolicy& pol, Rng& rng) {
  Vector s = env.reset();
  double total = 0.0;
  bool done = false;
  while (!done) {
    const StepResult r = env.step(pol.act(s, rng));
    total += r.reward;
    s = r.next_state;
    done = r.done;
  }
  return total;
}

double avg_return(EnvKind kind, PolicyLevel level, std::uint64_t seed, int episodes) {
  Env env(kind, seed);
  Rng rng(seed + 1);
  const ScriptedPolicy pol = scripted_policy(level, kind);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) total += episode_return(env, pol, rng);
  return total / episodes;
}

}  // namespace

TEST_CASE("environment specs expose the documented dimensions") {
  const EnvSpec pm = env_spec(EnvKind::pointmass2d);
  CHECK(pm.state_dim == 4);
  CHECK(pm.action_dim == 2);
  CHECK(pm.horizon == 100);
  CHECK(pm.dt == 0.05);
  CHECK(pm.reward_lipschitz == doctest::Approx(0.02 * std::sqrt(2.0)).epsilon(1e-15));

  const EnvSpec pd = env_spec(EnvKind::pendulum);
  CHECK(pd.state_dim == 3);
  CHECK(pd.action_dim == 1);
  CHECK(pd.horizon == 200);
  CHECK(pd.reward_lipschitz == doctest::Approx(0.002).epsilon(1e-15));
}

TEST_CASE("env kind parsing") {
  CHECK(env_kind_from_string("pointmass2d") == EnvKind::pointmass2d);
  CHECK(env_kind_from_string("pendulum") == EnvKind::pendulum);
  CHECK_THROWS_AS(env_kind_from_string("cartpole"), ContractError);
}

TEST_CASE("same seed gives the same reset sequence") {
  for (EnvKind kind : {EnvKind::pointmass2d, EnvKind::pendulum}) {
    Env a(kind, 99), b(kind, 99);
    for (int i = 0; i < 5; ++i) {
      const Vector sa = a.reset();
      const Vector sb = b.reset();
      CHECK(sa == sb);
      // run one step so reset is exercised from a mid-episode state too
      a.step(Vector::Zero(a.spec().action_dim));
      b.step(Vector::Zero(b.spec().action_dim));
      a.reset();
      b.reset();
    }
  }
}

TEST_CASE("pointmass reward at the goal with zero action is zero") {
  Env env(EnvKind::pointmass2d, 1);
  env.reset();
  // force the goal state by stepping a fresh env copy: instead evaluate the
  // reward formula through a crafted rollout from the origin
  // (resets are random, so drive the state by hand through the dynamics).
  // A zero state is reachable only by construction, so check algebra instead:
  // r(s, a) = -|p|^2 - 0.01|a|^2 with p read before integration.
  Vector zero_a = Vector::Zero(2);
  const Vector s0 = env.state();
  const StepResult r = env.step(zero_a);
  CHECK(r.reward == doctest::Approx(-(s0[0] * s0[0] + s0[1] * s0[1])).epsilon(1e-12));
}

TEST_CASE("pointmass zero action from rest leaves the position unchanged") {
  Env env(EnvKind::pointmass2d, 2);
  const Vector s0 = env.reset();  // zero velocity at reset
  const StepResult r = env.step(Vector::Zero(2));
  CHECK(r.next_state[0] == s0[0]);
  CHECK(r.next_state[1] == s0[1]);
  CHECK(r.next_state[2] == 0.0);
  CHECK(r.next_state[3] == 0.0);
}

TEST_CASE("pointmass action penalty is exactly -0.01 a.a at a fixed state") {
  Env a(EnvKind::pointmass2d, 3), b(EnvKind::pointmass2d, 3);
  a.reset();
  b.reset();
  Vector act(2);
  act << 0.8, -0.6;
  const double r_zero = a.step(Vector::Zero(2)).reward;
  const double r_act = b.step(act).reward;
  CHECK(r_act - r_zero == doctest::Approx(-0.01 * act.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("episodes end exactly at the horizon and reject further steps") {
  Env env(EnvKind::pointmass2d, 4);
  env.reset();
  const int horizon = env.spec().horizon;
  for (int t = 0; t < horizon; ++t) {
    const StepResult r = env.step(Vector::Zero(2));
    CHECK(r.done == (t == horizon - 1));
  }
  CHECK_THROWS_AS(env.step(Vector::Zero(2)), ContractError);
}

TEST_CASE("dynamics are deterministic in (state, action)") {
  Env a(EnvKind::pendulum, 5), b(EnvKind::pendulum, 5);
  a.reset();
  b.reset();
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    Vector act(1);
    act << rng.uniform(-1.0, 1.0);
    const StepResult ra = a.step(act);
    const StepResult rb = b.step(act);
    CHECK(ra.next_state == rb.next_state);
    CHECK(ra.reward == rb.reward);
  }
}

TEST_CASE("reward gradients with respect to the action respect the stored bound") {
  // both rewards depend on the action only through the quadratic penalty, so
  // central differences recover the exact derivative
  for (EnvKind kind : {EnvKind::pointmass2d, EnvKind::pendulum}) {
    const EnvSpec spec = env_spec(kind);
    Rng rng(17);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      Env env(kind, 100 + trial);
      env.reset();
      for (int burn = rng.uniform_int(5); burn > 0; --burn) {
        Vector a(spec.action_dim);
        for (int i = 0; i < a.size(); ++i) a[i] = rng.uniform(-1.0, 1.0);
        env.step(a);
      }
      Vector a(spec.action_dim);
      for (int i = 0; i < a.size(); ++i) a[i] = rng.uniform(-0.99, 0.99);
      Vector grad(spec.action_dim);
      const double h = 1e-6;
      for (int i = 0; i < a.size(); ++i) {
        Env ep = env, em = env;
        Vector ap = a, am = a;
        ap[i] += h;
        am[i] -= h;
        grad[i] = (ep.step(ap).reward - em.step(am).reward) / (2.0 * h);
      }
      worst = std::max(worst, grad.norm());
    }
    CHECK(worst <= spec.reward_lipschitz + 1e-6);
  }
}

TEST_CASE("random policy always stays inside the action box") {
  Rng rng(21);
  const ScriptedPolicy pol = scripted_policy(PolicyLevel::random, EnvKind::pointmass2d);
  Env env(EnvKind::pointmass2d, 22);
  Vector s = env.reset();
  for (int t = 0; t < 500; ++t) {
    const Vector a = pol.act(s, rng);
    CHECK(a.minCoeff() >= -1.0);
    CHECK(a.maxCoeff() <= 1.0);
  }
}

TEST_CASE("expert beats medium beats random over 100 episodes") {
  for (EnvKind kind : {EnvKind::pointmass2d, EnvKind::pendulum}) {
    const double expert = avg_return(kind, PolicyLevel::expert, 123, 100);
    const double medium = avg_return(kind, PolicyLevel::medium, 123, 100);
    const double random = avg_return(kind, PolicyLevel::random, 123, 100);
    CHECK(expert > medium);
    CHECK(medium > random);
  }
}

TEST_CASE("expert at the goal with zero velocity emits a near-zero action") {
  // drive the pointmass close to the goal with the expert, then check the law
  Env env(EnvKind::pointmass2d, 31);
  Rng rng(32);
  const ScriptedPolicy expert = scripted_policy(PolicyLevel::expert, EnvKind::pointmass2d);
  Vector s = env.reset();
  for (int t = 0; t < 99; ++t) s = env.step(expert.act(s, rng)).next_state;
  Vector goal_state = Vector::Zero(4);
  const Vector a = expert.act(goal_state, rng);
  CHECK(a.norm() == 0.0);
}

TEST_CASE("reference returns are ordered, deterministic and anchor the score") {
  const RefReturns refs = reference_returns(EnvKind::pointmass2d, 7);
  CHECK(refs.expert_avg > refs.random_avg);
  const RefReturns again = reference_returns(EnvKind::pointmass2d, 7);
  CHECK(refs.expert_avg == again.expert_avg);
  CHECK(refs.random_avg == again.random_avg);

  // an independent expert run lands near 100 on the normalized scale
  const double expert = avg_return(EnvKind::pointmass2d, PolicyLevel::expert, 555, 100);
  const double normalized =
      100.0 * (expert - refs.random_avg) / (refs.expert_avg - refs.random_avg);
  CHECK(normalized == doctest::Approx(100.0).epsilon(0.05));
}
