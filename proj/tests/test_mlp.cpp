#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "orlab/mlp.hpp"
#include "orlab/optim.hpp"
#include "support/oracles.hpp"

using namespace orlab;
using orlab_test::fd_input_gradient;
using orlab_test::fd_param_gradient;
using orlab_test::max_rel_error;

namespace {

MlpParams random_net(const MlpSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return mlp_init(spec, rng);
}

Matrix random_batch(int rows, int cols, std::uint64_t seed, double lo = -1.0,
                    double hi = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

// Exactly linear scalar net y = c.x built from a paired-relu hidden layer:
// relu(c.x) - relu(-c.x) == c.x for every x.
MlpParams linear_net(const Vector& c) {
  MlpSpec spec{static_cast<int>(c.size()), {2}, 1, Act::relu, Act::identity};
  MlpParams p;
  p.spec = spec;
  Matrix w1(2, c.size());
  w1.row(0) = c.transpose();
  w1.row(1) = -c.transpose();
  Matrix w2(1, 2);
  w2 << 1.0, -1.0;
  p.weights = {w1, w2};
  p.biases = {Vector::Zero(2), Vector::Zero(1)};
  return p;
}

}  // namespace

TEST_CASE("mlp_init draws uniform weights within the fan-in bound, zero biases") {
  Rng rng(7);
  const MlpSpec spec{2, {4}, 1, Act::relu, Act::identity};
  const MlpParams p = mlp_init(spec, rng);
  REQUIRE(p.weights.size() == 2);
  CHECK(p.weights[0].rows() == 4);
  CHECK(p.weights[0].cols() == 2);
  const double bound = 1.0 / std::sqrt(2.0);
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 2; ++c) {
      CHECK(p.weights[0](r, c) >= -bound);
      CHECK(p.weights[0](r, c) <= bound);
    }
  CHECK(p.biases[0].isZero(0.0));
  CHECK(p.biases[1].isZero(0.0));
}

TEST_CASE("mlp_init is deterministic for identical spec and seed") {
  const MlpSpec spec{2, {4}, 1, Act::relu, Act::identity};
  const MlpParams a = random_net(spec, 7);
  const MlpParams b = random_net(spec, 7);
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    CHECK(a.weights[l] == b.weights[l]);
    CHECK(a.biases[l] == b.biases[l]);
  }
}

TEST_CASE("mlp_init layer shapes follow the spec") {
  const MlpSpec spec{3, {8, 8}, 1, Act::relu, Act::identity};
  const MlpParams p = random_net(spec, 1);
  REQUIRE(p.weights.size() == 3);
  CHECK(p.weights[0].rows() == 8);
  CHECK(p.weights[0].cols() == 3);
  CHECK(p.weights[1].rows() == 8);
  CHECK(p.weights[1].cols() == 8);
  CHECK(p.weights[2].rows() == 1);
  CHECK(p.weights[2].cols() == 8);
}

TEST_CASE("spec validation rejects bad configurations") {
  Rng rng(0);
  CHECK_THROWS_AS(mlp_init(MlpSpec{0, {4}, 1}, rng), ContractError);
  CHECK_THROWS_AS(mlp_init(MlpSpec{2, {}, 1}, rng), ContractError);
  CHECK_THROWS_AS(mlp_init(MlpSpec{2, {0}, 1}, rng), ContractError);
  CHECK_THROWS_AS(mlp_init(MlpSpec{2, {4}, 1, Act::identity, Act::identity}, rng),
                  ContractError);
}

TEST_CASE("forward of an all-zero net is zero") {
  MlpParams p = random_net({3, {5}, 2, Act::relu, Act::identity}, 3);
  for (auto& w : p.weights) w.setZero();
  const Matrix y = forward(p, random_batch(4, 3, 11));
  CHECK(y.isZero(0.0));
}

TEST_CASE("identity-weight single hidden layer applies the activation") {
  MlpParams p;
  p.spec = MlpSpec{2, {2}, 2, Act::tanh, Act::identity};
  p.weights = {Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  p.biases = {Vector::Zero(2), Vector::Zero(2)};
  const Matrix x = random_batch(6, 2, 5);
  const Matrix y = forward(p, x);
  CHECK((y - x.array().tanh().matrix()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches a per-row scalar evaluation oracle") {
  for (std::uint64_t seed : {10u, 11u, 12u}) {
    const MlpSpec spec{4, {6, 5}, 3, seed % 2 ? Act::relu : Act::tanh, Act::tanh};
    const MlpParams p = random_net(spec, seed);
    const Matrix x = random_batch(32, 4, seed + 100);
    const Matrix y = forward(p, x);
    for (int r = 0; r < 32; ++r) {
      const Vector expect = orlab_test::naive_row_eval(p, x.row(r).transpose());
      CHECK((y.row(r).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("forward rejects width mismatches") {
  const MlpParams p = random_net({3, {4}, 1, Act::relu, Act::identity}, 2);
  CHECK_THROWS_AS(forward(p, random_batch(4, 2, 1)), ContractError);
}

TEST_CASE("backward_params with zero output grads is zero") {
  const MlpParams p = random_net({3, {4}, 2, Act::tanh, Act::tanh}, 9);
  Tape tape;
  forward(p, random_batch(5, 3, 14), &tape);
  const ParamGrads g = backward_params(p, tape, Matrix::Zero(5, 2));
  CHECK(g.max_abs() == 0.0);
}

TEST_CASE("single linear neuron gradient is input times output grad") {
  // relu with positive pre-activation behaves linearly at the sample
  MlpParams p;
  p.spec = MlpSpec{3, {1}, 1, Act::relu, Act::identity};
  Matrix w1(1, 3);
  w1 << 0.5, -0.25, 0.125;
  Matrix w2(1, 1);
  w2 << 1.0;
  p.weights = {w1, w2};
  p.biases = {Vector::Zero(1), Vector::Zero(1)};
  Matrix x(1, 3);
  x << 1.0, -1.0, 1.0;  // w.x = 0.875 > 0
  Tape tape;
  forward(p, x, &tape);
  Matrix og(1, 1);
  og << 2.0;
  const ParamGrads g = backward_params(p, tape, og);
  CHECK((g.weights[0] - 2.0 * x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward_params matches central finite differences on tanh nets") {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const MlpSpec spec{3, {5, 4}, 2, Act::tanh, Act::tanh};
    const MlpParams p = random_net(spec, 1000 + trial);
    const Matrix x = random_batch(3, 3, 2000 + trial);
    const Matrix og = random_batch(3, 2, 3000 + trial);
    Tape tape;
    forward(p, x, &tape);
    const ParamGrads g = backward_params(p, tape, og);
    const ParamGrads fd = fd_param_gradient(p, [&](const MlpParams& q) {
      return (forward(q, x).array() * og.array()).sum();
    }, 1e-5);
    worst = std::max(worst, max_rel_error(g, fd));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backward_params rejects stale or foreign tapes") {
  const MlpSpec spec{3, {4}, 1, Act::tanh, Act::identity};
  MlpParams p = random_net(spec, 21);
  const MlpParams other = random_net(spec, 22);
  const Matrix x = random_batch(2, 3, 23);
  Tape tape;
  forward(p, x, &tape);
  CHECK_THROWS_AS(backward_params(other, tape, Matrix::Ones(2, 1)), ContractError);

  OptimState opt = make_optim(p);
  ParamGrads g = zero_grads(p);
  g.weights[0](0, 0) = 1.0;
  REQUIRE(adam_step(opt, p, g));
  CHECK_THROWS_AS(backward_params(p, tape, Matrix::Ones(2, 1)), ContractError);
}

TEST_CASE("input_gradient of an exactly linear net returns the slope") {
  Vector c(3);
  c << 1.0, -2.0, 0.5;
  const MlpParams p = linear_net(c);
  const Matrix x = random_batch(8, 3, 31);
  const Matrix g = input_gradient(p, x);
  for (int r = 0; r < 8; ++r) {
    CHECK((g.row(r).transpose() - c).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("input_gradient of a constant net is zero") {
  MlpParams p = random_net({3, {4}, 1, Act::tanh, Act::identity}, 33);
  for (auto& w : p.weights) w.setZero();
  p.biases[1][0] = 3.5;
  CHECK(input_gradient(p, random_batch(4, 3, 34)).isZero(0.0));
}

TEST_CASE("input_gradient matches finite differences on tanh nets") {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const MlpSpec spec{4, {6, 5}, 1, Act::tanh, Act::identity};
    const MlpParams p = random_net(spec, 4000 + trial);
    const Matrix x = random_batch(2, 4, 5000 + trial);
    const Matrix g = input_gradient(p, x);
    for (int r = 0; r < 2; ++r) {
      const Vector fd = fd_input_gradient(p, x.row(r).transpose(), 1e-5);
      worst = std::max(worst, max_rel_error(g.row(r).transpose(), fd));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("input_gradient requires a scalar output") {
  const MlpParams p = random_net({3, {4}, 2, Act::tanh, Act::identity}, 41);
  CHECK_THROWS_AS(input_gradient(p, random_batch(2, 3, 42)), ContractError);
}

TEST_CASE("gp penalty is zero with zero grads when all norms are below k") {
  MlpParams p = random_net({4, {8}, 1, Act::tanh, Act::identity}, 50);
  for (auto& w : p.weights) w *= 0.01;  // tiny gradients everywhere
  const Matrix s = random_batch(16, 2, 51);
  const Matrix a = random_batch(16, 2, 52);
  Vector norms;
  const GpResult r = gp_value_and_param_grad(p, s, a, 1.0, &norms);
  CHECK(norms.maxCoeff() < 1.0);
  CHECK(r.penalty == 0.0);
  CHECK(r.grads.max_abs() == 0.0);
}

TEST_CASE("gp closed form on an exactly linear critic") {
  // Q(s, a) = c.a with |c| = 3, threshold 1: penalty (3-1)^2 = 4 and the
  // parameter row carrying c gets 2*(3-1)*c/|c|.
  Vector c(2);
  c << 3.0 * std::sqrt(0.5), 3.0 * std::sqrt(0.5);
  MlpParams p;
  p.spec = MlpSpec{3, {2}, 1, Act::relu, Act::identity};
  Matrix w1 = Matrix::Zero(2, 3);
  w1.row(0).tail(2) = c.transpose();
  w1.row(1).tail(2) = -c.transpose();
  Matrix w2(1, 2);
  w2 << 1.0, -1.0;
  p.weights = {w1, w2};
  p.biases = {Vector::Zero(2), Vector::Zero(1)};

  const int n = 6;
  const Matrix s = random_batch(n, 1, 60);
  Matrix a = random_batch(n, 2, 61, 0.1, 1.0);  // c.a > 0 for every row

  Vector norms;
  const GpResult r = gp_value_and_param_grad(p, s, a, 1.0, &norms);
  CHECK(std::abs(r.penalty - 4.0) < 1e-10);
  for (int i = 0; i < n; ++i) CHECK(std::abs(norms[i] - 3.0) < 1e-12);

  const Vector expected_row = (2.0 * (3.0 - 1.0) / 3.0) * c;  // (4/3) c
  CHECK((r.grads.weights[0].row(0).tail(2).transpose() - expected_row)
            .cwiseAbs()
            .maxCoeff() < 1e-10);
  // inactive paired unit and state columns carry nothing
  CHECK(r.grads.weights[0].row(1).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(r.grads.weights[0].col(0).cwiseAbs().maxCoeff() < 1e-10);
  // output layer: d penalty / d V = 2*(|c|-k)*|c| on the active unit
  CHECK(std::abs(r.grads.weights[1](0, 0) - 12.0) < 1e-10);
  CHECK(std::abs(r.grads.weights[1](0, 1)) < 1e-10);
  CHECK(r.grads.biases[0].cwiseAbs().maxCoeff() < 1e-10);
  CHECK(r.grads.biases[1].cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("gp parameter gradient matches finite differences away from the hinge") {
  double worst = 0.0;
  int tested = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const MlpSpec spec{3, {6, 5}, 1, Act::tanh, Act::identity};
    MlpParams p = random_net(spec, 7000 + trial);
    for (auto& w : p.weights) w *= 2.0;  // push some norms above the hinge
    const Matrix s = random_batch(8, 1, 7100 + trial);
    const Matrix a = random_batch(8, 2, 7200 + trial);

    Vector norms;
    gp_value_and_param_grad(p, s, a, 0.5, &norms);
    // pick a threshold with a clear margin on both sides
    const double k = 0.5 * (norms.minCoeff() + norms.maxCoeff());
    double margin = 1e9;
    for (int i = 0; i < norms.size(); ++i) {
      margin = std::min(margin, std::abs(norms[i] - k));
    }
    if (k <= 0.0 || margin < 1e-3) continue;

    const GpResult r = gp_value_and_param_grad(p, s, a, k);
    const ParamGrads fd = fd_param_gradient(p, [&](const MlpParams& q) {
      return gp_value_and_param_grad(q, s, a, k).penalty;
    }, 1e-5);
    worst = std::max(worst, max_rel_error(r.grads, fd));
    tested += 1;
  }
  REQUIRE(tested >= 10);
  CHECK(worst < 1e-3);
}

TEST_CASE("gp penalty value agrees with a manual hinge over input gradients") {
  const MlpSpec spec{4, {6}, 1, Act::tanh, Act::identity};
  MlpParams p = random_net(spec, 77);
  for (auto& w : p.weights) w *= 3.0;
  const Matrix s = random_batch(10, 2, 78);
  const Matrix a = random_batch(10, 2, 79);
  const double k = 0.4;
  const GpResult r = gp_value_and_param_grad(p, s, a, k);

  Matrix x(10, 4);
  x << s, a;
  const Matrix g = input_gradient(p, x).rightCols(2);
  double manual = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double excess = std::max(0.0, g.row(i).norm() - k);
    manual += excess * excess;
  }
  manual /= 10.0;
  CHECK(std::abs(r.penalty - manual) < 1e-12);
}

TEST_CASE("gp hinge boundary: penalty positive iff a norm exceeds k") {
  const MlpSpec spec{3, {5}, 1, Act::tanh, Act::identity};
  const MlpParams p = random_net(spec, 90);
  const Matrix s = random_batch(12, 1, 91);
  const Matrix a = random_batch(12, 2, 92);
  Vector norms;
  gp_value_and_param_grad(p, s, a, 1.0, &norms);
  const double top = norms.maxCoeff();

  const GpResult above = gp_value_and_param_grad(p, s, a, top * 1.01);
  CHECK(above.penalty == 0.0);
  CHECK(above.grads.max_abs() == 0.0);

  const GpResult below = gp_value_and_param_grad(p, s, a, top * 0.99);
  CHECK(below.penalty > 0.0);
  CHECK(below.grads.max_abs() > 0.0);
}

TEST_CASE("gp rejects non-finite inputs with the offending row") {
  const MlpParams p = random_net({3, {4}, 1, Act::tanh, Act::identity}, 95);
  Matrix s = random_batch(3, 1, 96);
  Matrix a = random_batch(3, 2, 97);
  a(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(gp_value_and_param_grad(p, s, a, 1.0), NumericError);
}

TEST_CASE("gp validates shapes and threshold") {
  const MlpParams p = random_net({3, {4}, 1, Act::tanh, Act::identity}, 98);
  const Matrix s = random_batch(3, 1, 99);
  const Matrix a = random_batch(3, 2, 100);
  CHECK_THROWS_AS(gp_value_and_param_grad(p, s, a, 0.0), ContractError);
  CHECK_THROWS_AS(gp_value_and_param_grad(p, s, random_batch(3, 3, 101), 1.0),
                  ContractError);
  const MlpParams vec = random_net({3, {4}, 2, Act::tanh, Act::identity}, 102);
  CHECK_THROWS_AS(gp_value_and_param_grad(vec, s, a, 1.0), ContractError);
}
