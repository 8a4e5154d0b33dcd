#include "orlab/mlp.hpp"

#include <cmath>

namespace orlab {

namespace {

Matrix activate(const Matrix& z, Act act) {
  switch (act) {
    case Act::relu:
      return z.cwiseMax(0.0);
    case Act::tanh:
      return z.array().tanh().matrix();
    case Act::identity:
      return z;
  }
  throw ContractError("unknown activation");
}

// First derivative recovered from the post-activation value h.
Matrix act_prime(const Matrix& h, Act act) {
  switch (act) {
    case Act::relu:
      return (h.array() > 0.0).cast<double>().matrix();
    case Act::tanh:
      return (1.0 - h.array().square()).matrix();
    case Act::identity:
      return Matrix::Ones(h.rows(), h.cols());
  }
  throw ContractError("unknown activation");
}

// Second derivative from the post-activation value h.
Matrix act_second(const Matrix& h, Act act) {
  switch (act) {
    case Act::relu:
    case Act::identity:
      return Matrix::Zero(h.rows(), h.cols());
    case Act::tanh:
      return (-2.0 * h.array() * (1.0 - h.array().square())).matrix();
  }
  throw ContractError("unknown activation");
}

void check_tape(const MlpParams& params, const Tape& tape) {
  if (tape.params != &params || tape.params_version != params.version) {
    throw ContractError("tape does not match these parameters (stale or foreign tape)");
  }
}

}  // namespace

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) {
    throw ContractError("MlpSpec: dims must be >= 1");
  }
  if (hidden_dims.empty()) {
    throw ContractError("MlpSpec: at least one hidden layer required");
  }
  for (int h : hidden_dims) {
    if (h < 1) throw ContractError("MlpSpec: hidden dims must be >= 1");
  }
  if (hidden_activation == Act::identity) {
    throw ContractError("MlpSpec: hidden activation must be relu or tanh");
  }
  if (output_activation == Act::relu) {
    throw ContractError("MlpSpec: output activation must be identity or tanh");
  }
}

bool MlpParams::all_finite() const {
  for (const auto& w : weights) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : biases) {
    if (!b.allFinite()) return false;
  }
  return true;
}

void ParamGrads::add_scaled(const ParamGrads& other, double scale) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += scale * other.weights[l];
    biases[l] += scale * other.biases[l];
  }
}

bool ParamGrads::all_finite() const {
  for (const auto& w : weights) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : biases) {
    if (!b.allFinite()) return false;
  }
  return true;
}

double ParamGrads::max_abs() const {
  double m = 0.0;
  for (const auto& w : weights) m = std::max(m, w.cwiseAbs().maxCoeff());
  for (const auto& b : biases) {
    if (b.size() > 0) m = std::max(m, b.cwiseAbs().maxCoeff());
  }
  return m;
}

ParamGrads zero_grads(const MlpParams& params) {
  ParamGrads g;
  g.weights.reserve(params.weights.size());
  g.biases.reserve(params.biases.size());
  for (const auto& w : params.weights) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const auto& b : params.biases) g.biases.push_back(Vector::Zero(b.size()));
  return g;
}

MlpParams mlp_init(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  MlpParams p;
  p.spec = spec;
  const int L = spec.num_layers();
  p.weights.reserve(L);
  p.biases.reserve(L);
  for (int l = 0; l < L; ++l) {
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix w(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) {
        w(r, c) = rng.uniform(-bound, bound);
      }
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(out));
  }
  return p;
}

Matrix forward(const MlpParams& params, const Matrix& batch, Tape* tape) {
  const MlpSpec& spec = params.spec;
  if (batch.cols() != spec.input_dim) {
    throw ContractError("forward: batch width " + std::to_string(batch.cols()) +
                        " != input_dim " + std::to_string(spec.input_dim));
  }
  const int L = spec.num_layers();
  if (tape) {
    tape->params = &params;
    tape->params_version = params.version;
    tape->acts.clear();
    tape->acts.reserve(L + 1);
    tape->acts.push_back(batch);
  }
  Matrix h = batch;
  for (int l = 0; l < L; ++l) {
    Matrix z = h * params.weights[l].transpose();
    z.rowwise() += params.biases[l].transpose();
    const Act act = (l == L - 1) ? spec.output_activation : spec.hidden_activation;
    h = activate(z, act);
    if (tape) tape->acts.push_back(h);
  }
  return h;
}

ParamGrads backward_params(const MlpParams& params, const Tape& tape,
                           const Matrix& output_grads) {
  check_tape(params, tape);
  const MlpSpec& spec = params.spec;
  const int L = spec.num_layers();
  if (output_grads.rows() != tape.acts[0].rows() ||
      output_grads.cols() != spec.output_dim) {
    throw ContractError("backward_params: output_grads shape mismatch");
  }

  ParamGrads g = zero_grads(params);
  // bar(Z_L) = sigma_out'(Z_L) . dY
  Matrix bar_z =
      act_prime(tape.acts[L], spec.output_activation).cwiseProduct(output_grads);
  for (int l = L - 1; l >= 0; --l) {
    g.weights[l] = bar_z.transpose() * tape.acts[l];
    g.biases[l] = bar_z.colwise().sum().transpose();
    if (l > 0) {
      Matrix bar_h = bar_z * params.weights[l];
      bar_z = act_prime(tape.acts[l], spec.hidden_activation).cwiseProduct(bar_h);
    }
  }
  return g;
}

Matrix input_gradient(const MlpParams& params, const Matrix& inputs) {
  const MlpSpec& spec = params.spec;
  if (spec.output_dim != 1) {
    throw ContractError("input_gradient: output_dim must be 1");
  }
  Tape tape;
  forward(params, inputs, &tape);
  const int L = spec.num_layers();
  Matrix bar_z = act_prime(tape.acts[L], spec.output_activation);
  for (int l = L - 1; l >= 1; --l) {
    Matrix bar_h = bar_z * params.weights[l];
    bar_z = act_prime(tape.acts[l], spec.hidden_activation).cwiseProduct(bar_h);
  }
  return bar_z * params.weights[0];
}

GpResult gp_value_and_param_grad(const MlpParams& params, const Matrix& states,
                                 const Matrix& actions, double threshold,
                                 Vector* grad_norms) {
  const MlpSpec& spec = params.spec;
  if (spec.output_dim != 1) {
    throw ContractError("gp_value_and_param_grad: critic must be scalar-valued");
  }
  if (states.rows() != actions.rows()) {
    throw ContractError("gp_value_and_param_grad: states/actions row mismatch");
  }
  if (threshold <= 0.0) {
    throw ContractError("gp_value_and_param_grad: threshold must be > 0");
  }
  const int ds = static_cast<int>(states.cols());
  const int da = static_cast<int>(actions.cols());
  if (ds + da != spec.input_dim) {
    throw ContractError("gp_value_and_param_grad: state+action width != input_dim");
  }
  const Eigen::Index B = states.rows();

  Matrix x(B, ds + da);
  x.leftCols(ds) = states;
  x.rightCols(da) = actions;

  // Pass 1: plain forward, then the input-gradient chain to obtain
  // g_i = grad_a Q(s_i, a_i) and its norm per row.
  const int L = spec.num_layers();
  Tape tape;
  forward(params, x, &tape);
  Matrix bar_z = act_prime(tape.acts[L], spec.output_activation);
  for (int l = L - 1; l >= 1; --l) {
    Matrix bar_h = bar_z * params.weights[l];
    bar_z = act_prime(tape.acts[l], spec.hidden_activation).cwiseProduct(bar_h);
  }
  const Matrix grads_a = (bar_z * params.weights[0]).rightCols(da);
  const Vector norms = grads_a.rowwise().norm();
  for (Eigen::Index i = 0; i < B; ++i) {
    if (!std::isfinite(norms[i])) {
      throw NumericError("gp_value_and_param_grad: non-finite gradient norm at row " +
                         std::to_string(i));
    }
  }
  if (grad_norms) *grad_norms = norms;

  GpResult res;
  res.grads = zero_grads(params);
  double penalty = 0.0;
  std::vector<Eigen::Index> active;
  active.reserve(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const double excess = norms[i] - threshold;
    if (excess > 0.0) {
      penalty += excess * excess;
      active.push_back(i);
    }
  }
  res.penalty = penalty / static_cast<double>(B);
  if (active.empty()) return res;

  // Pass 2 runs only on rows past the hinge; everything else has a zero
  // coefficient and contributes no parameter gradient.
  const Eigen::Index A = static_cast<Eigen::Index>(active.size());
  Matrix dir = Matrix::Zero(A, ds + da);
  for (Eigen::Index j = 0; j < A; ++j) {
    const Eigen::Index i = active[j];
    const double coeff = 2.0 * (norms[i] - threshold) /
                         (norms[i] * static_cast<double>(B));
    dir.row(j).tail(da) = coeff * grads_a.row(i);
  }

  std::vector<Matrix> h(L + 1);   // gathered activations of the active rows
  for (int l = 0; l <= L; ++l) {
    h[l].resize(A, tape.acts[l].cols());
    for (Eigen::Index j = 0; j < A; ++j) h[l].row(j) = tape.acts[l].row(active[j]);
  }

  // Tangent forward: hdot_0 = dir, zdot_l = hdot_{l-1} W_l^T,
  // hdot_l = sigma'(z_l) . zdot_l. The sum of the final tangents equals the
  // penalty's directional content; its parameter gradient is the answer.
  std::vector<Matrix> hdot(L + 1);
  std::vector<Matrix> zdot(L + 1);
  hdot[0] = dir;
  for (int l = 1; l <= L; ++l) {
    const Act act = (l == L) ? spec.output_activation : spec.hidden_activation;
    zdot[l] = hdot[l - 1] * params.weights[l - 1].transpose();
    hdot[l] = act_prime(h[l], act).cwiseProduct(zdot[l]);
  }

  // Reverse pass over the tangent graph. Adjoint seeds: bar(hdot_L) = 1.
  Matrix bar_hdot = Matrix::Ones(A, 1);
  Matrix bar_h = Matrix::Zero(A, 1);  // bar of the primal output, unused by the scalar
  for (int l = L; l >= 1; --l) {
    const Act act = (l == L) ? spec.output_activation : spec.hidden_activation;
    const Matrix sp = act_prime(h[l], act);
    // hdot_l = sp(z_l) . zdot_l
    const Matrix bar_zdot = sp.cwiseProduct(bar_hdot);
    Matrix bar_zl = act_second(h[l], act).cwiseProduct(zdot[l]).cwiseProduct(bar_hdot);
    // primal h_l = sigma(z_l)
    bar_zl += sp.cwiseProduct(bar_h);
    // zdot_l = hdot_{l-1} W_l^T
    res.grads.weights[l - 1] += bar_zdot.transpose() * hdot[l - 1];
    // z_l = h_{l-1} W_l^T + b_l
    res.grads.weights[l - 1] += bar_zl.transpose() * h[l - 1];
    res.grads.biases[l - 1] += bar_zl.colwise().sum().transpose();
    if (l > 1) {
      bar_hdot = bar_zdot * params.weights[l - 1];
      bar_h = bar_zl * params.weights[l - 1];
    }
  }
  if (!res.grads.all_finite()) {
    throw NumericError("gp_value_and_param_grad: non-finite parameter gradient");
  }
  return res;
}

}  // namespace orlab
