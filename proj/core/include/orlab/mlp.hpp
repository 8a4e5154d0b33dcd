#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "orlab/rng.hpp"

namespace orlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Precondition / shape violations.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values encountered during numeric work.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Act { relu, tanh, identity };

struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden_dims;
  int output_dim = 1;
  Act hidden_activation = Act::relu;
  Act output_activation = Act::identity;

  int num_layers() const { return static_cast<int>(hidden_dims.size()) + 1; }
  int layer_in(int l) const { return l == 0 ? input_dim : hidden_dims[l - 1]; }
  int layer_out(int l) const {
    return l == num_layers() - 1 ? output_dim : hidden_dims[l];
  }
  void validate() const;
  bool operator==(const MlpSpec&) const = default;
};

// Dense parameters, one weight matrix (out x in) and bias per layer.
// `version` is bumped by in-place updates and lets a Tape detect staleness.
struct MlpParams {
  MlpSpec spec;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::uint64_t version = 0;

  bool all_finite() const;
};

struct ParamGrads {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  void add_scaled(const ParamGrads& other, double scale);
  bool all_finite() const;
  double max_abs() const;
};

ParamGrads zero_grads(const MlpParams& params);

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
MlpParams mlp_init(const MlpSpec& spec, Rng& rng);

// Record of one forward pass: acts[0] is the input batch, acts[l] the
// post-activation output of layer l. Activation derivatives are recovered
// from the stored activations, so pre-activations are not kept.
struct Tape {
  const MlpParams* params = nullptr;
  std::uint64_t params_version = 0;
  std::vector<Matrix> acts;

  const Matrix& output() const { return acts.back(); }
};

// Batch rows are samples. Returns outputs and fills `tape` when given.
Matrix forward(const MlpParams& params, const Matrix& batch, Tape* tape = nullptr);

// Gradient of sum_rows(outputs . output_grads) with respect to parameters.
// Averaging conventions are the caller's responsibility.
ParamGrads backward_params(const MlpParams& params, const Tape& tape,
                           const Matrix& output_grads);

// Row i of the result is the gradient of the scalar output for row i with
// respect to input row i. Requires output_dim == 1.
Matrix input_gradient(const MlpParams& params, const Matrix& inputs);

struct GpResult {
  double penalty = 0.0;
  ParamGrads grads;
};

// One-sided gradient penalty over a scalar critic on concatenated (s, a):
//   penalty = mean_rows [max(0, ||grad_a Q(s,a)||_2 - threshold)]^2
// The parameter gradient is exact: the tangent pass below pushes the hinge
// coefficients through the network, and the reverse pass over that tangent
// graph yields d(penalty)/d(theta) including the second-order terms
// (sigma'' of each activation). No finite differencing anywhere.
// `grad_norms`, when non-null, receives the per-row action-gradient norms.
GpResult gp_value_and_param_grad(const MlpParams& params, const Matrix& states,
                                 const Matrix& actions, double threshold,
                                 Vector* grad_norms = nullptr);

}  // namespace orlab
