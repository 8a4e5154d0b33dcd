#pragma once

#include "orlab/dataset.hpp"
#include "orlab/mlp.hpp"
#include "orlab/optim.hpp"

namespace orlab {

enum class KernelKind { gaussian, laplacian };

std::string to_string(KernelKind k);
KernelKind kernel_kind_from_string(const std::string& s);

struct Kernel {
  KernelKind kind;
  double sigma;

  Kernel(KernelKind kind_, double sigma_) : kind(kind_), sigma(sigma_) {
    if (sigma <= 0.0) throw ContractError("Kernel: sigma must be > 0");
  }
};

double kernel_eval(const Kernel& k, const Vector& x, const Vector& y);

// Biased V-statistic:
//   mean_ij k(x_i,x_j) + mean_ij k(y_i,y_j) - 2 mean_ij k(x_i,y_j)
// Nonnegative; exactly zero for identical multisets.
double mmd_squared(const Matrix& X, const Matrix& Y, const Kernel& k);

// d(mmd_squared)/dY with X held fixed; same shape as Y.
Matrix mmd_squared_grad_y(const Matrix& X, const Matrix& Y, const Kernel& k);

struct GaussHeads {
  Matrix mean;         // B x d
  Matrix log_std;      // B x d, clamped
  Matrix clamp_open;   // 1.0 where the clamp is inactive (gradient passes)
  Tape tape;
};

// Split a [mean, log_std] network output into heads with the log-std clamp
// applied. Works on any net whose output width is 2 * action_dim.
GaussHeads gaussian_heads(const MlpParams& net, int action_dim,
                          double log_std_min, double log_std_max,
                          const Matrix& states);

// Diagonal Gaussian policy head over actions: an MLP mapping a state to
// [mean, log_std] with log_std clamped to [log_std_min, log_std_max] and
// samples clipped to the action box. Doubles as the fitted behavior model.
struct GaussianPolicy {
  MlpParams net;  // output width 2 * action_dim, identity output
  int action_dim = 0;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  using Heads = GaussHeads;
  Heads heads(const Matrix& states) const;

  // m samples per state; row i*m + j is draw j for state i. When `eps_out`
  // is given it receives the pre-clip standard normal draws, and `clip_open`
  // marks coordinates the box clip left untouched.
  Matrix sample(const Matrix& states, int m, Rng& rng, Matrix* eps_out = nullptr,
                Matrix* clip_open = nullptr) const;

  // Deterministic action: the mean clipped to the box.
  Vector mean_action(const Vector& state) const;
};

struct BehaviorFitConfig {
  std::int64_t steps = 5000;
  int batch_size = 256;
  double lr = 1e-3;
  std::vector<int> hidden_dims = {64, 64};
};

using BehaviorModel = GaussianPolicy;

// Maximum-likelihood fit of the Gaussian policy to (s, a) pairs. States are
// passed through `norm` when given (training and inference must agree).
BehaviorModel behavior_fit(const Dataset& ds, const BehaviorFitConfig& cfg,
                           Rng& rng, const Normalizer* norm = nullptr);

Matrix behavior_sample(const BehaviorModel& model, const Matrix& states, int m,
                       Rng& rng);

// Mean negative log-likelihood of actions under the policy at these states.
double gaussian_nll(const GaussianPolicy& model, const Matrix& states,
                    const Matrix& actions);

}  // namespace orlab
