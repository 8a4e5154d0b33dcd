#pragma once

#include "orlab/mlp.hpp"

namespace orlab {

// Adaptive-moment optimizer state, shape-congruent with its parameters.
struct OptimState {
  std::vector<Matrix> m_w, v_w;
  std::vector<Vector> m_b, v_b;
  std::int64_t step = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

OptimState make_optim(const MlpParams& params, double lr = 3e-4,
                      double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8);

// Bias-corrected update. Returns false and leaves params and state untouched
// when the gradients contain non-finite values.
bool adam_step(OptimState& opt, MlpParams& params, const ParamGrads& grads);

// target <- (1 - tau) * target + tau * online, elementwise. tau in (0, 1].
void polyak_update(MlpParams& target, const MlpParams& online, double tau);

}  // namespace orlab
