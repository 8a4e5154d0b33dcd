#include "orlab/optim.hpp"

#include <cmath>

namespace orlab {

OptimState make_optim(const MlpParams& params, double lr, double beta1,
                      double beta2, double eps) {
  OptimState o;
  o.lr = lr;
  o.beta1 = beta1;
  o.beta2 = beta2;
  o.eps = eps;
  for (const auto& w : params.weights) {
    o.m_w.push_back(Matrix::Zero(w.rows(), w.cols()));
    o.v_w.push_back(Matrix::Zero(w.rows(), w.cols()));
  }
  for (const auto& b : params.biases) {
    o.m_b.push_back(Vector::Zero(b.size()));
    o.v_b.push_back(Vector::Zero(b.size()));
  }
  return o;
}

bool adam_step(OptimState& opt, MlpParams& params, const ParamGrads& grads) {
  if (grads.weights.size() != params.weights.size() ||
      opt.m_w.size() != params.weights.size()) {
    throw ContractError("adam_step: shape mismatch");
  }
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    if (grads.weights[l].rows() != params.weights[l].rows() ||
        grads.weights[l].cols() != params.weights[l].cols() ||
        grads.biases[l].size() != params.biases[l].size()) {
      throw ContractError("adam_step: gradient shape mismatch at layer " +
                          std::to_string(l));
    }
  }
  if (!grads.all_finite()) return false;

  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    opt.m_w[l] = opt.beta1 * opt.m_w[l] + (1.0 - opt.beta1) * grads.weights[l];
    opt.v_w[l] = opt.beta2 * opt.v_w[l] +
                 (1.0 - opt.beta2) * grads.weights[l].cwiseProduct(grads.weights[l]);
    params.weights[l].array() -=
        opt.lr * (opt.m_w[l].array() / bc1) /
        ((opt.v_w[l].array() / bc2).sqrt() + opt.eps);

    opt.m_b[l] = opt.beta1 * opt.m_b[l] + (1.0 - opt.beta1) * grads.biases[l];
    opt.v_b[l] = opt.beta2 * opt.v_b[l] +
                 (1.0 - opt.beta2) * grads.biases[l].cwiseProduct(grads.biases[l]);
    params.biases[l].array() -=
        opt.lr * (opt.m_b[l].array() / bc1) /
        ((opt.v_b[l].array() / bc2).sqrt() + opt.eps);
  }
  params.version += 1;
  return true;
}

void polyak_update(MlpParams& target, const MlpParams& online, double tau) {
  if (tau <= 0.0 || tau > 1.0) {
    throw ContractError("polyak_update: tau must be in (0, 1]");
  }
  if (target.weights.size() != online.weights.size()) {
    throw ContractError("polyak_update: shape mismatch");
  }
  for (std::size_t l = 0; l < target.weights.size(); ++l) {
    if (target.weights[l].rows() != online.weights[l].rows() ||
        target.weights[l].cols() != online.weights[l].cols()) {
      throw ContractError("polyak_update: shape mismatch at layer " +
                          std::to_string(l));
    }
    target.weights[l] = (1.0 - tau) * target.weights[l] + tau * online.weights[l];
    target.biases[l] = (1.0 - tau) * target.biases[l] + tau * online.biases[l];
  }
  target.version += 1;
}

}  // namespace orlab
