#include "orlab/divergence.hpp"

#include <cmath>

namespace orlab {

std::string to_string(KernelKind k) {
  return k == KernelKind::gaussian ? "gaussian" : "laplacian";
}

KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "gaussian") return KernelKind::gaussian;
  if (s == "laplacian") return KernelKind::laplacian;
  throw ContractError("unknown kernel kind: " + s);
}

double kernel_eval(const Kernel& k, const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw ContractError("kernel_eval: dimension mismatch");
  if (k.kind == KernelKind::gaussian) {
    return std::exp(-(x - y).squaredNorm() / (2.0 * k.sigma * k.sigma));
  }
  return std::exp(-(x - y).cwiseAbs().sum() / k.sigma);
}

namespace {

double kernel_rows(const Kernel& k, const Matrix& X, Eigen::Index i,
                   const Matrix& Y, Eigen::Index j) {
  if (k.kind == KernelKind::gaussian) {
    return std::exp(-(X.row(i) - Y.row(j)).squaredNorm() / (2.0 * k.sigma * k.sigma));
  }
  return std::exp(-(X.row(i) - Y.row(j)).cwiseAbs().sum() / k.sigma);
}

}  // namespace

double mmd_squared(const Matrix& X, const Matrix& Y, const Kernel& k) {
  if (X.rows() < 1 || Y.rows() < 1) throw ContractError("mmd_squared: empty sample set");
  if (X.cols() != Y.cols()) throw ContractError("mmd_squared: dimension mismatch");
  const Eigen::Index n = X.rows(), m = Y.rows();
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) kxx += kernel_rows(k, X, i, X, j);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) kyy += kernel_rows(k, Y, i, Y, j);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) kxy += kernel_rows(k, X, i, Y, j);
  const double v = kxx / static_cast<double>(n * n) + kyy / static_cast<double>(m * m) -
                   2.0 * kxy / static_cast<double>(n * m);
  return std::max(0.0, v);
}

Matrix mmd_squared_grad_y(const Matrix& X, const Matrix& Y, const Kernel& k) {
  if (X.cols() != Y.cols()) throw ContractError("mmd_squared_grad_y: dimension mismatch");
  const Eigen::Index n = X.rows(), m = Y.rows();
  const double s2 = k.sigma * k.sigma;
  Matrix g = Matrix::Zero(m, Y.cols());
  for (Eigen::Index p = 0; p < m; ++p) {
    // d/dy_p of mean_ij k(y_i, y_j): both index positions contribute.
    for (Eigen::Index j = 0; j < m; ++j) {
      const double kv = kernel_rows(k, Y, p, Y, j);
      if (k.kind == KernelKind::gaussian) {
        g.row(p) += (2.0 / static_cast<double>(m * m)) * kv *
                    (-(Y.row(p) - Y.row(j)) / s2);
      } else {
        g.row(p) += (2.0 / static_cast<double>(m * m)) * kv *
                    (-(Y.row(p) - Y.row(j)).array().sign().matrix() / k.sigma);
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double kv = kernel_rows(k, Y, p, X, i);
      if (k.kind == KernelKind::gaussian) {
        g.row(p) -= (2.0 / static_cast<double>(n * m)) * kv *
                    (-(Y.row(p) - X.row(i)) / s2);
      } else {
        g.row(p) -= (2.0 / static_cast<double>(n * m)) * kv *
                    (-(Y.row(p) - X.row(i)).array().sign().matrix() / k.sigma);
      }
    }
  }
  return g;
}

GaussHeads gaussian_heads(const MlpParams& net, int action_dim,
                          double log_std_min, double log_std_max,
                          const Matrix& states) {
  GaussHeads h;
  const Matrix out = forward(net, states, &h.tape);
  if (out.cols() != 2 * action_dim) {
    throw ContractError("gaussian_heads: net output width must be 2*action_dim");
  }
  h.mean = out.leftCols(action_dim);
  const Matrix raw = out.rightCols(action_dim);
  h.log_std = raw.cwiseMax(log_std_min).cwiseMin(log_std_max);
  h.clamp_open = ((raw.array() > log_std_min) && (raw.array() < log_std_max))
                     .cast<double>()
                     .matrix();
  return h;
}

GaussianPolicy::Heads GaussianPolicy::heads(const Matrix& states) const {
  return gaussian_heads(net, action_dim, log_std_min, log_std_max, states);
}

Matrix GaussianPolicy::sample(const Matrix& states, int m, Rng& rng,
                              Matrix* eps_out, Matrix* clip_open) const {
  if (m < 1) throw ContractError("GaussianPolicy::sample: m must be >= 1");
  const Heads h = heads(states);
  const Eigen::Index B = states.rows();
  const int d = action_dim;
  Matrix eps(B * m, d);
  for (Eigen::Index r = 0; r < eps.rows(); ++r)
    for (int c = 0; c < d; ++c) eps(r, c) = rng.gauss();
  Matrix out(B * m, d);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto mu = h.mean.row(i);
    const auto sd = h.log_std.row(i).array().exp();
    for (int j = 0; j < m; ++j) {
      out.row(i * m + j) =
          (mu.array() + sd * eps.row(i * m + j).array()).matrix();
    }
  }
  if (clip_open) {
    *clip_open = ((out.array() > -1.0) && (out.array() < 1.0)).cast<double>().matrix();
  }
  out = out.cwiseMax(-1.0).cwiseMin(1.0);
  if (eps_out) *eps_out = std::move(eps);
  return out;
}

Vector GaussianPolicy::mean_action(const Vector& state) const {
  const Matrix s = state.transpose();
  const Heads h = heads(s);
  return h.mean.row(0).cwiseMax(-1.0).cwiseMin(1.0).transpose();
}

double gaussian_nll(const GaussianPolicy& model, const Matrix& states,
                    const Matrix& actions) {
  const auto h = model.heads(states);
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  const Eigen::ArrayXXd sd = h.log_std.array().exp();
  const Eigen::ArrayXXd z = (actions.array() - h.mean.array()) / sd;
  const double per_elem =
      (h.log_std.array() + 0.5 * z.square() + kHalfLog2Pi).sum();
  return per_elem / static_cast<double>(states.rows());
}

BehaviorModel behavior_fit(const Dataset& ds, const BehaviorFitConfig& cfg,
                           Rng& rng, const Normalizer* norm) {
  if (ds.rows.empty()) throw ContractError("behavior_fit: empty dataset");
  const DatasetView view = make_view(ds);
  const Matrix S = norm ? norm->apply_rows(view.states) : view.states;
  const int sd = static_cast<int>(S.cols());
  const int ad = static_cast<int>(view.actions.cols());

  GaussianPolicy model;
  model.action_dim = ad;
  MlpSpec spec{sd, cfg.hidden_dims, 2 * ad, Act::relu, Act::identity};
  Rng init_rng = rng.split();
  model.net = mlp_init(spec, init_rng);
  OptimState opt = make_optim(model.net, cfg.lr);

  Rng batch_rng = rng.split();
  const std::int64_t n = ds.size();
  const int b = static_cast<int>(std::min<std::int64_t>(cfg.batch_size, n));
  Matrix bs(b, sd), ba(b, ad);
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    for (int i = 0; i < b; ++i) {
      const std::int64_t idx = batch_rng.uniform_int(n);
      bs.row(i) = S.row(idx);
      ba.row(i) = view.actions.row(idx);
    }
    const auto h = model.heads(bs);
    const Eigen::ArrayXXd sd_arr = h.log_std.array().exp();
    const Eigen::ArrayXXd z = (ba.array() - h.mean.array()) / sd_arr;
    const double inv_b = 1.0 / static_cast<double>(b);
    Matrix dout(b, 2 * ad);
    dout.leftCols(ad) = (-z / sd_arr).matrix() * inv_b;
    dout.rightCols(ad) =
        ((1.0 - z.square()) * h.clamp_open.array()).matrix() * inv_b;
    const ParamGrads g = backward_params(model.net, h.tape, dout);
    if (!adam_step(opt, model.net, g)) {
      throw NumericError("behavior_fit: non-finite gradients at step " +
                         std::to_string(step));
    }
  }
  return model;
}

Matrix behavior_sample(const BehaviorModel& model, const Matrix& states, int m,
                       Rng& rng) {
  return model.sample(states, m, rng);
}

}  // namespace orlab
