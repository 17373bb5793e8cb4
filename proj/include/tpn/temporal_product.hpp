#pragma once

#include <optional>

#include "tpn/parallel.hpp"
#include "tpn/prox.hpp"

namespace tpn {

/// Double-tanh encoder with a scalar notch, shared by both code groups.
template <typename Scalar>
struct TpnEncoder {
  Mat<Scalar> weights;  // n_code x n_s
  Vec<Scalar> gain;     // per unit, >= 0
  Vec<Scalar> bias;
  Scalar notch = Scalar(0.5);  // >= 0

  /// D (tanh(W s + B + U) + tanh(W s + B - U)), before clamping at zero.
  Vec<Scalar> raw(const Vec<Scalar>& s) const {
    require(s.size() == weights.cols(), "dimension mismatch: frame vs TPN encoder");
    const Vec<Scalar> y = weights * s + bias;
    return gain.cwiseProduct(((y.array() + notch).tanh() + (y.array() - notch).tanh()).matrix());
  }
};

/// Multiplicative what/where decoder over windows of n_tau frames:
///   S^R_tau = sqrt(max(W1 z1_tau, 0) * max(W2 z2, 0))   (elementwise)
template <typename Scalar>
struct TpnModel {
  Mat<Scalar> dec1;  // n_s x n_1, location ("where") units
  Mat<Scalar> dec2;  // n_s x n_2, invariant ("what") units
  TpnEncoder<Scalar> enc1;
  TpnEncoder<Scalar> enc2;
  int n_tau = 3;
  Scalar alpha1 = Scalar(0.02);
  Scalar alpha2 = Scalar(0.02);

  Eigen::Index n_s() const { return dec1.rows(); }
  Eigen::Index n_1() const { return dec1.cols(); }
  Eigen::Index n_2() const { return dec2.cols(); }

  void normalize() {
    normalize_columns(dec1);
    normalize_columns(dec2);
  }

  void validate() const {
    require(dec1.rows() == dec2.rows(), "TPN decoders disagree on input size");
    require(enc1.weights.rows() == n_1() && enc1.weights.cols() == n_s(), "TPN encoder 1 shape");
    require(enc2.weights.rows() == n_2() && enc2.weights.cols() == n_s(), "TPN encoder 2 shape");
    require(enc1.gain.size() == n_1() && enc1.bias.size() == n_1(), "TPN encoder 1 vectors");
    require(enc2.gain.size() == n_2() && enc2.bias.size() == n_2(), "TPN encoder 2 vectors");
    require(n_tau >= 1, "TPN window length must be at least 1");
    require(alpha1 > 0 && alpha2 > 0, "TPN sparsity weights must be positive");
  }

  /// Decoders with non-negative unit columns (|Gaussian|), encoders W = dec^T
  /// with gain 1 / n_tau for the invariant group, bias 0, notch 0.5.
  static TpnModel random(Eigen::Index n_s, Eigen::Index n_1, Eigen::Index n_2, int n_tau, Rng& rng) {
    TpnModel m;
    m.dec1 = rng.normal_matrix<Scalar>(n_s, n_1).cwiseAbs();
    m.dec2 = rng.normal_matrix<Scalar>(n_s, n_2).cwiseAbs();
    m.normalize();
    m.n_tau = n_tau;
    m.enc1 = {m.dec1.transpose(), Vec<Scalar>::Ones(n_1), Vec<Scalar>::Zero(n_1), Scalar(0.5)};
    m.enc2 = {m.dec2.transpose(), Vec<Scalar>::Constant(n_2, Scalar(1) / Scalar(n_tau)), Vec<Scalar>::Zero(n_2),
              Scalar(0.5)};
    return m;
  }
};

/// The n_tau most recent simple-cell activation vectors; column tau is S^{t - tau}.
template <typename Scalar>
struct FrameWindow {
  Mat<Scalar> frames;  // n_s x n_tau, entries >= 0

  Eigen::Index n_tau() const { return frames.cols(); }
};

template <typename Scalar>
struct TpnCode {
  Mat<Scalar> z1;  // n_1 x n_tau
  Vec<Scalar> z2;  // n_2
  Scalar energy = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<Scalar> energy_trace;
};

constexpr double kTpnSqrtEps = 1e-8;

template <typename Scalar>
void check_window(const FrameWindow<Scalar>& w, const TpnModel<Scalar>& model) {
  require(w.frames.rows() == model.n_s(), "dimension mismatch: window vs TPN input size");
  require(w.frames.cols() == model.n_tau, "dimension mismatch: window length vs n_tau");
}

template <typename Scalar>
Vec<Scalar> tpn_reconstruct(const Vec<Scalar>& z1, const Vec<Scalar>& z2, const Mat<Scalar>& dec1,
                            const Mat<Scalar>& dec2) {
  require(z1.size() == dec1.cols() && z2.size() == dec2.cols(), "dimension mismatch: TPN codes vs decoders");
  require(dec1.rows() == dec2.rows(), "TPN decoders disagree on input size");
  const Vec<Scalar> a = (dec1 * z1).cwiseMax(Scalar(0));
  const Vec<Scalar> b = (dec2 * z2).cwiseMax(Scalar(0));
  return a.cwiseProduct(b).cwiseSqrt();
}

template <typename Scalar>
Vec<Scalar> tpn_reconstruct(const Vec<Scalar>& z1, const Vec<Scalar>& z2, const TpnModel<Scalar>& model) {
  return tpn_reconstruct(z1, z2, model.dec1, model.dec2);
}

/// sum_tau |S_tau - S^R_tau|^2 (reconstruction term only).
template <typename Scalar>
Scalar tpn_reconstruction_error(const FrameWindow<Scalar>& w, const Mat<Scalar>& z1, const Vec<Scalar>& z2,
                                const TpnModel<Scalar>& model) {
  Scalar total = 0;
  for (Eigen::Index t = 0; t < w.n_tau(); ++t)
    total += (w.frames.col(t) - tpn_reconstruct(Vec<Scalar>(z1.col(t)), z2, model)).squaredNorm();
  return total;
}

/// Reconstruction error plus alpha1 sum_tau |z1_tau| + alpha2 |z2|.
template <typename Scalar>
Scalar tpn_energy(const FrameWindow<Scalar>& w, const Mat<Scalar>& z1, const Vec<Scalar>& z2,
                  const TpnModel<Scalar>& model) {
  check_window(w, model);
  require(z1.rows() == model.n_1() && z1.cols() == model.n_tau && z2.size() == model.n_2(),
          "dimension mismatch: TPN code shape");
  return tpn_reconstruction_error(w, z1, z2, model) + model.alpha1 * z1.cwiseAbs().sum() +
         model.alpha2 * z2.cwiseAbs().sum();
}

template <typename Scalar>
struct TpnGradients {
  Mat<Scalar> z1;  // n_1 x n_tau
  Vec<Scalar> z2;
  Mat<Scalar> dec1;
  Mat<Scalar> dec2;
};

/// Gradient of the reconstruction term with respect to codes and decoders.
/// Rectified entries pass no gradient; sqrt(q) is differentiated as
/// 1 / (2 sqrt(q + 1e-8)).
template <typename Scalar>
TpnGradients<Scalar> tpn_reconstruction_gradients(const FrameWindow<Scalar>& w, const Mat<Scalar>& z1,
                                                  const Vec<Scalar>& z2, const TpnModel<Scalar>& model,
                                                  bool want_decoders = true) {
  const Scalar eps = static_cast<Scalar>(kTpnSqrtEps);
  TpnGradients<Scalar> g;
  g.z1 = Mat<Scalar>::Zero(z1.rows(), z1.cols());
  g.z2 = Vec<Scalar>::Zero(z2.size());
  if (want_decoders) {
    g.dec1 = Mat<Scalar>::Zero(model.dec1.rows(), model.dec1.cols());
    g.dec2 = Mat<Scalar>::Zero(model.dec2.rows(), model.dec2.cols());
  }
  const Vec<Scalar> v = model.dec2 * z2;
  const Vec<Scalar> b = v.cwiseMax(Scalar(0));
  Vec<Scalar> gb_total = Vec<Scalar>::Zero(v.size());
  for (Eigen::Index t = 0; t < w.n_tau(); ++t) {
    const Vec<Scalar> u = model.dec1 * z1.col(t);
    const Vec<Scalar> a = u.cwiseMax(Scalar(0));
    const Vec<Scalar> q = a.cwiseProduct(b);
    const Vec<Scalar> r = q.cwiseSqrt();
    const Vec<Scalar> e = w.frames.col(t) - r;
    // dL/dr = -2 e;  dr/da = b / (2 sqrt(q)),  dr/db = a / (2 sqrt(q))
    const Vec<Scalar> common = (-e.array() / (q.array() + eps).sqrt()).matrix();
    Vec<Scalar> ga = common.cwiseProduct(b);
    Vec<Scalar> gb = common.cwiseProduct(a);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (u(i) <= 0) ga(i) = 0;
      if (v(i) <= 0) gb(i) = 0;
    }
    g.z1.col(t) = model.dec1.transpose() * ga;
    gb_total += gb;
    if (want_decoders) g.dec1 += ga * z1.col(t).transpose();
  }
  g.z2 = model.dec2.transpose() * gb_total;
  if (want_decoders) g.dec2 = gb_total * z2.transpose();
  return g;
}

/// Feed-forward location code for one frame, clamped at zero.
template <typename Scalar>
Vec<Scalar> tpn_encode_z1(const Vec<Scalar>& s_frame, const TpnModel<Scalar>& model) {
  return model.enc1.raw(s_frame).cwiseMax(Scalar(0));
}

/// Feed-forward invariant code: sum over the window of double-tanh maps, clamped at zero.
template <typename Scalar>
Vec<Scalar> tpn_encode_z2(const FrameWindow<Scalar>& w, const TpnModel<Scalar>& model) {
  require(w.frames.rows() == model.n_s(), "dimension mismatch: window vs TPN input size");
  Vec<Scalar> sum = Vec<Scalar>::Zero(model.n_2());
  for (Eigen::Index t = 0; t < w.n_tau(); ++t) sum += model.enc2.raw(Vec<Scalar>(w.frames.col(t)));
  return sum.cwiseMax(Scalar(0));
}

namespace detail {

/// Flattened code [z1 (column-major), z2] with the non-negative L1 prox.
template <typename Scalar>
class TpnProblem {
 public:
  TpnProblem(const FrameWindow<Scalar>& w, const TpnModel<Scalar>& model) : w_(w), model_(model) {
    const Eigen::Index n1 = model.n_1() * model.n_tau;
    weights_.resize(n1 + model.n_2());
    weights_.head(n1).setConstant(model.alpha1);
    weights_.tail(model.n_2()).setConstant(model.alpha2);
  }

  Mat<Scalar> z1(const Vec<Scalar>& flat) const {
    return Eigen::Map<const Mat<Scalar>>(flat.data(), model_.n_1(), model_.n_tau);
  }
  Vec<Scalar> z2(const Vec<Scalar>& flat) const { return flat.tail(model_.n_2()); }

  Vec<Scalar> flatten(const Mat<Scalar>& z1, const Vec<Scalar>& z2) const {
    Vec<Scalar> flat(weights_.size());
    flat.head(z1.size()) = Eigen::Map<const Vec<Scalar>>(z1.data(), z1.size());
    flat.tail(z2.size()) = z2;
    return flat;
  }

  Scalar smooth(const Vec<Scalar>& z, Vec<Scalar>* grad) const {
    const Mat<Scalar> a = z1(z);
    const Vec<Scalar> b = z2(z);
    if (grad) {
      const auto g = tpn_reconstruction_gradients(w_, a, b, model_, false);
      *grad = flatten(g.z1, g.z2);
    }
    return tpn_reconstruction_error(w_, a, b, model_);
  }

  Scalar penalty(const Vec<Scalar>& z) const { return weights_.dot(z.cwiseAbs()); }

  Vec<Scalar> prox(const Vec<Scalar>& v, Scalar step) const {
    return (v - step * weights_).cwiseMax(Scalar(0));
  }

  Vec<Scalar> subgradient(const Vec<Scalar>&) const { return weights_; }

 private:
  const FrameWindow<Scalar>& w_;
  const TpnModel<Scalar>& model_;
  Vec<Scalar> weights_;
};

}  // namespace detail

/// Starting code used by inference: encoder predictions, or a small uniform
/// positive code when the encoders predict all zeros.
template <typename Scalar>
std::pair<Mat<Scalar>, Vec<Scalar>> tpn_initial_code(const FrameWindow<Scalar>& w, const TpnModel<Scalar>& model) {
  Mat<Scalar> z1(model.n_1(), model.n_tau);
  for (Eigen::Index t = 0; t < w.n_tau(); ++t) z1.col(t) = tpn_encode_z1(Vec<Scalar>(w.frames.col(t)), model);
  Vec<Scalar> z2 = tpn_encode_z2(w, model);
  if (z1.sum() <= 0 || z2.sum() <= 0) {
    z1.setConstant(Scalar(0.1));
    z2.setConstant(Scalar(0.1));
  }
  return {z1, z2};
}

/// Projected proximal-gradient minimization of the TPN energy; every iterate
/// is non-negative and the energy never increases.
template <typename Scalar>
TpnCode<Scalar> tpn_infer(const FrameWindow<Scalar>& w, const TpnModel<Scalar>& model, const SparseHyper& hyper,
                          const std::optional<std::pair<Mat<Scalar>, Vec<Scalar>>>& init = std::nullopt) {
  check_window(w, model);
  require((w.frames.array() >= 0).all(), "TPN window entries must be non-negative");
  detail::TpnProblem<Scalar> problem(w, model);
  const auto start = init ? *init : tpn_initial_code(w, model);
  require(start.first.rows() == model.n_1() && start.first.cols() == model.n_tau &&
              start.second.size() == model.n_2(),
          "dimension mismatch: TPN initial code");
  SparseHyper h = hyper;
  h.method = InferenceMethod::Proximal;
  auto state = minimize_composite<Scalar>(
      problem, problem.flatten(start.first.cwiseMax(Scalar(0)), start.second.cwiseMax(Scalar(0))), h);
  TpnCode<Scalar> code;
  code.z1 = problem.z1(state.z);
  code.z2 = problem.z2(state.z);
  code.energy = state.energy;
  code.iterations = state.iterations;
  code.converged = state.converged;
  code.energy_trace = std::move(state.energy_trace);
  return code;
}

template <typename Scalar>
struct TpnEncoderGradient {
  Mat<Scalar> weights;
  Vec<Scalar> gain;
  Vec<Scalar> bias;
  Scalar notch = 0;
};

namespace detail {

// Accumulates d/dparams of <upstream, D (tanh(y + U) + tanh(y - U))> for y = W s + B.
template <typename Scalar>
void accumulate_double_tanh(const TpnEncoder<Scalar>& enc, const Vec<Scalar>& s, const Vec<Scalar>& upstream,
                            TpnEncoderGradient<Scalar>& g) {
  const Vec<Scalar> y = enc.weights * s + enc.bias;
  const Vec<Scalar> tp = (y.array() + enc.notch).tanh().matrix();
  const Vec<Scalar> tm = (y.array() - enc.notch).tanh().matrix();
  const Vec<Scalar> sp = (Scalar(1) - tp.array().square()).matrix();
  const Vec<Scalar> sm = (Scalar(1) - tm.array().square()).matrix();
  const Vec<Scalar> scaled = upstream.cwiseProduct(enc.gain);
  const Vec<Scalar> dy = scaled.cwiseProduct(sp + sm);
  g.gain += upstream.cwiseProduct(tp + tm);
  g.bias += dy;
  g.weights += dy * s.transpose();
  g.notch += scaled.dot(sp - sm);
}

template <typename Scalar>
TpnEncoderGradient<Scalar> zero_encoder_gradient(const TpnEncoder<Scalar>& enc) {
  return {Mat<Scalar>::Zero(enc.weights.rows(), enc.weights.cols()), Vec<Scalar>::Zero(enc.gain.size()),
          Vec<Scalar>::Zero(enc.bias.size()), Scalar(0)};
}

}  // namespace detail

/// Encoder regression loss sum_tau |z1_tau - raw1(S_tau)|^2 + |z2 - sum_tau raw2(S_tau)|^2
/// on the unclamped predictions.
template <typename Scalar>
Scalar tpn_prediction_loss(const FrameWindow<Scalar>& w, const Mat<Scalar>& z1, const Vec<Scalar>& z2,
                           const TpnModel<Scalar>& model) {
  Scalar loss = 0;
  Vec<Scalar> sum2 = Vec<Scalar>::Zero(model.n_2());
  for (Eigen::Index t = 0; t < w.n_tau(); ++t) {
    const Vec<Scalar> s = w.frames.col(t);
    loss += (z1.col(t) - model.enc1.raw(s)).squaredNorm();
    sum2 += model.enc2.raw(s);
  }
  return loss + (z2 - sum2).squaredNorm();
}

template <typename Scalar>
std::pair<TpnEncoderGradient<Scalar>, TpnEncoderGradient<Scalar>> tpn_prediction_gradients(
    const FrameWindow<Scalar>& w, const Mat<Scalar>& z1, const Vec<Scalar>& z2, const TpnModel<Scalar>& model) {
  auto g1 = detail::zero_encoder_gradient(model.enc1);
  auto g2 = detail::zero_encoder_gradient(model.enc2);
  Vec<Scalar> sum2 = Vec<Scalar>::Zero(model.n_2());
  for (Eigen::Index t = 0; t < w.n_tau(); ++t) sum2 += model.enc2.raw(Vec<Scalar>(w.frames.col(t)));
  const Vec<Scalar> up2 = Scalar(-2) * (z2 - sum2);
  for (Eigen::Index t = 0; t < w.n_tau(); ++t) {
    const Vec<Scalar> s = w.frames.col(t);
    const Vec<Scalar> up1 = Scalar(-2) * (z1.col(t) - model.enc1.raw(s));
    detail::accumulate_double_tanh(model.enc1, s, up1, g1);
    detail::accumulate_double_tanh(model.enc2, s, up2, g2);
  }
  return {g1, g2};
}

struct TpnTrainHyper {
  double decoder_rate = 0.02;
  double encoder_rate = 0.005;
  int threads = 1;
};

struct TpnStepStats {
  double recon_err = 0;
  double pred_err = 0;
  double energy = 0;
  double iterations = 0;
};

/// One step on a batch of windows: infer optimal codes, descend the energy
/// in both decoders and the prediction loss in both encoders, renormalize.
template <typename Scalar>
TpnStepStats tpn_train_step(const std::vector<FrameWindow<Scalar>>& batch, TpnModel<Scalar>& model,
                            const SparseHyper& hyper, const TpnTrainHyper& train) {
  require(!batch.empty(), "tpn_train_step: empty batch");
  model.validate();
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<TpnCode<Scalar>> codes(batch.size());
  parallel_for(n, train.threads, [&](std::ptrdiff_t i) {
    codes[static_cast<std::size_t>(i)] = tpn_infer(batch[static_cast<std::size_t>(i)], model, hyper);
  });
  Mat<Scalar> g_dec1 = Mat<Scalar>::Zero(model.dec1.rows(), model.dec1.cols());
  Mat<Scalar> g_dec2 = Mat<Scalar>::Zero(model.dec2.rows(), model.dec2.cols());
  auto g_enc1 = detail::zero_encoder_gradient(model.enc1);
  auto g_enc2 = detail::zero_encoder_gradient(model.enc2);
  TpnStepStats stats;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& code = codes[i];
    const auto g = tpn_reconstruction_gradients(batch[i], code.z1, code.z2, model);
    g_dec1 += g.dec1;
    g_dec2 += g.dec2;
    const auto [e1, e2] = tpn_prediction_gradients(batch[i], code.z1, code.z2, model);
    g_enc1.weights += e1.weights;
    g_enc1.gain += e1.gain;
    g_enc1.bias += e1.bias;
    g_enc1.notch += e1.notch;
    g_enc2.weights += e2.weights;
    g_enc2.gain += e2.gain;
    g_enc2.bias += e2.bias;
    g_enc2.notch += e2.notch;
    stats.recon_err += static_cast<double>(tpn_reconstruction_error(batch[i], code.z1, code.z2, model));
    stats.pred_err += static_cast<double>(tpn_prediction_loss(batch[i], code.z1, code.z2, model));
    stats.energy += static_cast<double>(code.energy);
    stats.iterations += code.iterations;
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(n);
  const Scalar dr = static_cast<Scalar>(train.decoder_rate) * inv;
  const Scalar er = static_cast<Scalar>(train.encoder_rate) * inv;
  model.dec1 -= dr * g_dec1;
  model.dec2 -= dr * g_dec2;
  model.normalize();
  auto step = [er](TpnEncoder<Scalar>& enc, const TpnEncoderGradient<Scalar>& g) {
    enc.weights -= er * g.weights;
    enc.gain = (enc.gain - er * g.gain).cwiseMax(Scalar(0));
    enc.bias -= er * g.bias;
    enc.notch = std::max(Scalar(0), enc.notch - er * g.notch);
  };
  step(model.enc1, g_enc1);
  step(model.enc2, g_enc2);
  stats.recon_err /= static_cast<double>(n);
  stats.pred_err /= static_cast<double>(n);
  stats.energy /= static_cast<double>(n);
  stats.iterations /= static_cast<double>(n);
  return stats;
}

using TpnModelXd = TpnModel<double>;
using FrameWindowXd = FrameWindow<double>;
using TpnCodeXd = TpnCode<double>;

}  // namespace tpn
