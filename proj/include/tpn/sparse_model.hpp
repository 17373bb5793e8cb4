#pragma once

#include <optional>

#include "tpn/group_sparsity.hpp"
#include "tpn/parallel.hpp"
#include "tpn/prox.hpp"

namespace tpn {

/// Decoder W^D with unit-norm columns (basis vectors).
template <typename Scalar>
struct Dictionary {
  Mat<Scalar> columns;  // n_x x n_z

  Eigen::Index n_x() const { return columns.rows(); }
  Eigen::Index n_z() const { return columns.cols(); }

  void normalize() { normalize_columns(columns); }

  static Dictionary random(Eigen::Index n_x, Eigen::Index n_z, Rng& rng) {
    Dictionary d{rng.normal_matrix<Scalar>(n_x, n_z)};
    d.normalize();
    return d;
  }
};

enum class EncoderFlavor { Tanh, DoubleTanh };

/// Feed-forward predictor of the optimal code:
///   tanh:        D tanh(W x + B)
///   double tanh: D (tanh(W x + B + U) + tanh(W x + B - U))
template <typename Scalar>
struct EncoderParams {
  Mat<Scalar> weights;  // n_z x n_x
  Vec<Scalar> gain;     // diagonal of D, >= 0
  Vec<Scalar> bias;
  Vec<Scalar> notch;    // U, >= 0; all entries equal when shared_notch
  bool shared_notch = true;
  EncoderFlavor flavor = EncoderFlavor::DoubleTanh;

  Eigen::Index n_z() const { return weights.rows(); }
  Eigen::Index n_x() const { return weights.cols(); }

  /// W = (W^D)^T, D = 1, B = 0, U = 0.5.
  static EncoderParams from_dictionary(const Dictionary<Scalar>& dict, EncoderFlavor flavor,
                                       Scalar notch = Scalar(0.5)) {
    EncoderParams e;
    e.weights = dict.columns.transpose();
    e.gain = Vec<Scalar>::Ones(dict.n_z());
    e.bias = Vec<Scalar>::Zero(dict.n_z());
    e.notch = Vec<Scalar>::Constant(dict.n_z(), notch);
    e.flavor = flavor;
    return e;
  }

  void clamp_constraints() {
    gain = gain.cwiseMax(Scalar(0));
    notch = notch.cwiseMax(Scalar(0));
    if (shared_notch && notch.size() > 0) notch.setConstant(notch.mean());
  }
};

template <typename Scalar>
struct PsdModel {
  Dictionary<Scalar> dict;
  EncoderParams<Scalar> encoder;

  static PsdModel random(Eigen::Index n_x, Eigen::Index n_z, EncoderFlavor flavor, Rng& rng) {
    PsdModel m;
    m.dict = Dictionary<Scalar>::random(n_x, n_z, rng);
    m.encoder = EncoderParams<Scalar>::from_dictionary(m.dict, flavor);
    return m;
  }
};

enum class SparsityKind { L1, Group };

/// Sparsity term used by inference and training. Group sparsity lays the code
/// out on `grid` and replaces alpha |z| with the pooled penalty.
struct SparsityConfig {
  SparsityKind kind = SparsityKind::L1;
  CellGrid grid;
  GroupSparsityConfig group;
};

// -- energies ---------------------------------------------------------------

template <typename Scalar>
void check_dims(const Vec<Scalar>& x, const Vec<Scalar>& z, const Dictionary<Scalar>& dict) {
  require(x.size() == dict.n_x(), "dimension mismatch: input vs dictionary rows");
  require(z.size() == dict.n_z(), "dimension mismatch: code vs dictionary columns");
}

/// |x - W z|^2 + alpha |z|_1
template <typename Scalar>
Scalar energy_sc(const Vec<Scalar>& x, const Vec<Scalar>& z, const Dictionary<Scalar>& dict, Scalar alpha) {
  check_dims(x, z, dict);
  return (x - dict.columns * z).squaredNorm() + alpha * z.template lpNorm<1>();
}

template <typename Scalar>
Vec<Scalar> encoder_preactivation(const Vec<Scalar>& x, const EncoderParams<Scalar>& enc) {
  require(x.size() == enc.n_x(), "dimension mismatch: input vs encoder columns");
  require(enc.gain.size() == enc.n_z() && enc.bias.size() == enc.n_z() && enc.notch.size() == enc.n_z(),
          "encoder parameter sizes disagree");
  return enc.weights * x + enc.bias;
}

/// Elementwise nonlinearity applied to the preactivation Y.
template <typename Scalar>
Vec<Scalar> encoder_nonlinearity(const Vec<Scalar>& y, const EncoderParams<Scalar>& enc) {
  if (enc.flavor == EncoderFlavor::Tanh) return enc.gain.cwiseProduct(y.array().tanh().matrix());
  const Vec<Scalar> plus = (y + enc.notch).array().tanh().matrix();
  const Vec<Scalar> minus = (y - enc.notch).array().tanh().matrix();
  return enc.gain.cwiseProduct(plus + minus);
}

template <typename Scalar>
Vec<Scalar> encode(const Vec<Scalar>& x, const EncoderParams<Scalar>& enc) {
  return encoder_nonlinearity(encoder_preactivation(x, enc), enc);
}

/// Sparsity term alpha |z| (L1) or the group penalty.
template <typename Scalar>
Scalar sparsity_penalty(const Vec<Scalar>& z, Scalar alpha, const SparsityConfig& sparsity) {
  if (sparsity.kind == SparsityKind::L1) return alpha * z.template lpNorm<1>();
  GroupSparsityConfig g = sparsity.group;
  g.alpha = static_cast<double>(alpha);
  return group_penalty(z, sparsity.grid, g);
}

/// |x - W z|^2 + |z - Enc(x)|^2 + alpha |z|_1
template <typename Scalar>
Scalar energy_psd(const Vec<Scalar>& x, const Vec<Scalar>& z, const Dictionary<Scalar>& dict,
                  const EncoderParams<Scalar>& enc, Scalar alpha) {
  check_dims(x, z, dict);
  require(enc.n_z() == dict.n_z(), "dimension mismatch: encoder vs dictionary code size");
  return (x - dict.columns * z).squaredNorm() + (z - encode(x, enc)).squaredNorm() +
         alpha * z.template lpNorm<1>();
}

// -- inference ----------------------------------------------------------------

namespace detail {

/// Smooth part |x - W z|^2 + w_pred |z - target|^2 with an L1 or group term.
template <typename Scalar>
class PatchProblem {
 public:
  PatchProblem(const Vec<Scalar>& x, const Dictionary<Scalar>& dict, const Vec<Scalar>* target, Scalar alpha,
               const SparsityConfig& sparsity)
      : x_(x), dict_(dict), target_(target), alpha_(alpha), sparsity_(sparsity) {
    if (sparsity_.kind == SparsityKind::Group) {
      require(sparsity_.grid.size() == dict.n_z(), "group sparsity grid does not match code size");
      sparsity_.group.alpha = static_cast<double>(alpha);
    }
  }

  Scalar smooth(const Vec<Scalar>& z, Vec<Scalar>* grad) const {
    const Vec<Scalar> r = dict_.columns * z - x_;
    Scalar f = r.squaredNorm();
    if (grad) *grad = Scalar(2) * dict_.columns.transpose() * r;
    if (target_) {
      const Vec<Scalar> d = z - *target_;
      f += d.squaredNorm();
      if (grad) *grad += Scalar(2) * d;
    }
    if (sparsity_.kind == SparsityKind::Group) {
      f += group_penalty(z, sparsity_.grid, sparsity_.group);
      if (grad) *grad += group_penalty_grad(z, sparsity_.grid, sparsity_.group);
    }
    return f;
  }

  Scalar penalty(const Vec<Scalar>& z) const {
    return sparsity_.kind == SparsityKind::L1 ? alpha_ * z.template lpNorm<1>() : Scalar(0);
  }

  Vec<Scalar> prox(const Vec<Scalar>& v, Scalar step) const {
    if (sparsity_.kind == SparsityKind::Group) return v;
    const Scalar t = alpha_ * step;
    return v.unaryExpr([t](Scalar e) { return soft_threshold(e, t); });
  }

  Vec<Scalar> subgradient(const Vec<Scalar>& z) const {
    if (sparsity_.kind == SparsityKind::Group) return Vec<Scalar>::Zero(z.size());
    return alpha_ * z.unaryExpr([](Scalar e) { return Scalar((e > 0) - (e < 0)); });
  }

 private:
  const Vec<Scalar>& x_;
  const Dictionary<Scalar>& dict_;
  const Vec<Scalar>* target_;
  Scalar alpha_;
  SparsityConfig sparsity_;
};

}  // namespace detail

/// Code minimizing |x - W z|^2 + alpha |z| starting from z0 (zero by default).
template <typename Scalar>
CodeState<Scalar> infer_code_sc(const Vec<Scalar>& x, const Dictionary<Scalar>& dict, const SparseHyper& hyper,
                                const SparsityConfig& sparsity = {},
                                const std::optional<Vec<Scalar>>& z0 = std::nullopt) {
  require(hyper.alpha > 0, "infer_code_sc: alpha must be positive");
  Vec<Scalar> init = z0 ? *z0 : Vec<Scalar>::Zero(dict.n_z());
  check_dims(x, init, dict);
  detail::PatchProblem<Scalar> problem(x, dict, nullptr, static_cast<Scalar>(hyper.alpha), sparsity);
  return minimize_composite<Scalar>(problem, std::move(init), hyper);
}

/// Minimizes the PSD energy starting from the encoder prediction (or z0).
template <typename Scalar>
CodeState<Scalar> infer_code_psd(const Vec<Scalar>& x, const Dictionary<Scalar>& dict,
                                 const EncoderParams<Scalar>& enc, const SparseHyper& hyper,
                                 const SparsityConfig& sparsity = {},
                                 const std::optional<Vec<Scalar>>& z0 = std::nullopt) {
  require(hyper.alpha > 0, "infer_code_psd: alpha must be positive");
  require(enc.n_z() == dict.n_z(), "dimension mismatch: encoder vs dictionary code size");
  const Vec<Scalar> prediction = encode(x, enc);
  Vec<Scalar> init = z0 ? *z0 : prediction;
  check_dims(x, init, dict);
  detail::PatchProblem<Scalar> problem(x, dict, &prediction, static_cast<Scalar>(hyper.alpha), sparsity);
  return minimize_composite<Scalar>(problem, std::move(init), hyper);
}

// -- gradients ----------------------------------------------------------------

/// Gradient of the smooth terms of the PSD energy with respect to z (the L1
/// term's subgradient is added with sign(0) = 0).
template <typename Scalar>
Vec<Scalar> energy_psd_code_gradient(const Vec<Scalar>& x, const Vec<Scalar>& z, const Dictionary<Scalar>& dict,
                                     const EncoderParams<Scalar>& enc, Scalar alpha) {
  const Vec<Scalar> sign = z.unaryExpr([](Scalar e) { return Scalar((e > 0) - (e < 0)); });
  return Scalar(2) * dict.columns.transpose() * (dict.columns * z - x) + Scalar(2) * (z - encode(x, enc)) +
         alpha * sign;
}

template <typename Scalar>
Vec<Scalar> energy_sc_code_gradient(const Vec<Scalar>& x, const Vec<Scalar>& z, const Dictionary<Scalar>& dict,
                                    Scalar alpha) {
  const Vec<Scalar> sign = z.unaryExpr([](Scalar e) { return Scalar((e > 0) - (e < 0)); });
  return Scalar(2) * dict.columns.transpose() * (dict.columns * z - x) + alpha * sign;
}

/// d |x - W z|^2 / dW = -2 (x - W z) z^T
template <typename Scalar>
Mat<Scalar> reconstruction_decoder_gradient(const Vec<Scalar>& x, const Vec<Scalar>& z,
                                            const Dictionary<Scalar>& dict) {
  return Scalar(-2) * (x - dict.columns * z) * z.transpose();
}

template <typename Scalar>
struct EncoderGradient {
  Mat<Scalar> weights;
  Vec<Scalar> gain;
  Vec<Scalar> bias;
  Vec<Scalar> notch;  // per unit; summed by the caller when the notch is shared
};

/// Gradient of |target - Enc(x)|^2 with respect to every encoder parameter.
template <typename Scalar>
EncoderGradient<Scalar> prediction_encoder_gradient(const Vec<Scalar>& x, const Vec<Scalar>& target,
                                                    const EncoderParams<Scalar>& enc) {
  const Vec<Scalar> y = encoder_preactivation(x, enc);
  const Vec<Scalar> residual = target - encoder_nonlinearity(y, enc);
  const Vec<Scalar> upstream = Scalar(-2) * residual;
  EncoderGradient<Scalar> g;
  Vec<Scalar> dy;
  if (enc.flavor == EncoderFlavor::Tanh) {
    const Vec<Scalar> t = y.array().tanh().matrix();
    g.gain = upstream.cwiseProduct(t);
    dy = upstream.cwiseProduct(enc.gain).cwiseProduct((Scalar(1) - t.array().square()).matrix());
    g.notch = Vec<Scalar>::Zero(y.size());
  } else {
    const Vec<Scalar> tp = (y + enc.notch).array().tanh().matrix();
    const Vec<Scalar> tm = (y - enc.notch).array().tanh().matrix();
    const Vec<Scalar> sp = (Scalar(1) - tp.array().square()).matrix();
    const Vec<Scalar> sm = (Scalar(1) - tm.array().square()).matrix();
    g.gain = upstream.cwiseProduct(tp + tm);
    const Vec<Scalar> scaled = upstream.cwiseProduct(enc.gain);
    dy = scaled.cwiseProduct(sp + sm);
    g.notch = scaled.cwiseProduct(sp - sm);
  }
  g.weights = dy * x.transpose();
  g.bias = dy;
  return g;
}

template <typename Scalar>
struct PsdGradients {
  Mat<Scalar> decoder;
  EncoderGradient<Scalar> encoder;
};

/// Gradient of E_psd(x, z, W^D, W) with respect to all trainable parameters at
/// fixed z. At the optimal code this is the gradient of F_psd.
template <typename Scalar>
PsdGradients<Scalar> energy_psd_parameter_gradients(const Vec<Scalar>& x, const Vec<Scalar>& z,
                                                    const PsdModel<Scalar>& model) {
  return {reconstruction_decoder_gradient(x, z, model.dict), prediction_encoder_gradient(x, z, model.encoder)};
}

// -- training -----------------------------------------------------------------

struct TrainHyper {
  double decoder_rate = 0.01;
  double encoder_rate = 0.01;
  /// Workers for per-sample inference; the reduction order is fixed.
  int threads = 1;
};

/// Per-step diagnostics averaged over the batch.
struct StepStats {
  double recon_err = 0;
  double pred_err = 0;
  double l1 = 0;
  double energy = 0;
  double iterations = 0;
};

template <typename Scalar>
void apply_encoder_step(EncoderParams<Scalar>& enc, const EncoderGradient<Scalar>& g, Scalar rate) {
  enc.weights -= rate * g.weights;
  enc.gain -= rate * g.gain;
  enc.bias -= rate * g.bias;
  if (enc.flavor == EncoderFlavor::DoubleTanh) {
    if (enc.shared_notch)
      enc.notch.array() -= rate * g.notch.sum();
    else
      enc.notch -= rate * g.notch;
  }
  enc.clamp_constraints();
}

/// One stochastic gradient step of PSD on a batch (columns of xs): infer z*
/// from the encoder prediction, step W^D, W^E, D, B, U on the batch-averaged
/// gradient of F_psd, then renormalize the dictionary columns.
template <typename Scalar>
StepStats train_step_psd(const Mat<Scalar>& xs, PsdModel<Scalar>& model, const SparseHyper& hyper,
                         const TrainHyper& train, const SparsityConfig& sparsity = {}) {
  require(xs.rows() == model.dict.n_x(), "train_step_psd: input size does not match model");
  require(xs.cols() > 0, "train_step_psd: empty batch");
  const Eigen::Index n = xs.cols();
  StepStats stats;
  Mat<Scalar> dec_grad = Mat<Scalar>::Zero(model.dict.n_x(), model.dict.n_z());
  EncoderGradient<Scalar> enc_grad{Mat<Scalar>::Zero(model.encoder.n_z(), model.encoder.n_x()),
                                   Vec<Scalar>::Zero(model.encoder.n_z()), Vec<Scalar>::Zero(model.encoder.n_z()),
                                   Vec<Scalar>::Zero(model.encoder.n_z())};
  std::vector<CodeState<Scalar>> codes(static_cast<std::size_t>(n));
  parallel_for(n, train.threads, [&](std::ptrdiff_t i) {
    codes[static_cast<std::size_t>(i)] =
        infer_code_psd(Vec<Scalar>(xs.col(i)), model.dict, model.encoder, hyper, sparsity);
  });
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec<Scalar> x = xs.col(i);
    const auto& code = codes[static_cast<std::size_t>(i)];
    const auto g = energy_psd_parameter_gradients(x, code.z, model);
    dec_grad += g.decoder;
    enc_grad.weights += g.encoder.weights;
    enc_grad.gain += g.encoder.gain;
    enc_grad.bias += g.encoder.bias;
    enc_grad.notch += g.encoder.notch;
    stats.recon_err += static_cast<double>((x - model.dict.columns * code.z).squaredNorm());
    stats.pred_err += static_cast<double>((code.z - encode(x, model.encoder)).squaredNorm());
    stats.l1 += static_cast<double>(code.z.template lpNorm<1>());
    stats.energy += static_cast<double>(code.energy);
    stats.iterations += code.iterations;
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(n);
  model.dict.columns -= static_cast<Scalar>(train.decoder_rate) * inv * dec_grad;
  model.dict.normalize();
  enc_grad.weights *= inv;
  enc_grad.gain *= inv;
  enc_grad.bias *= inv;
  enc_grad.notch *= inv;
  apply_encoder_step(model.encoder, enc_grad, static_cast<Scalar>(train.encoder_rate));
  stats.recon_err /= n;
  stats.pred_err /= n;
  stats.l1 /= n;
  stats.energy /= n;
  stats.iterations /= n;
  return stats;
}

/// Sparse-coding-only dictionary step on a batch: infer z* by minimizing
/// E_sc, step W^D on the averaged gradient of F_sc, renormalize columns.
template <typename Scalar>
StepStats train_dictionary_sc(const Mat<Scalar>& xs, Dictionary<Scalar>& dict, const SparseHyper& hyper,
                              const TrainHyper& train, const SparsityConfig& sparsity = {}) {
  require(xs.rows() == dict.n_x(), "train_dictionary_sc: input size does not match dictionary");
  require(xs.cols() > 0, "train_dictionary_sc: empty batch");
  const Eigen::Index n = xs.cols();
  StepStats stats;
  Mat<Scalar> grad = Mat<Scalar>::Zero(dict.n_x(), dict.n_z());
  std::vector<CodeState<Scalar>> codes(static_cast<std::size_t>(n));
  parallel_for(n, train.threads, [&](std::ptrdiff_t i) {
    codes[static_cast<std::size_t>(i)] = infer_code_sc(Vec<Scalar>(xs.col(i)), dict, hyper, sparsity);
  });
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec<Scalar> x = xs.col(i);
    const auto& code = codes[static_cast<std::size_t>(i)];
    grad += reconstruction_decoder_gradient(x, code.z, dict);
    stats.recon_err += static_cast<double>((x - dict.columns * code.z).squaredNorm());
    stats.l1 += static_cast<double>(code.z.template lpNorm<1>());
    stats.energy += static_cast<double>(code.energy);
    stats.iterations += code.iterations;
  }
  dict.columns -= static_cast<Scalar>(train.decoder_rate / static_cast<double>(n)) * grad;
  dict.normalize();
  stats.recon_err /= n;
  stats.l1 /= n;
  stats.energy /= n;
  stats.iterations /= n;
  return stats;
}

using DictionaryXd = Dictionary<double>;
using EncoderParamsXd = EncoderParams<double>;
using PsdModelXd = PsdModel<double>;
using CodeStateXd = CodeState<double>;

}  // namespace tpn
