#pragma once

#include <vector>

#include "tpn/common.hpp"

namespace tpn {

enum class InferenceMethod {
  Proximal,    ///< ISTA-style proximal gradient with backtracking
  Subgradient  ///< plain gradient descent, sign(0) = 0, backtracking on the full energy
};

struct SparseHyper {
  double alpha = 0.5;
  int max_iters = 100;
  /// Initial step; shrunk by backtracking and carried across iterations.
  double step_size = 1.0;
  /// Relative energy change that counts as converged.
  double tolerance = 1e-6;
  InferenceMethod method = InferenceMethod::Proximal;
  bool record_trace = false;
};

template <typename Scalar>
struct CodeState {
  Vec<Scalar> z;
  Scalar energy = 0;
  int iterations = 0;
  bool converged = false;
  /// Energy before the first step and after every accepted step, when requested.
  std::vector<Scalar> energy_trace;
};

/// Composite objective F(z) = f(z) + g(z) minimized by proximal gradient.
///
/// Problem must provide
///   Scalar smooth(const Vec& z, Vec* grad) const;   // f and optionally its gradient
///   Scalar penalty(const Vec& z) const;             // g
///   Vec prox(const Vec& v, Scalar step) const;      // argmin_u g(u) + |u - v|^2 / (2 step)
///   Vec subgradient(const Vec& z) const;            // element of dg, used by the subgradient method
///
/// Every accepted step satisfies F(z+) <= F(z); the step is halved until the
/// quadratic upper-bound condition and the descent condition both hold.
template <typename Scalar, typename Problem>
CodeState<Scalar> minimize_composite(const Problem& problem, Vec<Scalar> z, const SparseHyper& hyper) {
  require(hyper.step_size > 0, "minimize_composite: step_size must be positive");
  require(hyper.max_iters >= 0, "minimize_composite: negative max_iters");
  CodeState<Scalar> state;
  Vec<Scalar> grad(z.size());
  Scalar f = problem.smooth(z, &grad);
  Scalar energy = f + problem.penalty(z);
  if (hyper.record_trace) state.energy_trace.push_back(energy);

  constexpr Scalar min_step = Scalar(1e-30);
  Scalar step = static_cast<Scalar>(hyper.step_size);
  const Scalar tol = static_cast<Scalar>(hyper.tolerance);
  int it = 0;
  bool converged = false;
  Vec<Scalar> trial_grad(z.size());
  for (; it < hyper.max_iters; ++it) {
    Vec<Scalar> trial;
    Scalar trial_f = 0;
    Scalar trial_energy = 0;
    bool accepted = false;
    if (hyper.method == InferenceMethod::Proximal) {
      while (step >= min_step) {
        trial = problem.prox(z - step * grad, step);
        const Vec<Scalar> d = trial - z;
        trial_f = problem.smooth(trial, nullptr);
        trial_energy = trial_f + problem.penalty(trial);
        const Scalar bound = f + grad.dot(d) + d.squaredNorm() / (2 * step);
        if (trial_f <= bound + Scalar(1e-12) * std::abs(bound) && trial_energy <= energy) {
          accepted = true;
          break;
        }
        step *= Scalar(0.5);
      }
    } else {
      const Vec<Scalar> direction = grad + problem.subgradient(z);
      while (step >= min_step) {
        trial = z - step * direction;
        trial_f = problem.smooth(trial, nullptr);
        trial_energy = trial_f + problem.penalty(trial);
        if (trial_energy <= energy) {
          accepted = true;
          break;
        }
        step *= Scalar(0.5);
      }
    }
    if (!accepted) {
      // No descent possible at any step length: z is stationary to working precision.
      converged = true;
      break;
    }
    const Scalar change = energy - trial_energy;
    const bool moved = (trial - z).squaredNorm() > 0;
    z = std::move(trial);
    f = problem.smooth(z, &grad);
    energy = f + problem.penalty(z);
    if (hyper.record_trace) state.energy_trace.push_back(energy);
    if (hyper.method == InferenceMethod::Subgradient) step *= Scalar(2);
    if (!moved || change <= tol * std::max(std::abs(energy), Scalar(1e-30))) {
      converged = true;
      ++it;
      break;
    }
  }
  state.z = std::move(z);
  state.energy = energy;
  state.iterations = it;
  state.converged = converged;
  return state;
}

}  // namespace tpn
