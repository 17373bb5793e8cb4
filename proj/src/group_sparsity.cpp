#include "tpn/group_sparsity.hpp"

namespace tpn {

double group_scalar_minimizer(const PoolTracker& tracker, int j, double current, double a, double b) {
  if (b == 0.0) return 0.0;
  const double sign = b > 0 ? 1.0 : -1.0;
  const double target = std::abs(b);
  const auto& cfg = tracker.config();
  const auto& pools = tracker.pools();

  struct Term {
    double rest;  // eps + pool energy without unit j
    double g;
  };
  std::vector<Term> terms;
  tracker.for_each_pool_of(j, [&](int r, double g) {
    terms.push_back({cfg.epsilon + std::max(pools(r) - g * current * current, 0.0), g});
  });

  // derivative of the objective at v > 0, for b > 0 (sign folded out)
  auto slope = [&](double v) {
    double s = 2.0 * a * v - 2.0 * target;
    for (const auto& t : terms) {
      const double q = t.rest + t.g * v * v;
      s += q > 0 ? cfg.alpha * t.g * v / std::sqrt(q) : cfg.alpha * std::sqrt(t.g);
    }
    return s;
  };
  auto curvature = [&](double v) {
    double c = 2.0 * a;
    for (const auto& t : terms) {
      const double q = t.rest + t.g * v * v;
      if (q > 0) c += cfg.alpha * t.g * t.rest / (q * std::sqrt(q));
    }
    return c;
  };

  // slope at 0+: only pools that are exactly empty contribute a kink
  double kink = 0.0;
  for (const auto& t : terms)
    if (t.rest <= 0) kink += cfg.alpha * std::sqrt(t.g);
  if (-2.0 * target + kink >= 0) return 0.0;

  double lo = 0.0;
  double hi = target / a;
  double v = hi;
  for (int it = 0; it < 60; ++it) {
    const double d = slope(v);
    if (d > 0)
      hi = v;
    else
      lo = v;
    if (d == 0) break;
    double next = v - d / curvature(v);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - v) <= 1e-14 * (1.0 + std::abs(v))) {
      v = next;
      break;
    }
    v = next;
  }
  return sign * v;
}

}  // namespace tpn
