#include "tpn/analysis.hpp"

#include <Eigen/Cholesky>
#include <array>
#include <map>
#include <numbers>
#include <ostream>

#include "tpn/synth.hpp"

namespace tpn {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2 * kPi);
  if (a < 0) a += 2 * kPi;
  return a - kPi;
}

double mod_pi(double a) {
  double r = std::fmod(a, kPi);
  if (r < 0) r += kPi;
  if (r >= kPi) r -= kPi;
  return r;
}

// p = [A, cx, cy, theta, f, phase, log sx, log sy, offset]
using Params = Eigen::Matrix<double, 9, 1>;

struct GaborProblem {
  const PixelMatrix& target;
  int w;
  int h;

  // residuals model - target (row-major) and optionally the Jacobian
  void evaluate(const Params& p, Eigen::VectorXd& r, Eigen::Matrix<double, Eigen::Dynamic, 9>* jac) const {
    const double a = p(0), cx = p(1), cy = p(2), th = p(3), f = p(4), ph = p(5);
    const double sx = std::exp(p(6)), sy = std::exp(p(7));
    const double c = std::cos(th), s = std::sin(th);
    r.resize(w * h);
    if (jac) jac->resize(w * h, 9);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int i = y * w + x;
        const double dx = x - cx, dy = y - cy;
        const double xp = dx * c + dy * s;
        const double yp = -dx * s + dy * c;
        const double e = std::exp(-0.5 * (xp * xp / (sx * sx) + yp * yp / (sy * sy)));
        const double arg = 2 * kPi * f * xp + ph;
        const double cs = std::cos(arg), sn = std::sin(arg);
        r(i) = a * e * cs + p(8) - target(y, x);
        if (!jac) continue;
        const double g_xp = a * e * (-xp / (sx * sx) * cs - sn * 2 * kPi * f);
        const double g_yp = a * e * (-yp / (sy * sy)) * cs;
        auto row = jac->row(i);
        row(0) = e * cs;
        row(1) = g_xp * -c + g_yp * s;
        row(2) = g_xp * -s + g_yp * -c;
        row(3) = g_xp * yp + g_yp * -xp;
        row(4) = -a * e * sn * 2 * kPi * xp;
        row(5) = -a * e * sn;
        row(6) = a * e * cs * xp * xp / (sx * sx);
        row(7) = a * e * cs * yp * yp / (sy * sy);
        row(8) = 1.0;
      }
  }

  double cost(const Params& p) const {
    Eigen::VectorXd r;
    evaluate(p, r, nullptr);
    return r.squaredNorm();
  }

  void clamp(Params& p) const {
    const double lo = std::log(0.3);
    const double hi = std::log(2.0 * std::max(w, h));
    p(6) = std::clamp(p(6), lo, hi);
    p(7) = std::clamp(p(7), lo, hi);
    p(1) = std::clamp(p(1), -0.5 * w, 1.5 * w);
    p(2) = std::clamp(p(2), -0.5 * h, 1.5 * h);
    p(4) = std::clamp(p(4), -0.6, 0.6);
  }

  double levenberg_marquardt(Params& p, int max_iters = 200) const {
    clamp(p);
    Eigen::VectorXd r;
    Eigen::Matrix<double, Eigen::Dynamic, 9> jac;
    evaluate(p, r, &jac);
    double cost = r.squaredNorm();
    double lambda = 1e-3;
    for (int it = 0; it < max_iters; ++it) {
      const Eigen::Matrix<double, 9, 9> jtj = jac.transpose() * jac;
      const Params jtr = jac.transpose() * r;
      bool improved = false;
      while (lambda < 1e12) {
        Eigen::Matrix<double, 9, 9> lhs = jtj;
        lhs.diagonal() += lambda * (jtj.diagonal().array() + 1e-12).matrix();
        Params next = p - lhs.ldlt().solve(jtr);
        clamp(next);
        const double c2 = this->cost(next);
        if (std::isfinite(c2) && c2 < cost) {
          const double rel = (cost - c2) / std::max(cost, 1e-300);
          p = next;
          cost = c2;
          lambda = std::max(lambda / 3, 1e-12);
          improved = true;
          if (rel < 1e-12) return cost;
          break;
        }
        lambda *= 4;
      }
      if (!improved) break;
      evaluate(p, r, &jac);
    }
    return cost;
  }
};

struct Peak {
  double u;
  double v;
  double power;
};

// Local maxima of the zero-padded power spectrum over the half plane v >= 0.
std::vector<Peak> spectral_peaks(const PixelMatrix& x, int pad, std::size_t count) {
  const int h = static_cast<int>(x.rows());
  const int w = static_cast<int>(x.cols());
  const int nv = pad / 2 + 1;
  Eigen::MatrixXd power(nv, pad);
  // separable DFT: first along x for every row, then along y
  Eigen::MatrixXcd rows_ft(h, pad);
  for (int k = 0; k < pad; ++k) {
    const double u = static_cast<double>(k - pad / 2) / pad;
    for (int y = 0; y < h; ++y) {
      std::complex<double> acc = 0;
      for (int xx = 0; xx < w; ++xx) acc += x(y, xx) * std::polar(1.0, -2 * kPi * u * xx);
      rows_ft(y, k) = acc;
    }
  }
  for (int j = 0; j < nv; ++j) {
    const double v = static_cast<double>(j) / pad;
    for (int k = 0; k < pad; ++k) {
      std::complex<double> acc = 0;
      for (int y = 0; y < h; ++y) acc += rows_ft(y, k) * std::polar(1.0, -2 * kPi * v * y);
      power(j, k) = std::norm(acc);
    }
  }
  std::vector<Peak> peaks;
  for (int j = 0; j < nv; ++j)
    for (int k = 0; k < pad; ++k) {
      if (j == 0 && k <= pad / 2) continue;  // DC and the redundant half of the v = 0 row
      const double p = power(j, k);
      bool is_max = true;
      for (int dj = -1; dj <= 1 && is_max; ++dj)
        for (int dk = -1; dk <= 1; ++dk) {
          const int jj = j + dj, kk = k + dk;
          if ((dj == 0 && dk == 0) || jj < 0 || jj >= nv || kk < 0 || kk >= pad) continue;
          if (power(jj, kk) > p) {
            is_max = false;
            break;
          }
        }
      if (is_max) peaks.push_back({static_cast<double>(k - pad / 2) / pad, static_cast<double>(j) / pad, p});
    }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.power > b.power; });
  if (peaks.size() > count) peaks.resize(count);
  return peaks;
}

// Envelope from energy moments, then amplitude, phase and offset by linear least squares.
Params initial_params(const PixelMatrix& x, double theta, double f, double sigma_scale) {
  const int h = static_cast<int>(x.rows());
  const int w = static_cast<int>(x.cols());
  const PixelMatrix e = x.array().square();
  const double total = e.sum();
  double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  if (total > 0) {
    cx = cy = 0;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        cx += e(y, xx) * xx;
        cy += e(y, xx) * y;
      }
    cx /= total;
    cy /= total;
  }
  const double c = std::cos(theta), s = std::sin(theta);
  double vx = 0, vy = 0;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      const double xp = (xx - cx) * c + (y - cy) * s;
      const double yp = -(xx - cx) * s + (y - cy) * c;
      vx += e(y, xx) * xp * xp;
      vy += e(y, xx) * yp * yp;
    }
  if (total > 0) {
    vx /= total;
    vy /= total;
  }
  const double lim = std::max(w, h);
  const double sx = std::clamp(sigma_scale * std::sqrt(2 * vx), 0.7, lim);
  const double sy = std::clamp(sigma_scale * std::sqrt(2 * vy), 0.7, lim);

  Eigen::MatrixXd basis(w * h, 3);
  Eigen::VectorXd t(w * h);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      const int i = y * w + xx;
      const double xp = (xx - cx) * c + (y - cy) * s;
      const double yp = -(xx - cx) * s + (y - cy) * c;
      const double env = std::exp(-0.5 * (xp * xp / (sx * sx) + yp * yp / (sy * sy)));
      basis(i, 0) = env * std::cos(2 * kPi * f * xp);
      basis(i, 1) = env * std::sin(2 * kPi * f * xp);
      basis(i, 2) = 1.0;
      t(i) = x(y, xx);
    }
  const Eigen::Vector3d coef = basis.colPivHouseholderQr().solve(t);
  Params p;
  p << std::hypot(coef(0), coef(1)), cx, cy, theta, f, std::atan2(-coef(1), coef(0)), std::log(sx), std::log(sy),
      coef(2);
  return p;
}

GaborFit canonical(const Params& p) {
  GaborFit g;
  double a = p(0), th = p(3), f = p(4), ph = p(5);
  if (a < 0) {
    a = -a;
    ph += kPi;
  }
  if (f < 0) {
    f = -f;
    th += kPi;
    ph = -ph;
  }
  th = std::fmod(th, 2 * kPi);
  if (th < 0) th += 2 * kPi;
  if (th >= kPi) {
    th -= kPi;
    ph = -ph;
  }
  g.amplitude = a;
  g.orientation = mod_pi(th);
  g.frequency = f;
  g.phase = wrap_angle(ph);
  g.cx = p(1);
  g.cy = p(2);
  g.sigma_x = std::exp(p(6));
  g.sigma_y = std::exp(p(7));
  g.offset = p(8);
  return g;
}

}  // namespace

ImageFrame gabor_patch(const GaborFit& g, int width, int height) {
  require(width > 0 && height > 0, "gabor_patch: empty size");
  ImageFrame out(width, height);
  const double c = std::cos(g.orientation), s = std::sin(g.orientation);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double dx = x - g.cx, dy = y - g.cy;
      const double xp = dx * c + dy * s;
      const double yp = -dx * s + dy * c;
      const double e = std::exp(-0.5 * (xp * xp / (g.sigma_x * g.sigma_x) + yp * yp / (g.sigma_y * g.sigma_y)));
      out(x, y) = g.amplitude * e * std::cos(2 * kPi * g.frequency * xp + g.phase) + g.offset;
    }
  return out;
}

GaborFit fit_gabor(const ImageFrame& filter) {
  require(filter.width() >= 5 && filter.height() >= 5, "fit_gabor: patch must be at least 5x5");
  require(filter.all_finite(), "fit_gabor: non-finite weights");
  const PixelMatrix& x = filter.pixels();
  const double mean = x.mean();
  const PixelMatrix centered = x.array() - mean;
  const double ss_tot = centered.squaredNorm();
  const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
  if (ss_tot <= 1e-24 * scale * scale * static_cast<double>(x.size())) {
    GaborFit g;
    g.offset = mean;
    g.cx = 0.5 * (filter.width() - 1);
    g.cy = 0.5 * (filter.height() - 1);
    g.degenerate = true;
    return g;
  }

  GaborProblem problem{x, filter.width(), filter.height()};
  const auto peaks = spectral_peaks(centered, 64, 3);
  Params best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto& pk : peaks) {
    const double theta = std::atan2(pk.v, pk.u);
    const double f = std::hypot(pk.u, pk.v);
    for (double sigma_scale : {1.0, 0.6}) {
      Params p = initial_params(centered, theta, f, sigma_scale);
      p(8) += mean;
      const double cost = problem.levenberg_marquardt(p);
      if (cost < best_cost) {
        best_cost = cost;
        best = p;
      }
    }
  }
  GaborFit g = canonical(best);
  g.r2 = std::clamp(1.0 - best_cost / ss_tot, 0.0, 1.0);
  return g;
}

void write_fits_csv(std::ostream& os, const FitGrid& grid) {
  os << "cell,x,y,orientation,frequency,phase,cx,cy,sigma_x,sigma_y,amplitude,offset,r2,degenerate\n";
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const auto& g = grid.at(x, y);
      os << y * grid.width + x << ',' << x << ',' << y << ',' << g.orientation << ',' << g.frequency << ',' << g.phase
         << ',' << g.cx << ',' << g.cy << ',' << g.sigma_x << ',' << g.sigma_y << ',' << g.amplitude << ','
         << g.offset << ',' << g.r2 << ',' << (g.degenerate ? 1 : 0) << '\n';
    }
}

double orientation_hue(double orientation) { return mod_pi(orientation) / kPi; }

void hsv_to_rgb(double h, double s, double v, std::uint8_t rgb[3]) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  auto byte = [](double c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); };
  rgb[0] = byte(r);
  rgb[1] = byte(g);
  rgb[2] = byte(b);
}

double rgb_hue(const std::uint8_t rgb[3]) {
  const double r = rgb[0] / 255.0, g = rgb[1] / 255.0, b = rgb[2] / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  if (d <= 0) return 0.0;
  double h;
  if (mx == r)
    h = std::fmod((g - b) / d + 6.0, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  return h / 6.0;
}

RgbImage orientation_map(const FitGrid& grid, double min_r2, int scale) {
  require(scale >= 1, "orientation_map: scale must be positive");
  require(static_cast<int>(grid.fits.size()) == grid.width * grid.height, "orientation_map: grid size mismatch");
  RgbImage img;
  img.width = grid.width * scale;
  img.height = grid.height * scale;
  img.rgb.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const auto& g = grid.at(x, y);
      std::uint8_t c[3];
      if (g.degenerate || g.r2 < min_r2)
        hsv_to_rgb(orientation_hue(g.orientation), 0.0, 0.5, c);
      else
        hsv_to_rgb(orientation_hue(g.orientation), 1.0, 1.0, c);
      for (int j = 0; j < scale; ++j)
        for (int i = 0; i < scale; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(y * scale + j) * img.width + x * scale + i) * 3;
          std::copy(c, c + 3, img.rgb.begin() + static_cast<std::ptrdiff_t>(idx));
        }
    }
  return img;
}

std::vector<ResponseRow> response_profile(const CodeFunction& encode, int size, const std::vector<double>& orientations,
                                          const std::vector<double>& positions, double softness, double amplitude) {
  std::vector<ResponseRow> rows;
  for (double th : orientations)
    for (double pos : positions) {
      const Eigen::VectorXd code = encode(edge_stimulus(th, pos, size, softness, amplitude));
      for (Eigen::Index c = 0; c < code.size(); ++c) rows.push_back({static_cast<int>(c), th, pos, code(c)});
    }
  std::stable_sort(rows.begin(), rows.end(), [](const ResponseRow& a, const ResponseRow& b) { return a.cell < b.cell; });
  return rows;
}

void write_response_csv(std::ostream& os, const std::vector<ResponseRow>& rows) {
  os << "cell,orientation,position,activation\n";
  for (const auto& r : rows) os << r.cell << ',' << r.orientation << ',' << r.position << ',' << r.activation << '\n';
}

CellTuning cell_tuning(const std::vector<ResponseRow>& rows, int cell) {
  CellTuning t;
  bool found = false;
  for (const auto& r : rows)
    if (r.cell == cell && (!found || std::abs(r.activation) > t.peak)) {
      t.peak = std::abs(r.activation);
      t.preferred_orientation = r.orientation;
      found = true;
    }
  if (!found) throw InvalidInput("cell_tuning: no rows for cell");
  std::vector<std::pair<double, double>> curve;
  for (const auto& r : rows)
    if (r.cell == cell && r.orientation == t.preferred_orientation) curve.emplace_back(r.position, std::abs(r.activation));
  std::sort(curve.begin(), curve.end());
  if (t.peak <= 0 || curve.size() < 2) return t;
  const double half = 0.5 * t.peak;
  std::size_t top = 0;
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (curve[i].second > curve[top].second) top = i;
  auto crossing = [&](std::size_t inside, std::size_t outside) {
    const auto& [p0, a0] = curve[inside];
    const auto& [p1, a1] = curve[outside];
    return p0 + (p1 - p0) * (a0 - half) / (a0 - a1);
  };
  std::size_t lo = top, hi = top;
  while (lo > 0 && curve[lo - 1].second >= half) --lo;
  while (hi + 1 < curve.size() && curve[hi + 1].second >= half) ++hi;
  const double left = lo > 0 ? crossing(lo, lo - 1) : curve.front().first;
  const double right = hi + 1 < curve.size() ? crossing(hi, hi + 1) : curve.back().first;
  t.position_fwhm = right - left;
  return t;
}

std::vector<ComplexCellParams> complex_cell_params(const Eigen::MatrixXd& decoder, const std::vector<GaborFit>& fits,
                                                   double min_r2) {
  require(static_cast<std::size_t>(decoder.rows()) == fits.size(), "complex_cell_params: one fit per simple cell required");
  std::vector<ComplexCellParams> out(static_cast<std::size_t>(decoder.cols()));
  for (Eigen::Index k = 0; k < decoder.cols(); ++k) {
    double total = 0, c = 0, s = 0, f = 0;
    for (Eigen::Index i = 0; i < decoder.rows(); ++i) {
      const auto& g = fits[static_cast<std::size_t>(i)];
      if (g.degenerate || g.r2 < min_r2) continue;
      const double w = decoder(i, k) * decoder(i, k);
      total += w;
      c += w * std::cos(2 * g.orientation);
      s += w * std::sin(2 * g.orientation);
      f += w * g.frequency;
    }
    auto& p = out[static_cast<std::size_t>(k)];
    if (total <= 0) continue;
    p.resultant = std::hypot(c, s) / total;
    p.frequency = f / total;
    if (p.resultant < 1e-9) continue;
    p.orientation = mod_pi(0.5 * std::atan2(s, c));
    p.defined = true;
  }
  return out;
}

double orientation_distance(double a, double b) {
  const double d = std::abs(wrap_angle(2 * (a - b)));
  return 0.5 * d;
}

TopographyScore topography_score(const FitGrid& grid, const TopographyOptions& opt) {
  require(static_cast<int>(grid.fits.size()) == grid.width * grid.height, "topography_score: grid size mismatch");
  require(opt.permutations >= 1, "topography_score: need at least one permutation");
  const int n = grid.width * grid.height;
  std::vector<int> slot(static_cast<std::size_t>(n), -1);  // cell -> index into the valid list
  std::vector<double> theta;
  for (int i = 0; i < n; ++i) {
    const auto& g = grid.fits[static_cast<std::size_t>(i)];
    if (!g.degenerate && g.r2 >= opt.min_r2) {
      slot[static_cast<std::size_t>(i)] = static_cast<int>(theta.size());
      theta.push_back(g.orientation);
    }
  }
  TopographyScore out;
  out.valid_fits = static_cast<int>(theta.size());
  if (out.valid_fits < 10) throw InsufficientData("topography_score: fewer than 10 valid fits");
  std::vector<std::pair<int, int>> pairs;
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const int a = slot[static_cast<std::size_t>(y * grid.width + x)];
      if (a < 0) continue;
      const std::array<std::pair<int, int>, 2> nbrs{{{x + 1, y}, {x, y + 1}}};
      for (auto [nx, ny] : nbrs) {
        if (opt.wrap) {
          if ((nx == grid.width && grid.width < 3) || (ny == grid.height && grid.height < 3)) continue;
          nx %= grid.width;
          ny %= grid.height;
        } else if (nx >= grid.width || ny >= grid.height) {
          continue;
        }
        const int b = slot[static_cast<std::size_t>(ny * grid.width + nx)];
        if (b >= 0) pairs.emplace_back(a, b);
      }
    }
  out.pairs = static_cast<int>(pairs.size());
  if (pairs.empty()) throw InsufficientData("topography_score: no neighbouring valid fits");
  auto score = [&](const std::vector<double>& t) {
    double acc = 0;
    for (auto [a, b] : pairs) acc += orientation_distance(t[static_cast<std::size_t>(a)], t[static_cast<std::size_t>(b)]);
    return acc / static_cast<double>(pairs.size());
  };
  out.score = score(theta);
  Rng rng(opt.seed);
  std::vector<double> shuffled = theta;
  int at_most = 0;
  double sum = 0, sum2 = 0;
  out.permutation_scores.reserve(static_cast<std::size_t>(opt.permutations));
  for (int k = 0; k < opt.permutations; ++k) {
    rng.shuffle(shuffled.begin(), shuffled.end());
    const double s = score(shuffled);
    out.permutation_scores.push_back(s);
    if (s <= out.score) ++at_most;
    sum += s;
    sum2 += s * s;
  }
  const double m = sum / opt.permutations;
  out.permutation_mean = m;
  out.permutation_sd = std::sqrt(std::max(0.0, sum2 / opt.permutations - m * m));
  out.p_value = (1.0 + at_most) / (1.0 + opt.permutations);
  return out;
}

double central_energy_fraction(const ImageFrame& filter, int margin) {
  require(margin >= 0 && 2 * margin < filter.width() && 2 * margin < filter.height(),
          "central_energy_fraction: margin leaves no window");
  const double total = filter.pixels().squaredNorm();
  if (total <= 0) return 0.0;
  const double inner = filter.pixels()
                           .block(margin, margin, filter.height() - 2 * margin, filter.width() - 2 * margin)
                           .squaredNorm();
  return inner / total;
}

InvarianceIndex invariance_index(const Eigen::MatrixXd& response) {
  require(response.rows() >= 2 && response.cols() >= 2, "invariance_index: need at least a 2x2 response map");
  auto var = [](const auto& v) {
    const double m = v.mean();
    return (v.array() - m).square().mean();
  };
  InvarianceIndex r;
  for (Eigen::Index y = 0; y < response.rows(); ++y) r.var_x += var(response.row(y));
  for (Eigen::Index x = 0; x < response.cols(); ++x) r.var_y += var(response.col(x));
  r.var_x /= static_cast<double>(response.rows());
  r.var_y /= static_cast<double>(response.cols());
  r.ratio = r.var_y > 0 ? r.var_x / r.var_y : (r.var_x > 0 ? std::numeric_limits<double>::infinity()
                                                             : std::numeric_limits<double>::quiet_NaN());
  return r;
}

}  // namespace tpn
