#include "tpn/synth.hpp"

#include <numbers>

#include "tpn/preprocess.hpp"

namespace tpn {

ImageFrame gaussian_bump(int size, double width, int cx, int cy) {
  require(size > 0 && width > 0, "gaussian_bump: size and width must be positive");
  ImageFrame f(size, size, 0.0);
  const double inv = 1.0 / (2.0 * width * width);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      f(x, y) = std::exp(-(dx * dx + dy * dy) * inv);
    }
  return f;
}

MovingGaussian moving_gaussian(int frames, int size, double width, std::uint64_t seed) {
  require(frames >= 0, "moving_gaussian: negative frame count");
  require(size > 0 && width > 0, "moving_gaussian: size and width must be positive");
  Rng rng(seed);
  MovingGaussian out;
  int x = 0;
  int y = rng.below(size);
  for (int t = 0; t < frames; ++t) {
    out.frames.push_back(gaussian_bump(size, width, x, y));
    out.centers.push_back({x, y});
    if (++x >= size) {
      x = 0;
      y = rng.below(size);
    }
  }
  return out;
}

ShiftingWindow shifting_window(const ImageFrame& image, int window_w, int window_h, int frames, std::uint64_t seed,
                               int min_shift, int max_shift) {
  require(frames >= 0, "shifting_window: negative frame count");
  require(window_w > 0 && window_h > 0, "shifting_window: window must be non-empty");
  require(min_shift >= 1 && max_shift >= min_shift, "shifting_window: bad shift range");
  const int span_x = image.width() - window_w;
  const int span_y = image.height() - window_h;
  if (span_x < 0 || span_y < 0) throw InvalidInput("shifting_window: window exceeds image");
  if (frames > 1 && span_x < min_shift && span_y < min_shift)
    throw InvalidInput("shifting_window: image leaves no room for the window to move");
  Rng rng(seed);
  ShiftingWindow out;
  int x = rng.below(span_x + 1);
  int y = rng.below(span_y + 1);
  static constexpr int dirs[8][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
  for (int t = 0; t < frames; ++t) {
    out.frames.push_back(image.crop(x, y, window_w, window_h));
    out.positions.push_back({x, y});
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw InvalidInput("shifting_window: no valid step from current position");
      const int step = min_shift + rng.below(max_shift - min_shift + 1);
      const auto& d = dirs[rng.below(8)];
      const int nx = x + step * d[0];
      const int ny = y + step * d[1];
      if (nx >= 0 && ny >= 0 && nx <= span_x && ny <= span_y) {
        x = nx;
        y = ny;
        break;
      }
    }
  }
  return out;
}

ImageFrame edge_stimulus(double orientation, double position, int size, double softness, double amplitude) {
  require(size > 0 && softness > 0, "edge_stimulus: size and softness must be positive");
  const double half_diag = 0.5 * std::sqrt(2.0) * size;
  require(std::abs(position) <= half_diag, "edge_stimulus: position beyond the patch");
  // Fold the orientation into [0, pi) for the line, keep the half-turn as polarity.
  const double folded = std::fmod(std::fmod(orientation, 2 * std::numbers::pi) + 2 * std::numbers::pi,
                                  2 * std::numbers::pi);
  const bool flipped = folded >= std::numbers::pi;
  const double theta = flipped ? folded - std::numbers::pi : folded;
  const double polarity = flipped ? -1.0 : 1.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double center = 0.5 * (size - 1);
  ImageFrame f(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double n = (x - center) * c + (y - center) * s - position;
      f(x, y) = polarity * amplitude * (1.0 / (1.0 + std::exp(-n / softness)) - 0.5);
    }
  f.pixels().array() -= f.pixels().mean();
  return f;
}

ImageFrame rotate_frame(const ImageFrame& frame, double angle) {
  const int w = frame.width();
  const int h = frame.height();
  const double cx = 0.5 * (w - 1);
  const double cy = 0.5 * (h - 1);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  ImageFrame out(w, h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // inverse map: source = R(-angle) (dest - center)
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      double acc = 0.0;
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) {
          const int px = x0 + i;
          const int py = y0 + j;
          if (px < 0 || py < 0 || px >= w || py >= h) continue;
          acc += (i ? fx : 1 - fx) * (j ? fy : 1 - fy) * frame(px, py);
        }
      out(x, y) = acc;
    }
  return out;
}

ImageFrame dead_leaves_image(int width, int height, std::uint64_t seed, double min_radius, double max_radius) {
  require(width > 0 && height > 0, "dead_leaves_image: empty size");
  require(min_radius > 0 && max_radius >= min_radius, "dead_leaves_image: bad radius range");
  Rng rng(seed);
  ImageFrame img(width, height, 0.0);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> covered =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(height, width, false);
  Eigen::Index remaining = static_cast<Eigen::Index>(width) * height;
  // Leaves are drawn front to back: a pixel takes the first leaf that covers it.
  // Radii follow p(r) ~ r^-3 on [min, max], the scale-invariant choice.
  const double a = 1.0 / (min_radius * min_radius);
  const double b = 1.0 / (max_radius * max_radius);
  for (int leaf = 0; leaf < 200000 && remaining > 0; ++leaf) {
    const double r = 1.0 / std::sqrt(a - rng.uniform() * (a - b));
    const double cx = rng.uniform(-r, width + r);
    const double cy = rng.uniform(-r, height + r);
    const double grey = rng.uniform();
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (covered(y, x)) continue;
        const double dx = x - cx;
        const double dy = y - cy;
        if (dx * dx + dy * dy <= r * r) {
          img(x, y) = grey;
          covered(y, x) = true;
          --remaining;
        }
      }
  }
  return gaussian_local_mean(img, 0.7);
}

}  // namespace tpn
