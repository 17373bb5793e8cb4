#include "tpn/preprocess.hpp"

namespace tpn {

namespace {

void check_frame(const ImageFrame& frame) {
  if (frame.empty()) throw InvalidInput("preprocess: zero-sized frame");
  if (!frame.all_finite()) throw InvalidInput("preprocess: non-finite pixel values");
}

void check_config(const PreprocessConfig& cfg) {
  require(cfg.gaussian_width > 0, "preprocess: gaussian_width must be positive");
  require(cfg.cutoff > 0 || cfg.relative_cutoff > 0, "preprocess: cutoff must be positive");
}

std::vector<double> kernel_taps(double sigma) {
  const int radius = static_cast<int>(std::floor(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  for (int d = -radius; d <= radius; ++d) taps[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
  return taps;
}

// 1-D pass along rows (horizontal) or columns. Each output sample is divided
// by the tap mass that falls inside the frame.
PixelMatrix smooth_axis(const PixelMatrix& in, const std::vector<double>& taps, bool horizontal) {
  const int radius = static_cast<int>(taps.size() / 2);
  const Eigen::Index rows = in.rows();
  const Eigen::Index cols = in.cols();
  PixelMatrix out(rows, cols);
  const Eigen::Index len = horizontal ? cols : rows;
  for (Eigen::Index i = 0; i < len; ++i) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, i - radius);
    const Eigen::Index hi = std::min<Eigen::Index>(len - 1, i + radius);
    double mass = 0.0;
    for (Eigen::Index j = lo; j <= hi; ++j) mass += taps[j - i + radius];
    if (horizontal) {
      out.col(i).setZero();
      for (Eigen::Index j = lo; j <= hi; ++j) out.col(i) += taps[j - i + radius] * in.col(j);
      out.col(i) /= mass;
    } else {
      out.row(i).setZero();
      for (Eigen::Index j = lo; j <= hi; ++j) out.row(i) += taps[j - i + radius] * in.row(j);
      out.row(i) /= mass;
    }
  }
  return out;
}

}  // namespace

ImageFrame gaussian_local_mean(const ImageFrame& frame, double sigma) {
  check_frame(frame);
  require(sigma > 0, "gaussian_local_mean: sigma must be positive");
  const auto taps = kernel_taps(sigma);
  return ImageFrame(smooth_axis(smooth_axis(frame.pixels(), taps, true), taps, false));
}

ImageFrame gaussian_kernel_at(int width, int height, int x, int y, double sigma) {
  require(sigma > 0, "gaussian_kernel_at: sigma must be positive");
  require(x >= 0 && x < width && y >= 0 && y < height, "gaussian_kernel_at: center outside frame");
  const int radius = static_cast<int>(std::floor(3.0 * sigma));
  ImageFrame k(width, height, 0.0);
  double mass = 0.0;
  for (int qy = std::max(0, y - radius); qy <= std::min(height - 1, y + radius); ++qy)
    for (int qx = std::max(0, x - radius); qx <= std::min(width - 1, x + radius); ++qx) {
      const double dx = qx - x;
      const double dy = qy - y;
      const double w = std::exp(-0.5 * dx * dx / (sigma * sigma)) * std::exp(-0.5 * dy * dy / (sigma * sigma));
      k(qx, qy) = w;
      mass += w;
    }
  k.pixels() /= mass;
  return k;
}

ImageFrame local_mean_subtract(const ImageFrame& frame, const PreprocessConfig& cfg) {
  check_frame(frame);
  check_config(cfg);
  ImageFrame mean = gaussian_local_mean(frame, cfg.gaussian_width);
  return ImageFrame(PixelMatrix(frame.pixels() - mean.pixels()));
}

ImageFrame local_deviation(const ImageFrame& frame, double sigma) {
  check_frame(frame);
  const ImageFrame squared(PixelMatrix(frame.pixels().array().square()));
  const ImageFrame var = gaussian_local_mean(squared, sigma);
  return ImageFrame(PixelMatrix(var.pixels().array().max(0.0).sqrt()));
}

double resolve_cutoff(const ImageFrame& centered, const PreprocessConfig& cfg) {
  if (cfg.cutoff > 0) return cfg.cutoff;
  const auto& p = centered.pixels();
  const double mean = p.mean();
  const double var = (p.array() - mean).square().mean();
  return cfg.relative_cutoff * std::sqrt(var);
}

ImageFrame contrast_normalize(const ImageFrame& frame, const PreprocessConfig& cfg) {
  check_frame(frame);
  check_config(cfg);
  const ImageFrame sigma = local_deviation(frame, cfg.gaussian_width);
  const double c = resolve_cutoff(frame, cfg);
  PixelMatrix out(frame.height(), frame.width());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double s = sigma.pixels().data()[i];
    const double d = cfg.form == CutoffForm::Max ? std::max(s, c) : std::sqrt(s * s + c * c);
    const double v = frame.pixels().data()[i];
    // d == 0 only when the neighbourhood and the global deviation are both zero,
    // in which case v is zero as well.
    out.data()[i] = d > 0 ? v / d : 0.0;
  }
  return ImageFrame(std::move(out));
}

ImageFrame preprocess(const ImageFrame& frame, const PreprocessConfig& cfg) {
  ImageFrame centered = local_mean_subtract(frame, cfg);
  // rounding residue of a locally constant frame
  const double scale = frame.pixels().cwiseAbs().maxCoeff();
  if (centered.pixels().cwiseAbs().maxCoeff() <= 1e-10 * scale) {
    centered.pixels().setZero();
    return centered;
  }
  return contrast_normalize(centered, cfg);
}

}  // namespace tpn
