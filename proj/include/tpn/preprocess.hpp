#pragma once

#include "tpn/image.hpp"

namespace tpn {

enum class CutoffForm {
  Max,        ///< d = max(sigma, c)
  Quadrature  ///< d = sqrt(sigma^2 + c^2)
};

struct PreprocessConfig {
  /// Gaussian sigma in pixels, used for both the mean and the deviation.
  double gaussian_width = 11.3;
  /// Absolute cutoff c. When not positive, c = relative_cutoff * (global
  /// standard deviation of the mean-subtracted frame).
  double cutoff = 0.0;
  double relative_cutoff = 0.1;
  CutoffForm form = CutoffForm::Max;
};

/// Gaussian-weighted neighbourhood average. The kernel is truncated at
/// +-3 sigma and renormalized over the in-bounds part of its support.
ImageFrame gaussian_local_mean(const ImageFrame& frame, double sigma);

/// Per-pixel weights k(q - p) of the normalized truncated kernel centered on
/// (x, y). Row-major, same size as the frame; zero outside the support.
ImageFrame gaussian_kernel_at(int width, int height, int x, int y, double sigma);

ImageFrame local_mean_subtract(const ImageFrame& frame, const PreprocessConfig& cfg);

/// Gaussian-weighted local standard deviation of a mean-subtracted frame.
ImageFrame local_deviation(const ImageFrame& frame, double sigma);

/// Resolves the cutoff actually applied to a mean-subtracted frame.
double resolve_cutoff(const ImageFrame& centered, const PreprocessConfig& cfg);

ImageFrame contrast_normalize(const ImageFrame& frame, const PreprocessConfig& cfg);

ImageFrame preprocess(const ImageFrame& frame, const PreprocessConfig& cfg);

}  // namespace tpn
