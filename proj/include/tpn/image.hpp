#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tpn/common.hpp"

namespace tpn {

using PixelMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A 2-D luminance grid. Pixel (x, y) is column x, row y; storage is row-major
/// so data() walks rows top to bottom.
class ImageFrame {
 public:
  ImageFrame() = default;
  ImageFrame(int width, int height, double fill = 0.0)
      : pixels_(PixelMatrix::Constant(height, width, fill)) {
    require(width >= 0 && height >= 0, "ImageFrame: negative size");
  }
  explicit ImageFrame(PixelMatrix pixels) : pixels_(std::move(pixels)) {}

  int width() const { return static_cast<int>(pixels_.cols()); }
  int height() const { return static_cast<int>(pixels_.rows()); }
  bool empty() const { return pixels_.size() == 0; }
  Eigen::Index size() const { return pixels_.size(); }

  double& operator()(int x, int y) { return pixels_(y, x); }
  double operator()(int x, int y) const { return pixels_(y, x); }

  PixelMatrix& pixels() { return pixels_; }
  const PixelMatrix& pixels() const { return pixels_; }

  Eigen::Map<const Eigen::VectorXd> flat() const { return {pixels_.data(), pixels_.size()}; }
  Eigen::Map<Eigen::VectorXd> flat() { return {pixels_.data(), pixels_.size()}; }

  bool all_finite() const { return pixels_.allFinite(); }

  /// Copy of the rectangle [x0, x0+w) x [y0, y0+h).
  ImageFrame crop(int x0, int y0, int w, int h) const {
    require(x0 >= 0 && y0 >= 0 && x0 + w <= width() && y0 + h <= height(),
            "ImageFrame::crop: rectangle outside frame");
    return ImageFrame(PixelMatrix(pixels_.block(y0, x0, h, w)));
  }

 private:
  PixelMatrix pixels_;
};

/// Binary 8-bit greyscale (P5). Values are mapped to [0, 1] on read.
ImageFrame read_pgm(const std::filesystem::path& path);

/// Writes P5 with values clamped from [lo, hi] to 0..255.
void write_pgm(const std::filesystem::path& path, const ImageFrame& frame, double lo = 0.0,
               double hi = 1.0);

/// Writes P5 with the frame's own min/max stretched to 0..255.
void write_pgm_autoscale(const std::filesystem::path& path, const ImageFrame& frame);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

/// Binary P6 pixmap.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

/// Tiles equally sized filters into a grid image with a one-pixel gap; each
/// filter is scaled symmetrically about zero by its own max |value|.
ImageFrame tile_filters(const std::vector<ImageFrame>& filters, int columns);

}  // namespace tpn
