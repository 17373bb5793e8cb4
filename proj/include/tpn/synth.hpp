#pragma once

#include <cstdint>
#include <vector>

#include "tpn/image.hpp"

namespace tpn {

struct GaussianFrameInfo {
  int x;
  int y;
};

struct MovingGaussian {
  std::vector<ImageFrame> frames;
  std::vector<GaussianFrameInfo> centers;
};

/// Unit-peak Gaussian bump of the given width centered on integer pixel
/// (cx, cy), truncated at the frame edge.
ImageFrame gaussian_bump(int size, double width, int cx, int cy);

/// Bump moving right by one pixel per frame; once its center leaves the frame
/// it restarts at x = 0 on a uniformly drawn row.
MovingGaussian moving_gaussian(int frames, int size, double width, std::uint64_t seed);

struct WindowPosition {
  int x;
  int y;
};

struct ShiftingWindow {
  std::vector<ImageFrame> frames;
  std::vector<WindowPosition> positions;  // top-left corner of each window
};

/// Pseudo-video over a still image: a random walk of window positions with
/// steps of 1 or 2 pixels toward one of the 8 neighbours. Steps that would
/// leave the image are redrawn.
ShiftingWindow shifting_window(const ImageFrame& image, int window_w, int window_h, int frames, std::uint64_t seed,
                               int min_shift = 1, int max_shift = 2);

/// Straight step edge through the patch center offset by `position` pixels
/// along its normal (cos t, sin t), profile logistic((n - position) / softness),
/// scaled by `amplitude` and made exactly zero-mean. Orientations t and t + pi
/// describe the same line with opposite polarity.
ImageFrame edge_stimulus(double orientation, double position, int size, double softness = 1.0,
                         double amplitude = 1.0);

/// Rotates a frame about its center by `angle` radians (bilinear, zero outside).
ImageFrame rotate_frame(const ImageFrame& frame, double angle);

/// Dead-leaves test image: occluding discs with power-law radii and uniform
/// grey levels, lightly blurred. Used as a stand-in for natural photographs.
ImageFrame dead_leaves_image(int width, int height, std::uint64_t seed, double min_radius = 2.0,
                             double max_radius = 40.0);

}  // namespace tpn
