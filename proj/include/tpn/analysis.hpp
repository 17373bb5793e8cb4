#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "tpn/image.hpp"

namespace tpn {

/// A exp(-x'^2 / 2 sx^2 - y'^2 / 2 sy^2) cos(2 pi f x' + phase) + offset with
/// x' = (x - cx) cos t + (y - cy) sin t, y' = -(x - cx) sin t + (y - cy) cos t.
/// The orientation t is the wave-vector direction, reduced modulo pi.
struct GaborFit {
  double orientation = 0;
  double frequency = 0;  // cycles per pixel
  double phase = 0;
  double cx = 0;
  double cy = 0;
  double sigma_x = 1;  // along the wave vector
  double sigma_y = 1;
  double amplitude = 0;
  double offset = 0;
  double r2 = 0;
  bool degenerate = false;  // constant patch; parameters meaningless
};

/// Renders the Gabor model on a w x h grid.
ImageFrame gabor_patch(const GaborFit& g, int width, int height);

/// Least-squares Gabor fit: Fourier-peak, moment and linear initialization,
/// then Levenberg-Marquardt refinement from several starts.
GaborFit fit_gabor(const ImageFrame& filter);

struct FitGrid {
  int width = 0;
  int height = 0;
  std::vector<GaborFit> fits;  // row-major

  const GaborFit& at(int x, int y) const { return fits[static_cast<std::size_t>(y * width + x)]; }
};

inline constexpr double kValidFitR2 = 0.5;

void write_fits_csv(std::ostream& os, const FitGrid& grid);

/// Hue in [0, 1) for an orientation; theta and theta + pi share a hue.
double orientation_hue(double orientation);
void hsv_to_rgb(double h, double s, double v, std::uint8_t rgb[3]);
/// Inverse of the hue mapping for fully saturated colours.
double rgb_hue(const std::uint8_t rgb[3]);

/// One pixel block per cell, hue = orientation; fits below `min_r2` are grey.
RgbImage orientation_map(const FitGrid& grid, double min_r2 = kValidFitR2, int scale = 1);

struct ResponseRow {
  int cell;
  double orientation;
  double position;
  double activation;
};

using CodeFunction = std::function<Eigen::VectorXd(const ImageFrame&)>;

/// Feed-forward activations of every unit for edge stimuli over an
/// orientation x position grid.
std::vector<ResponseRow> response_profile(const CodeFunction& encode, int size, const std::vector<double>& orientations,
                                          const std::vector<double>& positions, double softness = 1.0,
                                          double amplitude = 1.0);

void write_response_csv(std::ostream& os, const std::vector<ResponseRow>& rows);

struct CellTuning {
  double preferred_orientation = 0;  // stimulus orientation with the largest |activation|
  double peak = 0;
  double position_fwhm = 0;  // full width at half max over position at that orientation
};

/// Tuning summary of one cell from a response table (|activation| is used).
CellTuning cell_tuning(const std::vector<ResponseRow>& rows, int cell);

struct ComplexCellParams {
  double orientation = 0;
  double frequency = 0;
  double resultant = 0;  // length of the weighted doubled-angle mean, in [0, 1]
  bool defined = false;
};

/// Per column of `decoder` (simple x complex), the connection-squared weighted
/// doubled-angle mean orientation and weighted mean frequency over simple
/// cells whose fit reaches `min_r2`.
std::vector<ComplexCellParams> complex_cell_params(const Eigen::MatrixXd& decoder, const std::vector<GaborFit>& fits,
                                                   double min_r2 = kValidFitR2);

/// Circular distance between orientations, in [0, pi / 2].
double orientation_distance(double a, double b);

struct TopographyOptions {
  double min_r2 = kValidFitR2;
  int permutations = 1000;
  std::uint64_t seed = 1;
  bool wrap = false;
};

struct TopographyScore {
  double score = 0;  // mean orientation distance over valid 4-neighbour pairs
  double p_value = 1;
  double permutation_mean = 0;
  double permutation_sd = 0;
  int valid_fits = 0;
  int pairs = 0;
  std::vector<double> permutation_scores;
};

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws InsufficientData with fewer than 10 valid fits or no valid pairs.
TopographyScore topography_score(const FitGrid& grid, const TopographyOptions& opt = {});

/// Fraction of the filter's squared weight inside the window shrunk by `margin`
/// pixels on every side.
double central_energy_fraction(const ImageFrame& filter, int margin);

struct InvarianceIndex {
  double var_x = 0;  // mean over rows of the variance across x
  double var_y = 0;  // mean over columns of the variance across y
  double ratio = 0;  // var_x / var_y
};

/// From a response map indexed (y, x) for one unit. The ratio is NaN when
/// the unit never varies.
InvarianceIndex invariance_index(const Eigen::MatrixXd& response);

}  // namespace tpn
