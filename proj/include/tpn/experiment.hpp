#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tpn/config.hpp"
#include "tpn/container.hpp"
#include "tpn/image.hpp"
#include "tpn/temporal_product.hpp"

namespace tpn {

/// Stages understood by run_stage / run_experiment.
const std::vector<std::string>& stage_names();

struct StageResult {
  std::map<std::string, std::string> summary;  // also written to summary.txt
  std::string report;                          // human-readable text for stdout
};

/// Runs one stage, writing artifacts into the existing directory `dir`.
/// Every parameter is read (and unknown keys rejected) before any work starts.
StageResult run_stage(const std::string& stage, Config& cfg, const std::filesystem::path& dir);

/// Runs a stage in a staging directory next to `out` and moves it into place
/// on success; on failure nothing is left behind. The resolved config is
/// written to config.resolved. An empty `out` runs in a scratch directory that
/// is removed afterwards.
StageResult run_experiment(const std::string& stage, Config cfg, const std::filesystem::path& out);

/// Keys recorded in model metadata as "config.<key>"; run-location and
/// threading keys are left out so identical runs give identical containers.
void stamp_config(Container& c, const Config& cfg);

/// Fraction of `truth` columns matched by some `learned` column at |cos| > threshold.
double recovery_fraction(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& learned, double threshold = 0.95);

/// Response maps of every TPN unit to a Gaussian bump held still at each
/// integer position of a size x size frame for the whole window, from the
/// inferred codes. Index [unit](y, x); z1 responses use the newest frame.
struct TpnResponseMaps {
  std::vector<Eigen::MatrixXd> z1;
  std::vector<Eigen::MatrixXd> z2;
};
TpnResponseMaps tpn_gaussian_responses(const TpnModelXd& model, int size, double width, const SparseHyper& hyper);

/// Median of var_x / var_y over units that respond at all (NaN if none do).
double median_invariance_ratio(const std::vector<Eigen::MatrixXd>& maps);

/// Lays filters out on a grid, each scaled to [-1, 1] by its peak magnitude,
/// with a one-pixel zero border.
ImageFrame filter_mosaic(const std::vector<ImageFrame>& filters, int columns);

}  // namespace tpn
