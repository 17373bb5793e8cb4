#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "tpn/image.hpp"
#include "tpn/sparse_model.hpp"

namespace tpn {

/// Simple cells per pixel along one axis: an integer k or a fraction 1/k.
struct Density {
  int num = 1;
  int den = 1;

  static Density over(int k) { return {k, 1}; }
  static Density under(int k) { return {1, k}; }
  double value() const { return static_cast<double>(num) / den; }
  bool operator==(const Density&) const = default;
};

/// Geometry of a locally connected layer. Periods are in pixels (0 = no
/// sharing); a period T shares weights between cells T * rho apart.
struct LocalTopology {
  int image_w = 0;
  int image_h = 0;
  int patch_w = 0;
  int patch_h = 0;
  Density rho_x;
  Density rho_y;
  int period_x = 0;
  int period_y = 0;

  int cells_x() const { return image_w * rho_x.num / rho_x.den; }
  int cells_y() const { return image_h * rho_y.num / rho_y.den; }
  int unit_count() const { return cells_x() * cells_y(); }
  bool periodic() const { return period_x > 0 && period_y > 0; }
  int cell_period_x() const { return period_x * rho_x.num / rho_x.den; }
  int cell_period_y() const { return period_y * rho_y.num / rho_y.den; }
  /// Overcompleteness C = rho_x * rho_y.
  double overcompleteness() const { return rho_x.value() * rho_y.value(); }

  /// Throws InvalidInput unless densities are k or 1/k, the cell grid and the
  /// cell periods are integral, and every receptive field is non-empty.
  void validate() const;

  bool operator==(const LocalTopology&) const = default;
};

/// Pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0;
  int x1 = 0;
  int y0 = 0;
  int y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  int area() const { return width() * height(); }
  bool operator==(const Rect&) const = default;
};

/// m_i = max(floor(s_i / rho_i - P_i / 2), 0), m'_i = min(floor(s_i / rho_i + P_i / 2), N_i).
Rect receptive_field(int sx, int sy, const LocalTopology& topo);

/// Weights of one filter slot, laid out row-major over its receptive field.
struct FilterSlot {
  int width = 0;
  int height = 0;
  Eigen::VectorXd decoder;  // unit norm over the (possibly clipped) support
  Eigen::VectorXd encoder;
  double gain = 1.0;
  double bias = 0.0;
  bool boundary = false;

  ImageFrame decoder_image() const;
  ImageFrame encoder_image() const;
};

struct UnitInfo {
  Rect rf;
  int slot = 0;
  bool boundary = false;
};

struct ConnectionCount {
  long long nominal = 0;  // units * P_x * P_y, i.e. C N^2 P^2 for square layers
  long long actual = 0;   // receptive-field areas after clipping
};

/// Locally connected PSD layer with periodic tile sharing for bulk units and
/// private weights for boundary units.
class LocalNet {
 public:
  LocalNet() = default;

  /// Random unit-norm decoders, encoder = decoder, gain 1, bias 0, notch 0.5.
  static LocalNet create(const LocalTopology& topo, EncoderFlavor flavor, Rng& rng);

  const LocalTopology& topology() const { return topo_; }
  EncoderFlavor flavor() const { return flavor_; }
  void set_flavor(EncoderFlavor f) { flavor_ = f; }
  double notch() const { return notch_; }
  void set_notch(double u) { notch_ = std::max(0.0, u); }

  int unit_index(int sx, int sy) const { return sy * topo_.cells_x() + sx; }
  const UnitInfo& unit(int index) const { return units_[static_cast<std::size_t>(index)]; }
  const std::vector<UnitInfo>& units() const { return units_; }

  /// Shared tile filter for bulk units, private filter for boundary units.
  /// Bulk units whose coordinates differ by tile multiples get the same storage.
  const FilterSlot& weight_lookup(int sx, int sy) const;
  FilterSlot& weight_lookup(int sx, int sy);

  std::vector<FilterSlot>& slots() { return slots_; }
  const std::vector<FilterSlot>& slots() const { return slots_; }
  /// Slots [0, tile_slot_count) form the periodic tile (row-major over the
  /// cell period); the rest belong to boundary units.
  int tile_slot_count() const { return tile_slots_; }
  /// Tile slot index for a tile coordinate, valid for periodic topologies.
  int tile_slot(int tx, int ty) const { return ty * topo_.cell_period_x() + tx; }

  ConnectionCount connections() const;
  long long weight_count() const;
  std::string describe() const;

  void normalize_decoders();

 private:
  void build_layout();

  LocalTopology topo_;
  EncoderFlavor flavor_ = EncoderFlavor::DoubleTanh;
  double notch_ = 0.5;
  std::vector<FilterSlot> slots_;
  std::vector<UnitInfo> units_;
  int tile_slots_ = 0;

  friend LocalNet make_local_net(const LocalTopology&, EncoderFlavor, double, std::vector<FilterSlot>);
};

/// Rebuilds a net from stored slots; slot geometry must match the topology.
LocalNet make_local_net(const LocalTopology& topo, EncoderFlavor flavor, double notch, std::vector<FilterSlot> slots);

/// Unit activation of the double tanh or tanh encoder given the preactivation.
double unit_nonlinearity(double y, double gain, double notch, EncoderFlavor flavor);

/// Feed-forward code: every unit applies its encoder to its receptive field.
Eigen::VectorXd encode_image(const ImageFrame& frame, const LocalNet& net);

/// Linear part <encoder, window> + bias for every unit.
Eigen::VectorXd encode_image_linear(const ImageFrame& frame, const LocalNet& net);

/// Sum of every unit's decoder projection, weighted by its code.
ImageFrame reconstruct_image(const Eigen::VectorXd& code, const LocalNet& net);

struct LocalInferenceConfig {
  double alpha = 0.5;
  int max_sweeps = 50;
  double tolerance = 1e-6;
  /// Adds |z - Enc(x)|^2 and warm-starts from the encoder.
  bool predictive = false;
  SparsityKind sparsity = SparsityKind::L1;
  GroupSparsityConfig group;
  bool record_trace = false;
};

/// Whole-image energy |x - R(z)|^2 (+ |z - Enc(x)|^2) + sparsity(z).
double image_energy(const ImageFrame& frame, const Eigen::VectorXd& code, const LocalNet& net,
                    const LocalInferenceConfig& cfg);

/// Group-sparsity settings as applied to the net's cell grid (pools wrap on
/// periodic layers whose grid is a whole number of tiles).
GroupSparsityConfig image_group_config(const LocalNet& net, const LocalInferenceConfig& cfg);

/// Joint minimization of the whole-image energy by block-coordinate sweeps over
/// receptive-field sites in raster order. Each unit update exactly minimizes
/// the energy in that unit, so the energy never increases.
CodeState<double> infer_image_code(const ImageFrame& frame, const LocalNet& net, const LocalInferenceConfig& cfg,
                                   const std::optional<Eigen::VectorXd>& z0 = std::nullopt);

struct LocalTrainConfig {
  LocalInferenceConfig inference;
  /// Coordinate passes over the touched units after each site update.
  int readjust_iters = 3;
  double decoder_rate = 0.05;
  double encoder_rate = 0.02;
  /// Called after every accepted site update.
  std::function<void(const LocalNet&)> on_site_update;
};

struct LocalTrainStats {
  double energy_start = 0;  // after initial inference
  double energy_end = 0;    // after the full site sweep
  double recon_err = 0;
  double pred_err = 0;
  double sparsity = 0;
  int sites = 0;
  int rejected_updates = 0;
};

/// One pass of the per-receptive-field schedule over a frame: infer the code,
/// then for each site in raster order update that site's weights from its own
/// gradient, renormalize, and re-adjust the touched codes.
LocalTrainStats train_local_frame(const ImageFrame& frame, LocalNet& net, const LocalTrainConfig& cfg);

std::vector<LocalTrainStats> train_local(const std::vector<ImageFrame>& frames, LocalNet& net,
                                         const LocalTrainConfig& cfg);

}  // namespace tpn
