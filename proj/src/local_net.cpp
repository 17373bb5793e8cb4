#include "tpn/local_net.hpp"

#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

namespace tpn {

namespace {

// floor(a / b) for b > 0
int floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && (a < 0)) --q;
  return static_cast<int>(q);
}

void check_density(const Density& d, const char* axis) {
  const bool ok = d.num >= 1 && d.den >= 1 && (d.num == 1 || d.den == 1);
  if (!ok) throw InvalidInput(std::string("LocalTopology: density along ") + axis + " must be k or 1/k");
}

using PixelBlock = Eigen::Block<PixelMatrix>;
using ConstPixelBlock = Eigen::Block<const PixelMatrix>;
using FilterMap = Eigen::Map<const PixelMatrix>;

FilterMap filter_view(const Eigen::VectorXd& w, const Rect& rf) { return {w.data(), rf.height(), rf.width()}; }

ConstPixelBlock window(const PixelMatrix& img, const Rect& rf) {
  return img.block(rf.y0, rf.x0, rf.height(), rf.width());
}
PixelBlock window(PixelMatrix& img, const Rect& rf) { return img.block(rf.y0, rf.x0, rf.height(), rf.width()); }

void check_frame(const ImageFrame& frame, const LocalNet& net) {
  const auto& t = net.topology();
  if (frame.width() != t.image_w || frame.height() != t.image_h)
    throw InvalidInput("local net: frame size does not match topology");
}

// Units grouped by identical receptive field, in raster order of the field's corner.
std::vector<std::vector<int>> site_groups(const LocalNet& net) {
  std::map<std::tuple<int, int, int, int>, std::vector<int>> by_rect;
  for (int u = 0; u < static_cast<int>(net.units().size()); ++u) {
    const Rect& r = net.unit(u).rf;
    by_rect[{r.y0, r.x0, r.y1, r.x1}].push_back(u);
  }
  std::vector<std::vector<int>> out;
  out.reserve(by_rect.size());
  for (auto& [key, units] : by_rect) out.push_back(std::move(units));
  return out;
}

struct UnitEncoderGrad {
  double upstream = 0;  // d loss / d prediction
  double dy = 0;        // d loss / d preactivation
  double dgain = 0;
  double dnotch = 0;
};

UnitEncoderGrad unit_encoder_grad(double y, double target, double gain, double notch, EncoderFlavor flavor) {
  UnitEncoderGrad g;
  const double p = unit_nonlinearity(y, gain, notch, flavor);
  g.upstream = -2.0 * (target - p);
  if (flavor == EncoderFlavor::Tanh) {
    const double t = std::tanh(y);
    g.dgain = g.upstream * t;
    g.dy = g.upstream * gain * (1 - t * t);
  } else {
    const double tp = std::tanh(y + notch);
    const double tm = std::tanh(y - notch);
    g.dgain = g.upstream * (tp + tm);
    g.dy = g.upstream * gain * ((1 - tp * tp) + (1 - tm * tm));
    g.dnotch = g.upstream * gain * ((1 - tp * tp) - (1 - tm * tm));
  }
  return g;
}

}  // namespace

// -- topology -----------------------------------------------------------------

void LocalTopology::validate() const {
  require(image_w > 0 && image_h > 0, "LocalTopology: image size must be positive");
  require(patch_w > 0 && patch_h > 0, "LocalTopology: neighbourhood must be positive");
  check_density(rho_x, "x");
  check_density(rho_y, "y");
  require(image_w * rho_x.num % rho_x.den == 0 && image_h * rho_y.num % rho_y.den == 0,
          "LocalTopology: image size times density must be an integer");
  require((period_x > 0) == (period_y > 0), "LocalTopology: periodicity must be set on both axes or neither");
  if (periodic()) {
    require(period_x * rho_x.num % rho_x.den == 0 && period_y * rho_y.num % rho_y.den == 0,
            "LocalTopology: period times density must be an integer");
    require(cell_period_x() >= 1 && cell_period_y() >= 1, "LocalTopology: cell period must be at least 1");
  }
  for (int sy = 0; sy < cells_y(); ++sy)
    for (int sx = 0; sx < cells_x(); ++sx)
      if (receptive_field(sx, sy, *this).area() <= 0)
        throw InvalidInput("LocalTopology: empty receptive field");
}

Rect receptive_field(int sx, int sy, const LocalTopology& topo) {
  if (sx < 0 || sy < 0 || sx >= topo.cells_x() || sy >= topo.cells_y())
    throw InvalidInput("receptive_field: cell outside the grid");
  // s / rho - P / 2 = (2 s den - P num) / (2 num)
  auto lo = [](int s, const Density& d, int p) { return std::max(floor_div(2LL * s * d.den - 1LL * p * d.num, 2LL * d.num), 0); };
  auto hi = [](int s, const Density& d, int p, int n) {
    return std::min(floor_div(2LL * s * d.den + 1LL * p * d.num, 2LL * d.num), n);
  };
  Rect r;
  r.x0 = lo(sx, topo.rho_x, topo.patch_w);
  r.x1 = hi(sx, topo.rho_x, topo.patch_w, topo.image_w);
  r.y0 = lo(sy, topo.rho_y, topo.patch_h);
  r.y1 = hi(sy, topo.rho_y, topo.patch_h, topo.image_h);
  return r;
}

// -- net ------------------------------------------------------------------------

ImageFrame FilterSlot::decoder_image() const {
  return ImageFrame(PixelMatrix(Eigen::Map<const PixelMatrix>(decoder.data(), height, width)));
}

ImageFrame FilterSlot::encoder_image() const {
  return ImageFrame(PixelMatrix(Eigen::Map<const PixelMatrix>(encoder.data(), height, width)));
}

void LocalNet::build_layout() {
  topo_.validate();
  const int cx = topo_.cells_x();
  const int cy = topo_.cells_y();
  units_.assign(static_cast<std::size_t>(cx) * cy, {});
  tile_slots_ = topo_.periodic() ? topo_.cell_period_x() * topo_.cell_period_y() : 0;
  int next_slot = tile_slots_;
  std::vector<std::pair<int, int>> slot_sizes(static_cast<std::size_t>(tile_slots_), {topo_.patch_w, topo_.patch_h});
  for (int sy = 0; sy < cy; ++sy)
    for (int sx = 0; sx < cx; ++sx) {
      UnitInfo& u = units_[static_cast<std::size_t>(unit_index(sx, sy))];
      u.rf = receptive_field(sx, sy, topo_);
      u.boundary = u.rf.width() != topo_.patch_w || u.rf.height() != topo_.patch_h;
      if (topo_.periodic() && !u.boundary) {
        u.slot = tile_slot(sx % topo_.cell_period_x(), sy % topo_.cell_period_y());
      } else {
        u.slot = next_slot++;
        slot_sizes.emplace_back(u.rf.width(), u.rf.height());
      }
    }
  if (slots_.empty()) {
    slots_.resize(slot_sizes.size());
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      slots_[k].width = slot_sizes[k].first;
      slots_[k].height = slot_sizes[k].second;
      slots_[k].boundary = static_cast<int>(k) >= tile_slots_;
    }
  } else {
    require(slots_.size() == slot_sizes.size(), "local net: stored slot count does not match topology");
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      auto& s = slots_[k];
      require(s.width == slot_sizes[k].first && s.height == slot_sizes[k].second &&
                  s.decoder.size() == s.width * s.height && s.encoder.size() == s.width * s.height,
              "local net: stored slot geometry does not match topology");
      s.boundary = static_cast<int>(k) >= tile_slots_;
    }
  }
}

LocalNet LocalNet::create(const LocalTopology& topo, EncoderFlavor flavor, Rng& rng) {
  LocalNet net;
  net.topo_ = topo;
  net.flavor_ = flavor;
  net.build_layout();
  for (auto& s : net.slots_) {
    s.decoder = rng.normal_vector(s.width * s.height);
    s.decoder.normalize();
    s.encoder = s.decoder;
    s.gain = 1.0;
    s.bias = 0.0;
  }
  return net;
}

LocalNet make_local_net(const LocalTopology& topo, EncoderFlavor flavor, double notch, std::vector<FilterSlot> slots) {
  LocalNet net;
  net.topo_ = topo;
  net.flavor_ = flavor;
  net.notch_ = notch;
  net.slots_ = std::move(slots);
  require(!net.slots_.empty(), "make_local_net: no slots");
  net.build_layout();
  return net;
}

const FilterSlot& LocalNet::weight_lookup(int sx, int sy) const {
  if (sx < 0 || sy < 0 || sx >= topo_.cells_x() || sy >= topo_.cells_y())
    throw InvalidInput("weight_lookup: cell outside the grid");
  return slots_[static_cast<std::size_t>(units_[static_cast<std::size_t>(unit_index(sx, sy))].slot)];
}

FilterSlot& LocalNet::weight_lookup(int sx, int sy) {
  return const_cast<FilterSlot&>(std::as_const(*this).weight_lookup(sx, sy));
}

ConnectionCount LocalNet::connections() const {
  ConnectionCount c;
  c.nominal = static_cast<long long>(units_.size()) * topo_.patch_w * topo_.patch_h;
  for (const auto& u : units_) c.actual += u.rf.area();
  return c;
}

long long LocalNet::weight_count() const {
  long long n = 0;
  for (const auto& s : slots_) n += 2LL * s.width * s.height + 2;
  return n + 1;
}

void LocalNet::normalize_decoders() {
  for (auto& s : slots_) {
    const double n = s.decoder.norm();
    if (n > 0) s.decoder /= n;
  }
}

std::string LocalNet::describe() const {
  const auto c = connections();
  int boundary = 0;
  for (const auto& u : units_) boundary += u.boundary ? 1 : 0;
  std::ostringstream os;
  os << "image: " << topo_.image_w << "x" << topo_.image_h << "\n";
  os << "neighbourhood: " << topo_.patch_w << "x" << topo_.patch_h << "\n";
  os << "density: " << topo_.rho_x.num << "/" << topo_.rho_x.den << " x " << topo_.rho_y.num << "/"
     << topo_.rho_y.den << " (overcompleteness " << topo_.overcompleteness() << ")\n";
  os << "cells: " << topo_.cells_x() << "x" << topo_.cells_y() << "\n";
  os << "units: " << units_.size() << " (bulk " << units_.size() - boundary << ", boundary " << boundary << ")\n";
  if (topo_.periodic())
    os << "tiling: period " << topo_.period_x << "x" << topo_.period_y << " px, " << topo_.cell_period_x() << "x"
       << topo_.cell_period_y() << " cells, " << tile_slots_ << " tile filters\n";
  else
    os << "tiling: none\n";
  os << "filter slots: " << slots_.size() << " (" << slots_.size() - tile_slots_ << " boundary)\n";
  os << "connections: " << c.nominal << " (C*N^2*P^2), " << c.actual << " after edge clipping\n";
  os << "weights: " << weight_count() << "\n";
  return os.str();
}

double unit_nonlinearity(double y, double gain, double notch, EncoderFlavor flavor) {
  if (flavor == EncoderFlavor::Tanh) return gain * std::tanh(y);
  return gain * (std::tanh(y + notch) + std::tanh(y - notch));
}

Eigen::VectorXd encode_image_linear(const ImageFrame& frame, const LocalNet& net) {
  check_frame(frame, net);
  Eigen::VectorXd y(static_cast<Eigen::Index>(net.units().size()));
  for (std::size_t u = 0; u < net.units().size(); ++u) {
    const auto& info = net.units()[u];
    const auto& slot = net.slots()[static_cast<std::size_t>(info.slot)];
    y(static_cast<Eigen::Index>(u)) =
        (window(frame.pixels(), info.rf).array() * filter_view(slot.encoder, info.rf).array()).sum() + slot.bias;
  }
  return y;
}

Eigen::VectorXd encode_image(const ImageFrame& frame, const LocalNet& net) {
  Eigen::VectorXd y = encode_image_linear(frame, net);
  for (Eigen::Index u = 0; u < y.size(); ++u) {
    const auto& slot = net.slots()[static_cast<std::size_t>(net.unit(static_cast<int>(u)).slot)];
    y(u) = unit_nonlinearity(y(u), slot.gain, net.notch(), net.flavor());
  }
  return y;
}

ImageFrame reconstruct_image(const Eigen::VectorXd& code, const LocalNet& net) {
  const auto& t = net.topology();
  require(code.size() == t.unit_count(), "reconstruct_image: code size does not match net");
  ImageFrame out(t.image_w, t.image_h, 0.0);
  for (int u = 0; u < t.unit_count(); ++u) {
    if (code(u) == 0) continue;
    const auto& info = net.unit(u);
    window(out.pixels(), info.rf) += code(u) * filter_view(net.slots()[static_cast<std::size_t>(info.slot)].decoder, info.rf);
  }
  return out;
}

GroupSparsityConfig image_group_config(const LocalNet& net, const LocalInferenceConfig& cfg) {
  GroupSparsityConfig g = cfg.group;
  g.alpha = cfg.alpha;
  const auto& t = net.topology();
  g.wrap = t.periodic() && t.cells_x() % t.cell_period_x() == 0 && t.cells_y() % t.cell_period_y() == 0;
  return g;
}

double image_energy(const ImageFrame& frame, const Eigen::VectorXd& code, const LocalNet& net,
                    const LocalInferenceConfig& cfg) {
  check_frame(frame, net);
  double e = (frame.pixels() - reconstruct_image(code, net).pixels()).squaredNorm();
  if (cfg.predictive) e += (code - encode_image(frame, net)).squaredNorm();
  if (cfg.sparsity == SparsityKind::L1) {
    e += cfg.alpha * code.lpNorm<1>();
  } else {
    const auto& t = net.topology();
    e += group_penalty(code, CellGrid{t.cells_x(), t.cells_y()}, image_group_config(net, cfg));
  }
  return e;
}

// -- joint inference -------------------------------------------------------------

namespace {

/// Residual-tracking block-coordinate solver for the whole-image energy.
class ImageSolver {
 public:
  ImageSolver(const ImageFrame& frame, const LocalNet& net, const LocalInferenceConfig& cfg, Eigen::VectorXd z)
      : frame_(frame), net_(net), cfg_(cfg), z_(std::move(z)) {
    const auto& t = net.topology();
    require(z_.size() == t.unit_count(), "infer_image_code: initial code size does not match net");
    if (cfg.predictive) pred_ = encode_image(frame, net);
    if (cfg.sparsity == SparsityKind::Group) {
      tracker_.emplace(CellGrid{t.cells_x(), t.cells_y()}, image_group_config(net, cfg));
      tracker_->reset(z_);
    }
    refresh_residual();
  }

  void refresh_residual() { residual_ = frame_.pixels() - reconstruct_image(z_, net_).pixels(); }

  double energy() const {
    double e = residual_.squaredNorm();
    if (cfg_.predictive) e += (z_ - pred_).squaredNorm();
    if (tracker_)
      e += tracker_->penalty();
    else
      e += cfg_.alpha * z_.lpNorm<1>();
    return e;
  }

  void update_unit(int u) {
    const auto& info = net_.unit(u);
    const auto& slot = net_.slots()[static_cast<std::size_t>(info.slot)];
    const auto d = filter_view(slot.decoder, info.rf);
    auto r = window(residual_, info.rf);
    const double old = z_(u);
    const double dd = slot.decoder.squaredNorm();
    double a = dd;
    double b = (r.array() * d.array()).sum() + old * dd;
    if (cfg_.predictive) {
      a += 1.0;
      b += pred_(u);
    }
    if (a <= 0) return;
    double next;
    if (!tracker_) {
      next = soft_threshold(b, 0.5 * cfg_.alpha) / a;
    } else {
      next = group_scalar_minimizer(*tracker_, u, old, a, b);
      if (local_objective(u, next, a, b) > local_objective(u, old, a, b)) next = old;
    }
    if (next == old) return;
    r -= (next - old) * d;
    if (tracker_) tracker_->update(u, old, next);
    z_(u) = next;
  }

  void sweep(const std::vector<std::vector<int>>& sites) {
    for (const auto& site : sites)
      for (int u : site) update_unit(u);
  }

  Eigen::VectorXd& code() { return z_; }
  PixelMatrix& residual() { return residual_; }
  Eigen::VectorXd& prediction() { return pred_; }
  std::optional<PoolTracker>& tracker() { return tracker_; }

 private:
  // a v^2 - 2 b v + penalty terms touching unit u, for comparing two values of z_u
  double local_objective(int u, double v, double a, double b) const {
    const auto& g = tracker_->config();
    const double old = z_(u);
    double pen = 0.0;
    tracker_->for_each_pool_of(u, [&](int r, double w) {
      const double rest = std::max(tracker_->pools()(r) - w * old * old, 0.0);
      pen += std::sqrt(g.epsilon + rest + w * v * v);
    });
    return a * v * v - 2 * b * v + g.alpha * pen;
  }

  const ImageFrame& frame_;
  const LocalNet& net_;
  const LocalInferenceConfig& cfg_;
  Eigen::VectorXd z_;
  Eigen::VectorXd pred_;
  PixelMatrix residual_;
  std::optional<PoolTracker> tracker_;
};

}  // namespace

CodeState<double> infer_image_code(const ImageFrame& frame, const LocalNet& net, const LocalInferenceConfig& cfg,
                                   const std::optional<Eigen::VectorXd>& z0) {
  check_frame(frame, net);
  require(cfg.alpha > 0, "infer_image_code: alpha must be positive");
  Eigen::VectorXd init;
  if (z0)
    init = *z0;
  else if (cfg.predictive)
    init = encode_image(frame, net);
  else
    init = Eigen::VectorXd::Zero(net.topology().unit_count());
  ImageSolver solver(frame, net, cfg, std::move(init));
  const auto sites = site_groups(net);
  CodeState<double> state;
  double energy = solver.energy();
  if (cfg.record_trace) state.energy_trace.push_back(energy);
  int sweep = 0;
  for (; sweep < cfg.max_sweeps; ++sweep) {
    solver.sweep(sites);
    const double next = solver.energy();
    if (cfg.record_trace) state.energy_trace.push_back(next);
    const double change = energy - next;
    energy = next;
    if (change <= cfg.tolerance * std::max(std::abs(energy), 1e-30)) {
      state.converged = true;
      ++sweep;
      break;
    }
  }
  state.z = solver.code();
  state.energy = energy;
  state.iterations = sweep;
  return state;
}

// -- training ---------------------------------------------------------------------

LocalTrainStats train_local_frame(const ImageFrame& frame, LocalNet& net, const LocalTrainConfig& cfg) {
  check_frame(frame, net);
  const auto& icfg = cfg.inference;
  const auto sites = site_groups(net);
  const int n_units = net.topology().unit_count();

  std::vector<std::vector<int>> slot_units(net.slots().size());
  for (int u = 0; u < n_units; ++u) slot_units[static_cast<std::size_t>(net.unit(u).slot)].push_back(u);

  const auto first = infer_image_code(frame, net, icfg);
  ImageSolver solver(frame, net, icfg, first.z);
  Eigen::VectorXd& z = solver.code();
  PixelMatrix& residual = solver.residual();

  LocalTrainStats stats;
  stats.energy_start = solver.energy();
  std::vector<int> pixel_stamp(static_cast<std::size_t>(frame.size()), -1);
  std::vector<int> unit_stamp(static_cast<std::size_t>(n_units), -1);
  int generation = 0;
  double notch_grad = 0.0;

  // predictions are needed for the encoder regression even when they are not part of the energy
  Eigen::VectorXd linear = encode_image_linear(frame, net);
  Eigen::VectorXd& pred = solver.prediction();
  if (!icfg.predictive) {
    pred.resize(n_units);
    for (int u = 0; u < n_units; ++u)
      pred(u) = unit_nonlinearity(linear(u), net.slots()[static_cast<std::size_t>(net.unit(u).slot)].gain, net.notch(),
                                  net.flavor());
  }

  auto refresh_unit_prediction = [&](int v) {
    const auto& info = net.unit(v);
    const auto& slot = net.slots()[static_cast<std::size_t>(info.slot)];
    linear(v) = (window(frame.pixels(), info.rf).array() * filter_view(slot.encoder, info.rf).array()).sum() + slot.bias;
    pred(v) = unit_nonlinearity(linear(v), slot.gain, net.notch(), net.flavor());
  };

  for (const auto& site : sites) {
    ++stats.sites;
    // gradients contributed by this receptive field only
    std::map<int, FilterSlot> grads;
    for (int u : site) {
      const auto& info = net.unit(u);
      const auto& slot = net.slots()[static_cast<std::size_t>(info.slot)];
      auto [it, inserted] = grads.try_emplace(info.slot);
      FilterSlot& g = it->second;
      if (inserted) {
        g.width = slot.width;
        g.height = slot.height;
        g.decoder = Eigen::VectorXd::Zero(slot.decoder.size());
        g.encoder = Eigen::VectorXd::Zero(slot.encoder.size());
        g.gain = 0;
        g.bias = 0;
      }
      const auto r = window(residual, info.rf);
      const auto x = window(frame.pixels(), info.rf);
      if (z(u) != 0) {
        Eigen::Map<PixelMatrix> gd(g.decoder.data(), info.rf.height(), info.rf.width());
        gd += -2.0 * z(u) * r;
      }
      const auto eg = unit_encoder_grad(linear(u), z(u), slot.gain, net.notch(), net.flavor());
      Eigen::Map<PixelMatrix> ge(g.encoder.data(), info.rf.height(), info.rf.width());
      ge += eg.dy * x;
      g.bias += eg.dy;
      g.gain += eg.dgain;
      notch_grad += eg.dnotch;
    }

    double rate_scale = 1.0;
    bool accepted = false;
    std::vector<int> touched;
    for (int attempt = 0; attempt < 4 && !accepted; ++attempt, rate_scale *= 0.5) {
      ++generation;
      touched.clear();
      for (const auto& [k, g] : grads)
        for (int v : slot_units[static_cast<std::size_t>(k)])
          if (unit_stamp[static_cast<std::size_t>(v)] != generation) {
            unit_stamp[static_cast<std::size_t>(v)] = generation;
            touched.push_back(v);
          }
      std::vector<std::pair<int, int>> pixels;  // (y, x) union of touched fields with nonzero code
      for (int v : touched) {
        if (z(v) == 0) continue;
        const Rect& rf = net.unit(v).rf;
        for (int y = rf.y0; y < rf.y1; ++y)
          for (int x = rf.x0; x < rf.x1; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * frame.width() + x;
            if (pixel_stamp[idx] != generation) {
              pixel_stamp[idx] = generation;
              pixels.emplace_back(y, x);
            }
          }
      }
      auto local_energy = [&] {
        double e = 0.0;
        for (const auto& [y, x] : pixels) e += residual(y, x) * residual(y, x);
        if (icfg.predictive)
          for (int v : touched) e += (z(v) - pred(v)) * (z(v) - pred(v));
        return e;
      };
      const double before = local_energy();

      std::map<int, FilterSlot> saved;
      for (const auto& [k, g] : grads) {
        FilterSlot& slot = net.slots()[static_cast<std::size_t>(k)];
        saved.emplace(k, slot);
        slot.decoder -= rate_scale * cfg.decoder_rate * g.decoder;
        const double n = slot.decoder.norm();
        if (n > 0) slot.decoder /= n;
        slot.encoder -= rate_scale * cfg.encoder_rate * g.encoder;
        slot.bias -= rate_scale * cfg.encoder_rate * g.bias;
        slot.gain = std::max(0.0, slot.gain - rate_scale * cfg.encoder_rate * g.gain);
      }
      auto apply_residual = [&](const std::map<int, FilterSlot>& from, double sign) {
        for (int v : touched) {
          if (z(v) == 0) continue;
          const auto& info = net.unit(v);
          const auto& now = net.slots()[static_cast<std::size_t>(info.slot)];
          const auto& was = from.at(info.slot);
          window(residual, info.rf) -= sign * z(v) *
                                       (filter_view(now.decoder, info.rf) - filter_view(was.decoder, info.rf));
        }
      };
      apply_residual(saved, 1.0);
      for (int v : touched) refresh_unit_prediction(v);
      const double after = local_energy();
      if (after <= before) {
        accepted = true;
      } else {
        apply_residual(saved, -1.0);
        for (auto& [k, s] : saved) net.slots()[static_cast<std::size_t>(k)] = s;
        for (int v : touched) refresh_unit_prediction(v);
        ++stats.rejected_updates;
      }
    }
    if (!accepted) continue;
    if (cfg.on_site_update) cfg.on_site_update(net);

    for (int it = 0; it < cfg.readjust_iters; ++it) {
      for (int u : site) solver.update_unit(u);
      for (int v : touched) solver.update_unit(v);
    }
  }

  // the shared notch moves once per frame, on the summed gradient of all units
  if (net.flavor() == EncoderFlavor::DoubleTanh && notch_grad != 0.0) {
    const double old_notch = net.notch();
    const Eigen::VectorXd old_pred = pred;
    const double before = (z - pred).squaredNorm();
    net.set_notch(old_notch - cfg.encoder_rate * notch_grad / std::max(1, n_units));
    for (int v = 0; v < n_units; ++v) refresh_unit_prediction(v);
    if ((z - pred).squaredNorm() > before) {
      net.set_notch(old_notch);
      pred = old_pred;
    }
  }

  stats.energy_end = solver.energy();
  stats.recon_err = residual.squaredNorm();
  stats.pred_err = (z - pred).squaredNorm();
  stats.sparsity = stats.energy_end - stats.recon_err - (icfg.predictive ? stats.pred_err : 0.0);
  return stats;
}

std::vector<LocalTrainStats> train_local(const std::vector<ImageFrame>& frames, LocalNet& net,
                                         const LocalTrainConfig& cfg) {
  std::vector<LocalTrainStats> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(train_local_frame(f, net, cfg));
  return out;
}

}  // namespace tpn
