#include "tpn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unistd.h>

#include "tpn/analysis.hpp"
#include "tpn/local_net.hpp"
#include "tpn/preprocess.hpp"
#include "tpn/sparse_model.hpp"
#include "tpn/synth.hpp"

namespace tpn {

namespace fs = std::filesystem;

namespace {

// -- parameter groups -----------------------------------------------------------

struct Common {
  std::uint64_t seed = 1;
  int threads = 1;
};

Common read_common(Config& c) {
  Common out;
  out.seed = c.get_u64("seed", 1);
  const bool deterministic = c.get_bool("deterministic", false);
  out.threads = c.get_int("threads", 1);
  if (out.threads < 1) throw ConfigError("threads must be at least 1");
  if (deterministic) out.threads = 1;
  return out;
}

PreprocessConfig read_preprocess(Config& c) {
  PreprocessConfig p;
  p.gaussian_width = c.get_double("gaussian_width", p.gaussian_width);
  p.cutoff = c.get_double("cutoff", p.cutoff);
  p.relative_cutoff = c.get_double("relative_cutoff", p.relative_cutoff);
  p.form = c.get_choice("cutoff_form", "max", "max,quadrature") == "max" ? CutoffForm::Max : CutoffForm::Quadrature;
  return p;
}

/// Still image that training windows and patches are cut from: a PGM file, or
/// a dead-leaves image when no path is given.
struct ImageSource {
  std::string path;
  int size = 400;
  std::uint64_t seed = 1;
  bool preprocess = true;
  PreprocessConfig pre;

  ImageFrame load() const {
    ImageFrame img = path.empty() ? dead_leaves_image(size, size, seed) : read_pgm(path);
    return preprocess ? tpn::preprocess(img, pre) : img;
  }
};

ImageSource read_source(Config& c, std::uint64_t seed, bool preprocess_default) {
  ImageSource s;
  s.path = c.get_string("source", "");
  s.size = c.get_int("source_size", 400);
  s.seed = c.get_u64("source_seed", seed);
  s.preprocess = c.get_bool("preprocess", preprocess_default);
  s.pre = read_preprocess(c);
  return s;
}

EncoderFlavor read_flavor(Config& c) {
  return c.get_choice("encoder", "double_tanh", "double_tanh,tanh") == "tanh" ? EncoderFlavor::Tanh
                                                                               : EncoderFlavor::DoubleTanh;
}

Density parse_density(const std::string& text) {
  try {
    const auto slash = text.find('/');
    if (slash == std::string::npos) return Density::over(std::stoi(text));
    if (std::stoi(text.substr(0, slash)) != 1) throw ConfigError("");
    return Density::under(std::stoi(text.substr(slash + 1)));
  } catch (const std::exception&) {
    throw ConfigError("density must be k or 1/k, got '" + text + "'");
  }
}

// -- output helpers -----------------------------------------------------------

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.precision(10);
  return out;
}

void write_text(const fs::path& p, const std::string& text) { open_out(p) << text; }

template <typename T>
std::string str(T v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

ImageFrame column_image(const Eigen::VectorXd& column, int width, int height) {
  return ImageFrame(PixelMatrix(Eigen::Map<const PixelMatrix>(column.data(), height, width)));
}

int exact_sqrt(Eigen::Index n) {
  const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  return static_cast<Eigen::Index>(r) * r == n ? r : 0;
}

std::vector<ImageFrame> dictionary_images(const Eigen::MatrixXd& columns) {
  const int side = exact_sqrt(columns.rows());
  std::vector<ImageFrame> out;
  if (side == 0) return out;
  for (Eigen::Index j = 0; j < columns.cols(); ++j) out.push_back(column_image(columns.col(j), side, side));
  return out;
}

void write_mosaic(const fs::path& p, const std::vector<ImageFrame>& filters, int columns = 0) {
  if (filters.empty()) return;
  if (columns <= 0) columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(filters.size()))));
  write_pgm(p, filter_mosaic(filters, columns), -1.0, 1.0);
}

FitGrid fit_all(const std::vector<ImageFrame>& filters, int width) {
  FitGrid g{width, static_cast<int>(filters.size()) / std::max(1, width), {}};
  for (const auto& f : filters) g.fits.push_back(fit_gabor(f));
  return g;
}

double valid_fraction(const FitGrid& g, double min_r2) {
  if (g.fits.empty()) return 0.0;
  const auto n = std::count_if(g.fits.begin(), g.fits.end(), [&](const GaborFit& f) { return f.r2 >= min_r2; });
  return static_cast<double>(n) / static_cast<double>(g.fits.size());
}

void write_topography(const fs::path& p, const FitGrid& grid, const TopographyOptions& opt, StageResult& res) {
  auto out = open_out(p);
  try {
    const auto s = topography_score(grid, opt);
    out << "score=" << s.score << "\np_value=" << s.p_value << "\npermutation_mean=" << s.permutation_mean
        << "\npermutation_sd=" << s.permutation_sd << "\nvalid_fits=" << s.valid_fits << "\npairs=" << s.pairs << "\n";
    res.summary["topography_score"] = str(s.score);
    res.summary["topography_p"] = str(s.p_value);
  } catch (const InsufficientData& e) {
    out << "insufficient_data=" << e.what() << "\n";
    res.summary["topography_p"] = "nan";
  }
}

void save_model(const fs::path& p, Container c, const Config& cfg) {
  stamp_config(c, cfg);
  write_container(p, c);
}

// -- stages -------------------------------------------------------------------

StageResult stage_preprocess(Config& cfg, const fs::path& dir) {
  read_common(cfg);
  const std::string input = cfg.get_string("input", "");
  const PreprocessConfig pre = read_preprocess(cfg);
  cfg.reject_unknown();
  if (input.empty()) throw ConfigError("preprocess needs input=<pgm file>");

  const ImageFrame raw = read_pgm(input);
  const ImageFrame out = preprocess(raw, pre);
  Container c;
  std::vector<float> data(out.pixels().data(), out.pixels().data() + out.pixels().size());
  c.add("frame", {static_cast<std::uint32_t>(out.height()), static_cast<std::uint32_t>(out.width())}, std::move(data));
  c.metadata["model"] = "frame";
  save_model(dir / "preprocessed.tpn", std::move(c), cfg);
  write_pgm_autoscale(dir / "preprocessed.pgm", out);

  StageResult r;
  const auto& p = out.pixels();
  const double mean = p.mean();
  r.summary["width"] = str(out.width());
  r.summary["height"] = str(out.height());
  r.summary["mean"] = str(mean);
  r.summary["std"] = str(std::sqrt((p.array() - mean).square().mean()));
  return r;
}

StageResult stage_gen(Config& cfg, const fs::path& dir) {
  const Common common = read_common(cfg);
  const std::string kind = cfg.get_choice("kind", "moving_gaussian", "moving_gaussian,shifting_window,edge");
  StageResult r;
  auto out = [&](int i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05d.pgm", i);
    return dir / name;
  };
  if (kind == "moving_gaussian") {
    const int frames = cfg.get_int("frames", 100);
    const int size = cfg.get_int("size", 10);
    const double width = cfg.get_double("width", 1.5);
    cfg.reject_unknown();
    const auto seq = moving_gaussian(frames, size, width, common.seed);
    auto manifest = open_out(dir / "manifest.csv");
    manifest << "index,file,x,y\n";
    for (int i = 0; i < frames; ++i) {
      write_pgm(out(i), seq.frames[static_cast<std::size_t>(i)]);
      manifest << i << ',' << out(i).filename().string() << ',' << seq.centers[static_cast<std::size_t>(i)].x << ','
               << seq.centers[static_cast<std::size_t>(i)].y << '\n';
    }
    r.summary["frames"] = str(frames);
  } else if (kind == "shifting_window") {
    const int frames = cfg.get_int("frames", 100);
    const int window = cfg.get_int("window", 100);
    const int min_shift = cfg.get_int("min_shift", 1);
    const int max_shift = cfg.get_int("max_shift", 2);
    const ImageSource src = read_source(cfg, common.seed, false);
    cfg.reject_unknown();
    const ImageFrame img = src.load();
    const auto seq = shifting_window(img, window, window, frames, common.seed, min_shift, max_shift);
    auto manifest = open_out(dir / "manifest.csv");
    manifest << "index,file,x,y\n";
    for (int i = 0; i < frames; ++i) {
      if (src.preprocess)
        write_pgm_autoscale(out(i), seq.frames[static_cast<std::size_t>(i)]);
      else
        write_pgm(out(i), seq.frames[static_cast<std::size_t>(i)]);
      manifest << i << ',' << out(i).filename().string() << ',' << seq.positions[static_cast<std::size_t>(i)].x
               << ',' << seq.positions[static_cast<std::size_t>(i)].y << '\n';
    }
    r.summary["frames"] = str(frames);
  } else {
    const int size = cfg.get_int("size", 16);
    const int orientations = cfg.get_int("orientations", 8);
    const double pmin = cfg.get_double("position_min", -4);
    const double pmax = cfg.get_double("position_max", 4);
    const double pstep = cfg.get_double("position_step", 1);
    const double softness = cfg.get_double("softness", 1.0);
    const double amplitude = cfg.get_double("amplitude", 1.0);
    cfg.reject_unknown();
    if (orientations < 1 || pstep <= 0 || pmax < pmin) throw ConfigError("edge grid is empty");
    auto manifest = open_out(dir / "manifest.csv");
    // stimuli are zero-mean; stored shifted by 0.5 to fit the [0, 1] range
    manifest << "index,file,orientation,position,offset\n";
    int i = 0;
    for (int o = 0; o < orientations; ++o)
      for (double pos = pmin; pos <= pmax + 1e-9; pos += pstep, ++i) {
        const double theta = o * std::numbers::pi / orientations;
        ImageFrame f = edge_stimulus(theta, pos, size, softness, amplitude);
        f.flat().array() += 0.5;
        write_pgm(out(i), f);
        manifest << i << ',' << out(i).filename().string() << ',' << theta << ',' << pos << ",0.5\n";
      }
    r.summary["frames"] = str(i);
  }
  r.summary["kind"] = kind;
  return r;
}

struct PlantedSpec {
  int k = 3;
  double coef_min = 0.5;
  double coef_max = 1.5;
  double noise = 0.0;
};

Eigen::MatrixXd planted_batch(const Eigen::MatrixXd& truth, const PlantedSpec& spec, int batch, Rng& rng) {
  Eigen::MatrixXd xs(truth.rows(), batch);
  for (int i = 0; i < batch; ++i) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(truth.cols());
    for (int j = 0; j < spec.k; ++j) {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      z(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(truth.cols())))) =
          sign * rng.uniform(spec.coef_min, spec.coef_max);
    }
    xs.col(i) = truth * z;
    if (spec.noise > 0) xs.col(i) += spec.noise * rng.normal_vector(truth.rows());
  }
  return xs;
}

Eigen::MatrixXd patch_batch(const ImageFrame& img, int patch, int batch, Rng& rng) {
  require(img.width() >= patch && img.height() >= patch, "source image smaller than the patch");
  Eigen::MatrixXd xs(patch * patch, batch);
  for (int i = 0; i < batch; ++i) {
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width() - patch + 1)));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height() - patch + 1)));
    xs.col(i) = img.crop(x, y, patch, patch).flat();
  }
  return xs;
}

StageResult stage_train_patch(Config& cfg, const fs::path& dir, bool psd) {
  const Common common = read_common(cfg);
  const std::string data = cfg.get_choice("data", "images", "images,planted");
  const int patch = cfg.get_int("patch", 8);
  const int codes = cfg.get_int("codes", 2 * patch * patch);
  const int steps = cfg.get_int("steps", 2000);
  const int batch = cfg.get_int("batch", 20);
  SparseHyper hyper;
  hyper.alpha = cfg.get_double("alpha", 0.5);
  hyper.max_iters = cfg.get_int("max_iters", 100);
  hyper.tolerance = cfg.get_double("tolerance", 1e-6);
  hyper.method = cfg.get_choice("method", "proximal", "proximal,subgradient") == "proximal"
                     ? InferenceMethod::Proximal
                     : InferenceMethod::Subgradient;
  TrainHyper train;
  train.threads = common.threads;
  train.decoder_rate = cfg.get_double("decoder_rate", 0.02);
  SparsityConfig sparsity;
  if (cfg.get_choice("sparsity", "l1", "l1,group") == "group") {
    sparsity.kind = SparsityKind::Group;
    const int gw = cfg.get_int("group_grid_width", exact_sqrt(codes));
    if (gw <= 0 || codes % gw != 0) throw ConfigError("group_grid_width must divide codes");
    sparsity.grid = {gw, codes / gw};
    sparsity.group.sigma = cfg.get_double("group_sigma", 1.5);
    sparsity.group.support_radius = cfg.get_int("group_support", -1);
    sparsity.group.wrap = cfg.get_bool("group_wrap", false);
  }
  PlantedSpec planted;
  ImageSource source;
  if (data == "planted") {
    planted.k = cfg.get_int("planted_k", 3);
    planted.coef_min = cfg.get_double("planted_min", 0.5);
    planted.coef_max = cfg.get_double("planted_max", 1.5);
    planted.noise = cfg.get_double("planted_noise", 0.0);
  } else {
    source = read_source(cfg, common.seed, true);
  }
  EncoderFlavor flavor = EncoderFlavor::DoubleTanh;
  double notch = 0.5;
  bool shared_notch = true;
  if (psd) {
    flavor = read_flavor(cfg);
    train.encoder_rate = cfg.get_double("encoder_rate", 0.02);
    notch = cfg.get_double("notch", 0.5);
    shared_notch = cfg.get_bool("shared_notch", true);
  }
  const int holdout = cfg.get_int("validation", 500);
  cfg.reject_unknown();
  if (patch < 1 || codes < 1 || steps < 0 || batch < 1 || holdout < 0) throw ConfigError("sizes must be positive");

  Rng model_rng(common.seed);
  Rng data_rng(common.seed + 1);
  Eigen::MatrixXd truth;
  ImageFrame image;
  if (data == "planted") {
    truth = DictionaryXd::random(patch * patch, codes, model_rng).columns;
  } else {
    image = source.load();
  }
  auto next_batch = [&](int n) {
    return data == "planted" ? planted_batch(truth, planted, n, data_rng) : patch_batch(image, patch, n, data_rng);
  };

  PsdModelXd model = PsdModelXd::random(patch * patch, codes, flavor, model_rng);
  model.encoder = EncoderParamsXd::from_dictionary(model.dict, flavor, notch);
  model.encoder.shared_notch = shared_notch;

  auto log = open_out(dir / "train.csv");
  log << "step,recon_err,pred_err,l1,energy\n";
  for (int s = 0; s < steps; ++s) {
    const Eigen::MatrixXd xs = next_batch(batch);
    const StepStats st = psd ? train_step_psd(xs, model, hyper, train, sparsity)
                             : train_dictionary_sc(xs, model.dict, hyper, train, sparsity);
    log << s << ',' << st.recon_err << ',' << st.pred_err << ',' << st.l1 << ',' << st.energy << '\n';
  }

  StageResult r;
  const Eigen::MatrixXd held = next_batch(holdout);
  double recon = 0, pred = 0;
  for (Eigen::Index i = 0; i < held.cols(); ++i) {
    const Eigen::VectorXd x = held.col(i);
    if (psd) {
      const auto code = infer_code_psd(x, model.dict, model.encoder, hyper, sparsity);
      pred += (code.z - encode(x, model.encoder)).squaredNorm();
      recon += (x - model.dict.columns * code.z).squaredNorm();
    } else {
      const auto code = infer_code_sc(x, model.dict, hyper, sparsity);
      recon += (x - model.dict.columns * code.z).squaredNorm();
    }
  }
  if (holdout > 0) {
    r.summary["validation_recon_err"] = str(recon / holdout);
    if (psd) r.summary["validation_pred_err"] = str(pred / holdout);
  }

  if (psd)
    save_model(dir / "model.tpn", to_container(model), cfg);
  else
    save_model(dir / "model.tpn", to_container(model.dict), cfg);
  if (data == "planted") {
    save_model(dir / "truth.tpn", to_container(DictionaryXd{truth}), cfg);
    r.summary["recovery"] = str(recovery_fraction(truth, model.dict.columns));
  }
  const auto filters = dictionary_images(model.dict.columns);
  write_mosaic(dir / "filters.pgm", filters);
  if (patch >= 5) {
    const FitGrid fits = fit_all(filters, sparsity.kind == SparsityKind::Group ? sparsity.grid.width : codes);
    auto csv = open_out(dir / "fits.csv");
    write_fits_csv(csv, fits);
    r.summary["valid_fit_fraction"] = str(valid_fraction(fits, kValidFitR2));
  }
  return r;
}

StageResult stage_train_local(Config& cfg, const fs::path& dir) {
  const Common common = read_common(cfg);
  LocalTopology topo;
  topo.image_w = topo.image_h = cfg.get_int("size", 79);
  topo.patch_w = topo.patch_h = cfg.get_int("patch", 20);
  topo.rho_x = topo.rho_y = parse_density(cfg.get_string("density", "1"));
  topo.period_x = topo.period_y = cfg.get_int("period", 20);
  const EncoderFlavor flavor = read_flavor(cfg);
  const int frames = cfg.get_int("frames", 400);
  const int min_shift = cfg.get_int("min_shift", 1);
  const int max_shift = cfg.get_int("max_shift", 2);
  const ImageSource source = read_source(cfg, common.seed, true);
  LocalTrainConfig train;
  train.inference.alpha = cfg.get_double("alpha", 0.5);
  train.inference.predictive = cfg.get_bool("predictive", true);
  train.inference.max_sweeps = cfg.get_int("max_sweeps", 50);
  train.inference.tolerance = cfg.get_double("tolerance", 1e-6);
  if (cfg.get_choice("sparsity", "l1", "l1,group") == "group") {
    train.inference.sparsity = SparsityKind::Group;
    train.inference.group.sigma = cfg.get_double("group_sigma", 1.5);
    train.inference.group.support_radius = cfg.get_int("group_support", -1);
  }
  train.decoder_rate = cfg.get_double("decoder_rate", 0.05);
  train.encoder_rate = cfg.get_double("encoder_rate", 0.02);
  train.readjust_iters = cfg.get_int("readjust_iters", 3);
  const bool analyze = cfg.get_bool("analyze", true);
  TopographyOptions topo_opt;
  topo_opt.min_r2 = cfg.get_double("min_r2", kValidFitR2);
  topo_opt.permutations = cfg.get_int("permutations", 1000);
  topo_opt.seed = common.seed;
  cfg.reject_unknown();
  topo.validate();

  Rng rng(common.seed);
  LocalNet net = LocalNet::create(topo, flavor, rng);
  const ImageFrame image = source.load();
  const auto seq = shifting_window(image, topo.image_w, topo.image_h, frames, common.seed + 1, min_shift, max_shift);

  auto log = open_out(dir / "train.csv");
  log << "step,recon_err,pred_err,l1,energy,energy_start,rejected\n";
  for (int i = 0; i < frames; ++i) {
    const auto st = train_local_frame(seq.frames[static_cast<std::size_t>(i)], net, train);
    log << i << ',' << st.recon_err << ',' << st.pred_err << ',' << st.sparsity << ',' << st.energy_end << ','
        << st.energy_start << ',' << st.rejected_updates << '\n';
  }
  save_model(dir / "model.tpn", to_container(net), cfg);
  write_text(dir / "describe.txt", net.describe());

  StageResult r;
  r.summary["units"] = str(topo.unit_count());
  r.summary["connections"] = str(net.connections().nominal);
  if (analyze && net.tile_slot_count() > 0) {
    std::vector<ImageFrame> filters;
    double central = 0;
    for (int k = 0; k < net.tile_slot_count(); ++k) {
      filters.push_back(net.slots()[static_cast<std::size_t>(k)].decoder_image());
      central += central_energy_fraction(filters.back(), topo.patch_w / 5);
    }
    const FitGrid fits = fit_all(filters, topo.cell_period_x());
    auto csv = open_out(dir / "fits.csv");
    write_fits_csv(csv, fits);
    write_ppm(dir / "orientation_map.ppm", orientation_map(fits, topo_opt.min_r2, 8));
    write_mosaic(dir / "filters.pgm", filters, topo.cell_period_x());
    topo_opt.wrap = true;
    write_topography(dir / "topography.txt", fits, topo_opt, r);
    r.summary["valid_fit_fraction"] = str(valid_fraction(fits, topo_opt.min_r2));
    r.summary["central_energy_fraction"] = str(central / net.tile_slot_count());
  }
  r.report = net.describe();
  return r;
}

using SimpleCells = std::function<Eigen::VectorXd(const ImageFrame&)>;

/// Non-negative simple-cell activity |Enc(x)| from a frozen model, or the raw
/// pixels when no model is given.
SimpleCells simple_cells(const std::string& path, int& frame_size, Eigen::Index& n_s) {
  if (path.empty()) {
    n_s = static_cast<Eigen::Index>(frame_size) * frame_size;
    return [](const ImageFrame& f) { return Eigen::VectorXd(f.flat()); };
  }
  AnyModel m = model_from_container(read_container(path));
  if (auto* psd = std::get_if<PsdModelXd>(&m)) {
    frame_size = exact_sqrt(psd->dict.n_x());
    if (frame_size == 0) throw ConfigError("simple_model patches are not square");
    n_s = psd->dict.n_z();
    return [enc = psd->encoder](const ImageFrame& f) {
      return Eigen::VectorXd(encode(Eigen::VectorXd(f.flat()), enc).cwiseAbs());
    };
  }
  if (auto* local = std::get_if<LocalNet>(&m)) {
    if (local->topology().image_w != local->topology().image_h) throw ConfigError("simple_model must be square");
    frame_size = local->topology().image_w;
    n_s = local->topology().unit_count();
    return [net = *local](const ImageFrame& f) { return Eigen::VectorXd(encode_image(f, net).cwiseAbs()); };
  }
  throw ConfigError("simple_model must be a psd or local model");
}

StageResult stage_train_tpn(Config& cfg, const fs::path& dir) {
  const Common common = read_common(cfg);
  const std::string simple = cfg.get_string("simple_model", "");
  const int n1 = cfg.get_int("n1", 20);
  const int n2 = cfg.get_int("n2", 10);
  const int n_tau = cfg.get_int("n_tau", 3);
  const double alpha1 = cfg.get_double("alpha1", 0.02);
  const double alpha2 = cfg.get_double("alpha2", 0.02);
  const int steps = cfg.get_int("steps", 1000);
  const int batch = cfg.get_int("batch", 10);
  SparseHyper hyper;
  hyper.max_iters = cfg.get_int("max_iters", 200);
  hyper.tolerance = cfg.get_double("tolerance", 1e-6);
  TpnTrainHyper train;
  train.threads = common.threads;
  train.decoder_rate = cfg.get_double("decoder_rate", 0.02);
  train.encoder_rate = cfg.get_double("encoder_rate", 0.005);
  int size = 0;
  double width = 0;
  int min_shift = 1, max_shift = 2;
  ImageSource source;
  if (simple.empty()) {
    size = cfg.get_int("size", 10);
    width = cfg.get_double("width", 1.5);
  } else {
    min_shift = cfg.get_int("min_shift", 1);
    max_shift = cfg.get_int("max_shift", 2);
    source = read_source(cfg, common.seed, true);
  }
  cfg.reject_unknown();
  if (n1 < 1 || n2 < 1 || n_tau < 1 || steps < 0 || batch < 1) throw ConfigError("sizes must be positive");

  Eigen::Index n_s = 0;
  const SimpleCells cells = simple_cells(simple, size, n_s);
  const int frames = steps * batch + n_tau - 1;
  std::vector<ImageFrame> video;
  if (simple.empty())
    video = moving_gaussian(frames, size, width, common.seed + 1).frames;
  else
    video = shifting_window(source.load(), size, size, frames, common.seed + 1, min_shift, max_shift).frames;
  Eigen::MatrixXd s(n_s, frames);
  for (int t = 0; t < frames; ++t) s.col(t) = cells(video[static_cast<std::size_t>(t)]);

  Rng rng(common.seed);
  TpnModelXd model = TpnModelXd::random(n_s, n1, n2, n_tau, rng);
  model.alpha1 = alpha1;
  model.alpha2 = alpha2;
  auto log = open_out(dir / "train.csv");
  log << "step,recon_err,pred_err,l1,energy\n";
  for (int step = 0; step < steps; ++step) {
    std::vector<FrameWindowXd> windows;
    for (int b = 0; b < batch; ++b) {
      const int newest = step * batch + b + n_tau - 1;
      FrameWindowXd w;
      w.frames.resize(n_s, n_tau);
      for (int t = 0; t < n_tau; ++t) w.frames.col(t) = s.col(newest - t);
      windows.push_back(std::move(w));
    }
    const auto st = tpn_train_step(windows, model, hyper, train);
    log << step << ',' << st.recon_err << ',' << st.pred_err << ',' << st.energy - st.recon_err << ',' << st.energy
        << '\n';
  }
  save_model(dir / "model.tpn", to_container(model), cfg);

  StageResult r;
  if (simple.empty()) {
    const auto maps = tpn_gaussian_responses(model, size, width, hyper);
    auto csv = open_out(dir / "invariance.csv");
    csv << "group,unit,var_x,var_y,ratio\n";
    for (int g = 0; g < 2; ++g) {
      const auto& m = g == 0 ? maps.z1 : maps.z2;
      for (std::size_t u = 0; u < m.size(); ++u) {
        const auto idx = invariance_index(m[u]);
        csv << (g == 0 ? "z1," : "z2,") << u << ',' << idx.var_x << ',' << idx.var_y << ',' << idx.ratio << '\n';
      }
    }
    r.summary["z1_median_ratio"] = str(median_invariance_ratio(maps.z1));
    r.summary["z2_median_ratio"] = str(median_invariance_ratio(maps.z2));
  }
  return r;
}

StageResult stage_analyze(Config& cfg, const fs::path& dir) {
  const Common common = read_common(cfg);
  const std::string path = cfg.get_string("model", "");
  const std::string simple = cfg.get_string("simple_model", "");
  TopographyOptions opt;
  opt.min_r2 = cfg.get_double("min_r2", kValidFitR2);
  opt.permutations = cfg.get_int("permutations", 1000);
  opt.seed = common.seed;
  const int scale = cfg.get_int("map_scale", 8);
  cfg.reject_unknown();
  if (path.empty()) throw ConfigError("analyze needs model=<container>");

  const AnyModel model = model_from_container(read_container(path));
  StageResult r;
  auto fits_out = [&](const std::vector<ImageFrame>& filters, int width, bool topo, bool wrap) {
    const FitGrid fits = fit_all(filters, width);
    auto csv = open_out(dir / "fits.csv");
    write_fits_csv(csv, fits);
    write_mosaic(dir / "filters.pgm", filters, width);
    write_ppm(dir / "orientation_map.ppm", orientation_map(fits, opt.min_r2, scale));
    r.summary["valid_fit_fraction"] = str(valid_fraction(fits, opt.min_r2));
    if (topo) {
      opt.wrap = wrap;
      write_topography(dir / "topography.txt", fits, opt, r);
    }
    return fits;
  };

  if (const auto* d = std::get_if<DictionaryXd>(&model)) {
    fits_out(dictionary_images(d->columns), std::max(1, exact_sqrt(d->n_z())), exact_sqrt(d->n_z()) > 0, false);
  } else if (const auto* p = std::get_if<PsdModelXd>(&model)) {
    fits_out(dictionary_images(p->dict.columns), std::max(1, exact_sqrt(p->dict.n_z())), exact_sqrt(p->dict.n_z()) > 0,
             false);
  } else if (const auto* net = std::get_if<LocalNet>(&model)) {
    std::vector<ImageFrame> filters;
    for (int k = 0; k < net->tile_slot_count(); ++k)
      filters.push_back(net->slots()[static_cast<std::size_t>(k)].decoder_image());
    if (filters.empty()) throw ConfigError("local model has no periodic tile to analyze");
    fits_out(filters, net->topology().cell_period_x(), true, true);
  } else {
    const auto& tpn = std::get<TpnModelXd>(model);
    if (simple.empty()) {
      const int side = exact_sqrt(tpn.n_s());
      if (side == 0) throw ConfigError("tpn inputs are not an image; give simple_model");
      std::vector<ImageFrame> filters = dictionary_images(tpn.dec2);
      fits_out(filters, std::max(1, exact_sqrt(tpn.n_2())), false, false);
    } else {
      const AnyModel sm = model_from_container(read_container(simple));
      const auto* psd = std::get_if<PsdModelXd>(&sm);
      if (!psd || psd->dict.n_z() != tpn.n_s()) throw ConfigError("simple_model must be the psd model feeding the tpn");
      const FitGrid fits = fit_all(dictionary_images(psd->dict.columns), static_cast<int>(psd->dict.n_z()));
      const auto params = complex_cell_params(tpn.dec2, fits.fits, opt.min_r2);
      auto csv = open_out(dir / "complex.csv");
      csv << "unit,orientation,frequency,resultant,defined\n";
      for (std::size_t k = 0; k < params.size(); ++k)
        csv << k << ',' << params[k].orientation << ',' << params[k].frequency << ',' << params[k].resultant << ','
            << params[k].defined << '\n';
      auto scatter = open_out(dir / "simple_fits.csv");
      write_fits_csv(scatter, fits);
    }
  }
  return r;
}

std::string describe_model(const AnyModel& model) {
  std::ostringstream os;
  if (const auto* d = std::get_if<DictionaryXd>(&model)) {
    os << "sparse coding dictionary: " << d->n_x() << " inputs, " << d->n_z() << " codes\n";
  } else if (const auto* p = std::get_if<PsdModelXd>(&model)) {
    os << "psd model: " << p->dict.n_x() << " inputs, " << p->dict.n_z() << " codes, encoder "
       << (p->encoder.flavor == EncoderFlavor::Tanh ? "tanh" : "double tanh") << "\n";
  } else if (const auto* net = std::get_if<LocalNet>(&model)) {
    os << net->describe();
  } else {
    const auto& t = std::get<TpnModelXd>(model);
    os << "temporal product network: " << t.n_s() << " simple cells, " << t.n_1() << " location units, " << t.n_2()
       << " invariant units, window " << t.n_tau << "\n";
  }
  return os.str();
}

StageResult stage_describe(Config& cfg, const fs::path& dir) {
  read_common(cfg);
  const std::string path = cfg.get_string("model", "");
  cfg.reject_unknown();
  if (path.empty()) throw ConfigError("describe needs model=<container>");
  StageResult r;
  r.report = describe_model(model_from_container(read_container(path)));
  write_text(dir / "describe.txt", r.report);
  return r;
}

StageResult stage_tpn_responses(Config& cfg, const fs::path& dir) {
  read_common(cfg);
  const std::string path = cfg.get_string("model", "");
  const std::string simple = cfg.get_string("simple_model", "");
  const std::string stimulus = cfg.get_choice("stimulus", "edge", "edge,gaussian");
  const std::string mode = cfg.get_choice("mode", "encoder", "encoder,inference");
  SparseHyper hyper;
  hyper.max_iters = cfg.get_int("max_iters", 200);
  hyper.tolerance = cfg.get_double("tolerance", 1e-6);
  int orientations = 0;
  double pmin = 0, pmax = 0, pstep = 1, softness = 1, amplitude = 1, width = 1.5;
  if (stimulus == "edge") {
    orientations = cfg.get_int("orientations", 12);
    pmin = cfg.get_double("position_min", -4);
    pmax = cfg.get_double("position_max", 4);
    pstep = cfg.get_double("position_step", 1);
    softness = cfg.get_double("softness", 1.0);
    amplitude = cfg.get_double("amplitude", 1.0);
  } else {
    width = cfg.get_double("width", 1.5);
  }
  cfg.reject_unknown();
  if (path.empty()) throw ConfigError("tpn-responses needs model=<container>");
  const TpnModelXd model = tpn_from_container(read_container(path));

  int size = exact_sqrt(model.n_s());
  Eigen::Index n_s = 0;
  const SimpleCells cells = simple_cells(simple, size, n_s);
  if (size == 0 || n_s != model.n_s()) throw ConfigError("tpn input size does not match the stimulus source");

  auto codes = [&](const ImageFrame& f) {
    FrameWindowXd w;
    w.frames = cells(f).replicate(1, model.n_tau);
    Eigen::VectorXd z(model.n_1() + model.n_2());
    if (mode == "encoder") {
      z << tpn_encode_z1(Eigen::VectorXd(w.frames.col(0)), model), tpn_encode_z2(w, model);
    } else {
      const auto c = tpn_infer(w, model, hyper);
      z << c.z1.col(0), c.z2;
    }
    return z;
  };
  auto csv = open_out(dir / "responses.csv");
  const auto group = [&](Eigen::Index i) {
    return i < model.n_1() ? "z1," + std::to_string(i) : "z2," + std::to_string(i - model.n_1());
  };
  if (stimulus == "edge") {
    if (orientations < 1 || pstep <= 0) throw ConfigError("edge grid is empty");
    std::vector<double> thetas, positions;
    for (int o = 0; o < orientations; ++o) thetas.push_back(o * std::numbers::pi / orientations);
    for (double p = pmin; p <= pmax + 1e-9; p += pstep) positions.push_back(p);
    const auto rows = response_profile(codes, size, thetas, positions, softness, amplitude);
    csv << "group,cell,orientation,position,activation\n";
    for (const auto& row : rows)
      csv << group(row.cell) << ',' << row.orientation << ',' << row.position << ',' << row.activation << '\n';
  } else {
    csv << "group,cell,x,y,activation\n";
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const Eigen::VectorXd z = codes(gaussian_bump(size, width, x, y));
        for (Eigen::Index i = 0; i < z.size(); ++i) csv << group(i) << ',' << x << ',' << y << ',' << z(i) << '\n';
      }
  }
  StageResult r;
  r.summary["units"] = str(model.n_1() + model.n_2());
  return r;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"preprocess",  "gen",     "train-sc", "train-psd",    "train-local",
                                                 "train-tpn",   "analyze", "describe", "tpn-responses"};
  return names;
}

StageResult run_stage(const std::string& stage, Config& cfg, const fs::path& dir) {
  if (stage == "preprocess") return stage_preprocess(cfg, dir);
  if (stage == "gen") return stage_gen(cfg, dir);
  if (stage == "train-sc") return stage_train_patch(cfg, dir, false);
  if (stage == "train-psd") return stage_train_patch(cfg, dir, true);
  if (stage == "train-local") return stage_train_local(cfg, dir);
  if (stage == "train-tpn") return stage_train_tpn(cfg, dir);
  if (stage == "analyze") return stage_analyze(cfg, dir);
  if (stage == "describe") return stage_describe(cfg, dir);
  if (stage == "tpn-responses") return stage_tpn_responses(cfg, dir);
  throw ConfigError("unknown stage '" + stage + "'");
}

StageResult run_experiment(const std::string& stage, Config cfg, const fs::path& out) {
  const bool scratch = out.empty();
  const fs::path target = scratch ? fs::temp_directory_path() / "tpn-scratch" : out;
  const fs::path staging =
      target.parent_path() / ("." + target.filename().string() + ".staging-" + std::to_string(::getpid()));
  fs::remove_all(staging);
  fs::create_directories(staging);
  try {
    cfg.get_string("stage", stage);
    StageResult r = run_stage(stage, cfg, staging);
    write_text(staging / "config.resolved", cfg.resolved_text());
    std::string summary;
    for (const auto& [k, v] : r.summary) summary += k + "=" + v + "\n";
    write_text(staging / "summary.txt", summary);
    if (scratch) {
      fs::remove_all(staging);
    } else {
      fs::remove_all(target);
      fs::rename(staging, target);
    }
    return r;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
}

void stamp_config(Container& c, const Config& cfg) {
  for (const auto& [k, v] : cfg.resolved()) {
    if (k == "threads" || k == "deterministic" || k == "out") continue;
    c.metadata["config." + k] = v;
  }
  const auto seed = cfg.resolved().find("seed");
  if (seed != cfg.resolved().end()) c.metadata["seed"] = seed->second;
}

double recovery_fraction(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& learned, double threshold) {
  require(truth.rows() == learned.rows(), "recovery_fraction: dimension mismatch");
  if (truth.cols() == 0) return 0.0;
  const Eigen::MatrixXd cos =
      (truth.colwise().normalized().transpose() * learned.colwise().normalized()).cwiseAbs();
  int hits = 0;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) hits += cos.row(j).maxCoeff() > threshold;
  return static_cast<double>(hits) / static_cast<double>(truth.cols());
}

TpnResponseMaps tpn_gaussian_responses(const TpnModelXd& model, int size, double width, const SparseHyper& hyper) {
  require(model.n_s() == static_cast<Eigen::Index>(size) * size, "tpn_gaussian_responses: model is not on pixels");
  TpnResponseMaps maps;
  maps.z1.assign(static_cast<std::size_t>(model.n_1()), Eigen::MatrixXd(size, size));
  maps.z2.assign(static_cast<std::size_t>(model.n_2()), Eigen::MatrixXd(size, size));
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      FrameWindowXd w;
      w.frames = Eigen::VectorXd(gaussian_bump(size, width, x, y).flat()).replicate(1, model.n_tau);
      const auto code = tpn_infer(w, model, hyper);
      for (Eigen::Index k = 0; k < model.n_1(); ++k) maps.z1[static_cast<std::size_t>(k)](y, x) = code.z1(k, 0);
      for (Eigen::Index k = 0; k < model.n_2(); ++k) maps.z2[static_cast<std::size_t>(k)](y, x) = code.z2(k);
    }
  return maps;
}

double median_invariance_ratio(const std::vector<Eigen::MatrixXd>& maps) {
  std::vector<double> ratios;
  for (const auto& m : maps) {
    const double r = invariance_index(m).ratio;
    if (!std::isnan(r)) ratios.push_back(r);
  }
  if (ratios.empty()) return std::nan("");
  std::sort(ratios.begin(), ratios.end());
  const std::size_t n = ratios.size();
  return n % 2 ? ratios[n / 2] : 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]);
}

ImageFrame filter_mosaic(const std::vector<ImageFrame>& filters, int columns) {
  require(!filters.empty() && columns > 0, "filter_mosaic: nothing to lay out");
  int fw = 0, fh = 0;
  for (const auto& f : filters) {
    fw = std::max(fw, f.width());
    fh = std::max(fh, f.height());
  }
  const int count = static_cast<int>(filters.size());
  const int rows = (count + columns - 1) / columns;
  ImageFrame out(columns * (fw + 1) + 1, rows * (fh + 1) + 1, 0.0);
  for (int k = 0; k < count; ++k) {
    const ImageFrame& f = filters[static_cast<std::size_t>(k)];
    const double peak = f.pixels().cwiseAbs().maxCoeff();
    const int ox = 1 + (k % columns) * (fw + 1), oy = 1 + (k / columns) * (fh + 1);
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) out(ox + x, oy + y) = peak > 0 ? f(x, y) / peak : 0.0;
  }
  return out;
}

}  // namespace tpn
