#include "doctest.h"
#include "tpn/preprocess.hpp"

#include <cmath>

using namespace tpn;

namespace {

ImageFrame noise_frame(int w, int h, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  ImageFrame f(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) f(x, y) = scale * rng.normal();
  return f;
}

}  // namespace

TEST_CASE("constant frame has zero local mean residual") {
  ImageFrame f(17, 13, 5.0);
  PreprocessConfig cfg;
  cfg.gaussian_width = 2.0;
  const auto out = local_mean_subtract(f, cfg);
  CHECK(out.pixels().cwiseAbs().maxCoeff() < 1e-12);
  CHECK(preprocess(f, cfg).pixels().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single pixel frame maps to zero") {
  ImageFrame f(1, 1, 3.7);
  CHECK(local_mean_subtract(f, PreprocessConfig{}).pixels()(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("impulse response matches a directly summed truncated kernel") {
  ImageFrame f(5, 5, 0.0);
  f(2, 2) = 1.0;
  PreprocessConfig cfg;
  cfg.gaussian_width = 1.0;
  // every offset in a 5x5 frame lies within the 3 sigma support
  double total = 0.0;
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx) total += std::exp(-(dx * dx + dy * dy) / 2.0);
  const double k00 = 1.0 / total;
  const auto out = local_mean_subtract(f, cfg);
  CHECK(out(2, 2) == doctest::Approx(1.0 - k00).epsilon(1e-12));

  const auto k = gaussian_kernel_at(5, 5, 2, 2, 1.0);
  CHECK(k(2, 2) == doctest::Approx(k00).epsilon(1e-12));
  CHECK(k.pixels().sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("border pixels renormalize over the in-bounds support") {
  const auto k = gaussian_kernel_at(9, 9, 0, 0, 1.5);
  CHECK(k.pixels().sum() == doctest::Approx(1.0).epsilon(1e-12));
  double total = 0.0;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x)
      if (x <= 4 && y <= 4) total += std::exp(-(x * x + y * y) / (2 * 1.5 * 1.5));
  CHECK(k(1, 2) == doctest::Approx(std::exp(-(1 + 4) / (2 * 1.5 * 1.5)) / total).epsilon(1e-12));
}

TEST_CASE("zero frame stays zero and finite") {
  ImageFrame f(20, 20, 0.0);
  const auto out = preprocess(f, PreprocessConfig{});
  CHECK(out.all_finite());
  CHECK(out.pixels().cwiseAbs().maxCoeff() == 0.0);
  PreprocessConfig q;
  q.form = CutoffForm::Quadrature;
  CHECK(preprocess(f, q).pixels().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("contrast normalization makes unit local deviation on noise") {
  const ImageFrame f = noise_frame(128, 128, 7, 3.0);
  PreprocessConfig cfg;
  cfg.cutoff = 1e-3;
  const auto out = contrast_normalize(local_mean_subtract(f, cfg), cfg);
  const auto dev = local_deviation(out, cfg.gaussian_width);
  const int margin = 34;
  double worst = 0.0;
  for (int y = margin; y < 128 - margin; ++y)
    for (int x = margin; x < 128 - margin; ++x) worst = std::max(worst, std::abs(dev(x, y) - 1.0));
  CHECK(worst < 0.1);
}

TEST_CASE("scale invariance above the cutoff") {
  const ImageFrame f = noise_frame(64, 64, 11);
  ImageFrame g(PixelMatrix(f.pixels() * 10.0));
  PreprocessConfig cfg;
  cfg.gaussian_width = 4.0;
  cfg.cutoff = 1e-3;
  const auto a = preprocess(f, cfg);
  const auto b = preprocess(g, cfg);
  CHECK((a.pixels() - b.pixels()).cwiseAbs().maxCoeff() < 1e-6);
  cfg.form = CutoffForm::Quadrature;
  cfg.cutoff = 1e-5;
  CHECK((preprocess(f, cfg).pixels() - preprocess(g, cfg).pixels()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("default cutoff is relative to the global deviation") {
  const ImageFrame f = noise_frame(32, 32, 3, 2.0);
  PreprocessConfig cfg;
  cfg.gaussian_width = 3.0;
  const auto centered = local_mean_subtract(f, cfg);
  const double mean = centered.pixels().mean();
  const double sd = std::sqrt((centered.pixels().array() - mean).square().mean());
  CHECK(resolve_cutoff(centered, cfg) == doctest::Approx(0.1 * sd));
  cfg.cutoff = 0.25;
  CHECK(resolve_cutoff(centered, cfg) == 0.25);
}

TEST_CASE("preprocess is nearly idempotent on normalized noise") {
  const ImageFrame f = noise_frame(96, 96, 5);
  PreprocessConfig cfg;
  cfg.gaussian_width = 4.0;
  const auto once = preprocess(f, cfg);
  const auto twice = preprocess(once, cfg);
  const double rms = std::sqrt(once.pixels().array().square().mean());
  const double diff = std::sqrt((twice.pixels() - once.pixels()).array().square().mean());
  CHECK(diff < 0.2 * rms);
}

TEST_CASE("gaussian width changes the output") {
  ImageFrame f(40, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) f(x, y) = 0.01 * x * x + 0.3 * y;
  PreprocessConfig a, b;
  a.gaussian_width = 2.0;
  b.gaussian_width = 6.0;
  CHECK((preprocess(f, a).pixels() - preprocess(f, b).pixels()).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("re-applying the mean to a processed constant frame gives zero") {
  ImageFrame f(30, 30, 2.5);
  PreprocessConfig cfg;
  cfg.gaussian_width = 3.0;
  const auto out = local_mean_subtract(f, cfg);
  CHECK(gaussian_local_mean(out, 3.0).pixels().cwiseAbs().maxCoeff() < 1e-6 * 2.5);
}

TEST_CASE("invalid frames are rejected") {
  CHECK_THROWS_AS(local_mean_subtract(ImageFrame(), PreprocessConfig{}), InvalidInput);
  ImageFrame f(4, 4, 0.0);
  f(1, 1) = std::nan("");
  CHECK_THROWS_AS(preprocess(f, PreprocessConfig{}), InvalidInput);
  PreprocessConfig bad;
  bad.gaussian_width = 0.0;
  CHECK_THROWS_AS(preprocess(ImageFrame(4, 4, 1.0), bad), InvalidInput);
}

TEST_CASE("pgm round trip preserves 8-bit values") {
  ImageFrame f(7, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) f(x, y) = (x * 5 + y * 3) / 255.0;
  const auto path = std::filesystem::temp_directory_path() / "tpn_test_roundtrip.pgm";
  write_pgm(path, f);
  const auto g = read_pgm(path);
  std::filesystem::remove(path);
  REQUIRE(g.width() == 7);
  REQUIRE(g.height() == 5);
  CHECK((g.pixels() - f.pixels()).cwiseAbs().maxCoeff() < 1e-12);
}
