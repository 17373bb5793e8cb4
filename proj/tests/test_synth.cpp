#include "doctest.h"
#include "tpn/synth.hpp"

#include <numbers>

using namespace tpn;

TEST_CASE("moving gaussian frames") {
  const auto seq = moving_gaussian(40, 10, 1.5, 3);
  REQUIRE(seq.frames.size() == 40);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& f = seq.frames[t];
    CHECK(f.width() == 10);
    CHECK(f.pixels().minCoeff() >= 0.0);
    CHECK(f.pixels().maxCoeff() <= 1.0);
    CHECK(f(seq.centers[t].x, seq.centers[t].y) == 1.0);
  }
  int translations = 0;
  for (std::size_t t = 0; t + 1 < seq.frames.size(); ++t) {
    if (seq.centers[t + 1].x != seq.centers[t].x + 1) {
      CHECK(seq.centers[t + 1].x == 0);
      CHECK(seq.centers[t].x == 9);
      continue;
    }
    CHECK(seq.centers[t + 1].y == seq.centers[t].y);
    ++translations;
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x + 1 < 10; ++x) CHECK(std::abs(seq.frames[t + 1](x + 1, y) - seq.frames[t](x, y)) < 1e-6);
  }
  CHECK(translations > 30);
}

TEST_CASE("moving gaussian is deterministic per seed") {
  const auto a = moving_gaussian(30, 10, 1.5, 9);
  const auto b = moving_gaussian(30, 10, 1.5, 9);
  for (std::size_t t = 0; t < 30; ++t) CHECK(a.frames[t].pixels() == b.frames[t].pixels());
}

TEST_CASE("shifting window walk") {
  ImageFrame img = dead_leaves_image(80, 70, 1);
  const auto seq = shifting_window(img, 30, 30, 200, 4);
  REQUIRE(seq.frames.size() == 200);
  for (std::size_t t = 0; t + 1 < seq.positions.size(); ++t) {
    const int dx = std::abs(seq.positions[t + 1].x - seq.positions[t].x);
    const int dy = std::abs(seq.positions[t + 1].y - seq.positions[t].y);
    const int cheb = std::max(dx, dy);
    CHECK((cheb == 1 || cheb == 2));
    CHECK((dx == 0 || dy == 0 || dx == dy));
  }
  for (std::size_t t = 0; t < seq.positions.size(); ++t) {
    CHECK(seq.positions[t].x >= 0);
    CHECK(seq.positions[t].x + 30 <= 80);
    CHECK(seq.frames[t](0, 0) == img(seq.positions[t].x, seq.positions[t].y));
  }
  CHECK(shifting_window(img, 30, 30, 0, 4).frames.empty());
  const auto again = shifting_window(img, 30, 30, 200, 4);
  const auto other = shifting_window(img, 30, 30, 200, 5);
  bool same = true, differ = false;
  for (std::size_t t = 0; t < 200; ++t) {
    same = same && again.positions[t].x == seq.positions[t].x && again.positions[t].y == seq.positions[t].y;
    differ = differ || other.positions[t].x != seq.positions[t].x || other.positions[t].y != seq.positions[t].y;
  }
  CHECK(same);
  CHECK(differ);
  CHECK_THROWS_AS(shifting_window(img, 100, 30, 5, 1), InvalidInput);
}

TEST_CASE("edge stimulus geometry") {
  const auto a = edge_stimulus(0.0, 0.0, 16);
  const auto b = edge_stimulus(std::numbers::pi, 0.0, 16);
  CHECK((a.pixels() + b.pixels()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(a.pixels().mean()) < 1e-12);
  // orientation 0: the normal is +x, so columns mirror with opposite sign
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK(a(x, y) == doctest::Approx(-a(15 - x, y)));
  CHECK_THROWS_AS(edge_stimulus(0.0, 20.0, 16), InvalidInput);
}

TEST_CASE("rotating an edge matches generating it rotated") {
  const int size = 21;
  for (double base : {0.0, 0.4, 1.1}) {
    const double delta = 0.5;
    const auto rotated = rotate_frame(edge_stimulus(base, 0.0, size, 1.5), delta);
    const auto direct = edge_stimulus(base + delta, 0.0, size, 1.5);
    // compare inside the inscribed disc where the rotation has support
    double acc = 0;
    int n = 0;
    const double c = 0.5 * (size - 1);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if ((x - c) * (x - c) + (y - c) * (y - c) <= (c - 1) * (c - 1)) {
          const double d = rotated(x, y) - direct(x, y);
          acc += d * d;
          ++n;
        }
    CHECK(std::sqrt(acc / n) < 1e-2);
  }
}

TEST_CASE("dead leaves image is deterministic and in range") {
  const auto a = dead_leaves_image(64, 48, 7);
  const auto b = dead_leaves_image(64, 48, 7);
  CHECK(a.pixels() == b.pixels());
  CHECK(a.pixels().minCoeff() >= 0.0);
  CHECK(a.pixels().maxCoeff() <= 1.0);
  CHECK(a.pixels().maxCoeff() - a.pixels().minCoeff() > 0.3);
}
