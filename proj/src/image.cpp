#include "tpn/image.hpp"

#include <fstream>
#include <sstream>

namespace tpn {

namespace {

// Skips whitespace and '#' comments between PGM header tokens.
int read_header_int(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  in >> v;
  if (!in) throw InvalidInput("read_pgm: malformed header");
  return v;
}

}  // namespace

ImageFrame read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("read_pgm: cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw InvalidInput("read_pgm: not a binary PGM (P5): " + path.string());
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw InvalidInput("read_pgm: unsupported geometry or depth in " + path.string());
  in.get();  // single whitespace before raster
  std::vector<unsigned char> raster(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (in.gcount() != static_cast<std::streamsize>(raster.size()))
    throw InvalidInput("read_pgm: truncated raster in " + path.string());
  ImageFrame frame(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) frame(x, y) = raster[static_cast<std::size_t>(y) * w + x] / double(maxval);
  return frame;
}

void write_pgm(const std::filesystem::path& path, const ImageFrame& frame, double lo, double hi) {
  require(!frame.empty(), "write_pgm: empty frame");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("write_pgm: cannot open " + path.string());
  out << "P5\n" << frame.width() << ' ' << frame.height() << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x) {
      const double v = std::clamp((frame(x, y) - lo) / span, 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  if (!out) throw InvalidInput("write_pgm: write failed for " + path.string());
}

void write_pgm_autoscale(const std::filesystem::path& path, const ImageFrame& frame) {
  require(!frame.empty(), "write_pgm: empty frame");
  write_pgm(path, frame, frame.pixels().minCoeff(), frame.pixels().maxCoeff());
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  require(image.rgb.size() == static_cast<std::size_t>(image.width) * image.height * 3,
          "write_ppm: buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("write_ppm: cannot open " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

ImageFrame tile_filters(const std::vector<ImageFrame>& filters, int columns) {
  require(!filters.empty() && columns > 0, "tile_filters: nothing to tile");
  const int fw = filters.front().width();
  const int fh = filters.front().height();
  const int n = static_cast<int>(filters.size());
  const int rows = (n + columns - 1) / columns;
  ImageFrame out(columns * (fw + 1) + 1, rows * (fh + 1) + 1, 0.0);
  for (int k = 0; k < n; ++k) {
    require(filters[k].width() == fw && filters[k].height() == fh, "tile_filters: mixed sizes");
    const double m = filters[k].pixels().cwiseAbs().maxCoeff();
    const int ox = 1 + (k % columns) * (fw + 1);
    const int oy = 1 + (k / columns) * (fh + 1);
    for (int y = 0; y < fh; ++y)
      for (int x = 0; x < fw; ++x)
        out(ox + x, oy + y) = m > 0 ? 0.5 + 0.5 * filters[k](x, y) / m : 0.5;
  }
  return out;
}

}  // namespace tpn
