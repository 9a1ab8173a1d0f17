#include "dscomp/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace dscomp {

namespace {

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.peek();
  while (std::isspace(c) || c == '#') {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = 0;
  if (!(in >> v)) throw IoError("malformed header in " + path.string());
  return v;
}

Tensor32 read_netpbm(const std::filesystem::path& path, const char* magic, std::int64_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string m;
  in >> m;
  if (m != magic) throw IoError(path.string() + ": expected " + magic + " header, got '" + m + "'");
  const int w = read_header_int(in, path), h = read_header_int(in, path), maxval = read_header_int(in, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path.string() + ": unsupported size or maxval");
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw IoError(path.string() + ": truncated raster");
  Tensor32 img({channels, h, w});
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < static_cast<std::size_t>(channels); ++c) img[c * plane + i] = raw[i * channels + c];
  return img;
}

void write_netpbm(const std::filesystem::path& path, const Tensor32& img, const char* magic, std::int64_t channels) {
  const auto& s = img.shape();
  if (s.size() != 3 || s[0] != channels) {
    throw ShapeError(std::string("write ") + magic + ": expected [" + std::to_string(channels) + " x H x W], got " +
                     shape_str(s));
  }
  const std::size_t plane = static_cast<std::size_t>(s[1] * s[2]);
  std::vector<unsigned char> raw(plane * channels);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < static_cast<std::size_t>(channels); ++c)
      raw[i * channels + c] = static_cast<unsigned char>(std::clamp(std::round(img[c * plane + i]), 0.0f, 255.0f));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << magic << '\n' << s[2] << ' ' << s[1] << "\n255\n";
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

Tensor32 read_ppm(const std::filesystem::path& path) { return read_netpbm(path, "P6", 3); }
void write_ppm(const std::filesystem::path& path, const Tensor32& img) { write_netpbm(path, img, "P6", 3); }
Tensor32 read_pgm(const std::filesystem::path& path) { return read_netpbm(path, "P5", 1); }
void write_pgm(const std::filesystem::path& path, const Tensor32& img) { write_netpbm(path, img, "P5", 1); }

Tensor32 read_mask(const std::filesystem::path& path) {
  auto m = read_pgm(path);
  for (auto& v : m.data()) v = v >= 128.0f ? 1.0f : 0.0f;
  return m;
}

void write_mask(const std::filesystem::path& path, const Tensor32& mask) {
  Tensor32 scaled = mask;
  for (auto& v : scaled.data()) v = v > 0.5f ? 255.0f : 0.0f;
  write_pgm(path, scaled);
}

}  // namespace dscomp
