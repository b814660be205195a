#include "pcn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pcn/errors.hpp"

namespace pcn {

namespace {

void skip_pnm_whitespace(std::istream& in) {
  int c = in.peek();
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else {
      in.get();
    }
    c = in.peek();
  }
}

int read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_whitespace(in);
  int v = -1;
  in >> v;
  if (!in || v < 0) throw FormatError("malformed PNM header in '" + path + "'");
  return v;
}

uint8_t to_byte(double v) {
  const double scaled = std::round(v * 255.0);
  return static_cast<uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_ppm: want [3,h,w], got " + shape_str(image.shape()));
  }
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  const auto& d = image.data();
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) row[x * 3 + c] = to_byte(d[(c * h + y) * w + x]);
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw FormatError("write failed for '" + path + "'");
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw FormatError("'" + path + "' is not a binary PPM");
  const int w = read_pnm_int(in, path);
  const int h = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (maxval != 255) throw FormatError("'" + path + "': unsupported maxval");
  in.get();  // single whitespace after maxval
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError("truncated pixel data in '" + path + "'");
  }
  std::vector<double> data(raw.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        data[(static_cast<size_t>(c) * h + y) * w + x] = raw[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
  return Tensor::from_data({3, h, w}, std::move(data));
}

void write_pgm8(const std::string& path, const Tensor& mask) {
  if (mask.rank() != 2) throw DimensionError("write_pgm8: want [h,w], got " + shape_str(mask.shape()));
  const int h = mask.dim(0), w = mask.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  const auto& d = mask.data();
  std::vector<uint8_t> raw(d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    const double v = d[i];
    if (v != std::floor(v) || v < 0.0 || v > 255.0) {
      throw LabelError("write_pgm8: mask value " + std::to_string(v) + " is not a byte class id");
    }
    raw[i] = static_cast<uint8_t>(v);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

Tensor read_pgm8(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw FormatError("'" + path + "' is not a binary PGM");
  const int w = read_pnm_int(in, path);
  const int h = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (maxval != 255) throw FormatError("'" + path + "': unsupported maxval");
  in.get();
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError("truncated pixel data in '" + path + "'");
  }
  std::vector<double> data(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) data[i] = static_cast<double>(raw[i]);
  return Tensor::from_data({h, w}, std::move(data));
}

void write_pgm16(const std::string& path, const std::vector<double>& plane,
                 int h, int w, double lo, double hi) {
  if (static_cast<int64_t>(plane.size()) != static_cast<int64_t>(h) * w) {
    throw DimensionError("write_pgm16: plane size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << "P5\n" << w << " " << h << "\n65535\n";
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<uint8_t> raw(plane.size() * 2);
  for (size_t i = 0; i < plane.size(); ++i) {
    const double t = std::clamp((plane[i] - lo) / span, 0.0, 1.0);
    const uint16_t v = static_cast<uint16_t>(std::lround(t * 65535.0));
    raw[i * 2] = static_cast<uint8_t>(v >> 8);  // PNM 16-bit is big-endian
    raw[i * 2 + 1] = static_cast<uint8_t>(v & 0xff);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

}  // namespace pcn
