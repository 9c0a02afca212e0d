#include "pulsemap/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "pulsemap/error.hpp"

namespace pulsemap {

std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

namespace {

void read_token(std::istream& in, std::string& tok) {
  tok.clear();
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return;
      continue;
    }
    tok.push_back(c);
  }
}

struct NetpbmHeader {
  std::size_t width = 0, height = 0;
};

NetpbmHeader read_header(std::istream& in, const std::string& magic, const std::string& path) {
  std::string tok;
  read_token(in, tok);
  if (tok != magic) throw ParseError(path + ": expected " + magic + " header");
  NetpbmHeader h;
  try {
    read_token(in, tok);
    h.width = std::stoul(tok);
    read_token(in, tok);
    h.height = std::stoul(tok);
    read_token(in, tok);
    if (std::stoul(tok) != 255) throw ParseError(path + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw ParseError(path + ": malformed header");
  }
  return h;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Matrix& unit_values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << unit_values.cols() << ' ' << unit_values.rows() << "\n255\n";
  for (Eigen::Index y = 0; y < unit_values.rows(); ++y)
    for (Eigen::Index x = 0; x < unit_values.cols(); ++x)
      out.put(static_cast<char>(quantize_unit(unit_values(y, x))));
}

Matrix read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  auto h = read_header(in, "P5", path.string());
  Matrix m(static_cast<Eigen::Index>(h.height), static_cast<Eigen::Index>(h.width));
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x) {
      char c;
      if (!in.get(c)) throw ParseError(path.string() + ": truncated pixel data");
      m(y, x) = double(static_cast<unsigned char>(c)) / 255.0;
    }
  return m;
}

void write_ppm(const std::filesystem::path& path, const ImageTensor& image) {
  if (image.channels != 3) throw DataError("PPM export needs a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (double v : image.values) out.put(static_cast<char>(quantize_unit(v)));
}

ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  auto h = read_header(in, "P6", path.string());
  ImageTensor img;
  img.height = h.height;
  img.width = h.width;
  img.channels = 3;
  img.values.resize(h.width * h.height * 3);
  for (double& v : img.values) {
    char c;
    if (!in.get(c)) throw ParseError(path.string() + ": truncated pixel data");
    v = double(static_cast<unsigned char>(c)) / 255.0;
  }
  return img;
}

}  // namespace pulsemap
