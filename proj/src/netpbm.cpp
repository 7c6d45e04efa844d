#include "contextseg/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "contextseg/error.hpp"

namespace contextseg {
namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::string& header,
               const char* bytes, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << header;
  out.write(bytes, static_cast<std::streamsize>(size));
  if (!out) throw IoError("short write to " + path.string());
}

// Header fields are whitespace separated; '#' starts a comment to end of line.
// Exactly one whitespace byte separates maxval from the raster.
struct Header {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t raster = 0;
};

Header parse_header(const std::string& buf, const char* magic,
                    const std::filesystem::path& path) {
  if (buf.size() < 2 || buf[0] != magic[0] || buf[1] != magic[1])
    throw DataError(path.string() + ": expected magic " + magic);
  std::size_t pos = 2;
  auto next_int = [&]() {
    for (;;) {
      while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
      if (pos < buf.size() && buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
      throw DataError(path.string() + ": malformed header");
    long v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + (buf[pos++] - '0');
      if (v > 1 << 24) throw DataError(path.string() + ": header value too large");
    }
    return static_cast<int>(v);
  };
  Header h;
  h.width = next_int();
  h.height = next_int();
  h.maxval = next_int();
  if (h.width < 1 || h.height < 1) throw DataError(path.string() + ": empty image");
  if (h.maxval < 1 || h.maxval > 65535) throw DataError(path.string() + ": bad maxval");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw DataError(path.string() + ": malformed header");
  h.raster = pos + 1;
  return h;
}

std::string header_text(const char* magic, int w, int h, int maxval) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
         std::to_string(maxval) + "\n";
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != std::size_t(image.height) * image.width * 3)
    throw DataError("rgb image size does not match its extent");
  write_all(path, header_text("P6", image.width, image.height, 255),
            reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const std::string buf = read_all(path);
  const Header h = parse_header(buf, "P6", path);
  if (h.maxval != 255) throw DataError(path.string() + ": only 8-bit PPM is supported");
  RgbImage img(h.height, h.width);
  if (buf.size() - h.raster < img.pixels.size())
    throw DataError(path.string() + ": truncated raster");
  std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(h.raster), img.pixels.size(),
              img.pixels.begin());
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  if (image.pixels.size() != std::size_t(image.height) * image.width)
    throw DataError("gray image size does not match its extent");
  if (image.maxval < 1 || image.maxval > 65535) throw DataError("bad pgm maxval");
  std::string raster;
  const bool wide = image.maxval > 255;
  raster.reserve(image.pixels.size() * (wide ? 2 : 1));
  for (std::uint16_t v : image.pixels) {
    if (v > image.maxval) throw DataError("pgm sample exceeds maxval");
    if (wide) raster.push_back(static_cast<char>(v >> 8));
    raster.push_back(static_cast<char>(v & 0xff));
  }
  write_all(path, header_text("P5", image.width, image.height, image.maxval), raster.data(),
            raster.size());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const std::string buf = read_all(path);
  const Header h = parse_header(buf, "P5", path);
  GrayImage img(h.height, h.width, h.maxval);
  const bool wide = h.maxval > 255;
  const std::size_t need = img.pixels.size() * (wide ? 2 : 1);
  if (buf.size() - h.raster < need) throw DataError(path.string() + ": truncated raster");
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + h.raster);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::uint16_t v = wide ? std::uint16_t(p[2 * i] << 8 | p[2 * i + 1]) : p[i];
    if (v > h.maxval) throw DataError(path.string() + ": sample exceeds maxval");
    img.pixels[i] = v;
  }
  return img;
}

}  // namespace contextseg
