#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace contextseg {

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(std::size_t(h) * w * 3) {}
  std::uint8_t* at(int y, int x) { return &pixels[(std::size_t(y) * width + x) * 3]; }
  const std::uint8_t* at(int y, int x) const {
    return &pixels[(std::size_t(y) * width + x) * 3];
  }
  bool operator==(const RgbImage&) const = default;
};

// Single channel, maxval up to 65535. Samples above 255 are stored as two
// big-endian bytes on disk.
struct GrayImage {
  int height = 0;
  int width = 0;
  int maxval = 255;
  std::vector<std::uint16_t> pixels;

  GrayImage() = default;
  GrayImage(int h, int w, int max = 255)
      : height(h), width(w), maxval(max), pixels(std::size_t(h) * w) {}
  std::uint16_t& at(int y, int x) { return pixels[std::size_t(y) * width + x]; }
  std::uint16_t at(int y, int x) const { return pixels[std::size_t(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

// Binary P6 / P5. Readers throw DataError on malformed headers or truncated
// rasters, IoError when the file cannot be opened; writers throw IoError.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace contextseg
