#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pifukit/common.hpp"

namespace pifukit {

/// Row-major, channel-interleaved float image.
struct Map2D {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Map2D() = default;
  Map2D(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool operator==(const Map2D&) const = default;
};

// F32MAP: "F32M", u32 width, u32 height, u32 channels (little-endian), then
// width*height*channels little-endian IEEE-754 floats.
std::string encode_f32map(const Map2D& map);
Map2D decode_f32map(const std::string& bytes);
void write_f32map(const std::filesystem::path& path, const Map2D& map);
Map2D read_f32map(const std::filesystem::path& path);

/// Binary PGM (P5) of one channel, values scaled by `scale` and clamped to 0..255.
void write_pgm(const std::filesystem::path& path, const Map2D& map, int channel, double scale);

// Little-endian helpers shared by the binary formats.
void put_u32_le(std::string& out, std::uint32_t v);
void put_f32_le(std::string& out, float v);
std::uint32_t get_u32_le(const char* p);
float get_f32_le(const char* p);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace pifukit
