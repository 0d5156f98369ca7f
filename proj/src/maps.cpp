#include "pifukit/maps.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pifukit {

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_f32_le(std::string& out, float v) { put_u32_le(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32_le(const char* p) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[k])) << (8 * k);
  return v;
}

float get_f32_le(const char* p) { return std::bit_cast<float>(get_u32_le(p)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string encode_f32map(const Map2D& map) {
  if (map.data.size() != static_cast<std::size_t>(map.width) * map.height * map.channels)
    throw ShapeMismatch("map data length does not match its extents");
  std::string out = "F32M";
  out.reserve(16 + map.data.size() * 4);
  put_u32_le(out, static_cast<std::uint32_t>(map.width));
  put_u32_le(out, static_cast<std::uint32_t>(map.height));
  put_u32_le(out, static_cast<std::uint32_t>(map.channels));
  if constexpr (std::endian::native == std::endian::little) {
    const auto offset = out.size();
    out.resize(offset + map.data.size() * 4);
    std::memcpy(out.data() + offset, map.data.data(), map.data.size() * 4);
  } else {
    for (float v : map.data) put_f32_le(out, v);
  }
  return out;
}

Map2D decode_f32map(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "F32M") != 0) throw ParseError("not an F32MAP stream");
  Map2D map;
  map.width = static_cast<int>(get_u32_le(bytes.data() + 4));
  map.height = static_cast<int>(get_u32_le(bytes.data() + 8));
  map.channels = static_cast<int>(get_u32_le(bytes.data() + 12));
  const std::size_t n = static_cast<std::size_t>(map.width) * map.height * map.channels;
  if (bytes.size() != 16 + n * 4)
    throw ParseError("F32MAP payload is " + std::to_string(bytes.size() - 16) + " bytes, expected " +
                     std::to_string(n * 4));
  map.data.resize(n);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(map.data.data(), bytes.data() + 16, n * 4);
  } else {
    for (std::size_t i = 0; i < n; ++i) map.data[i] = get_f32_le(bytes.data() + 16 + 4 * i);
  }
  return map;
}

void write_f32map(const std::filesystem::path& path, const Map2D& map) { write_file(path, encode_f32map(map)); }

Map2D read_f32map(const std::filesystem::path& path) { return decode_f32map(read_file(path)); }

void write_pgm(const std::filesystem::path& path, const Map2D& map, int channel, double scale) {
  if (channel < 0 || channel >= map.channels) throw ShapeMismatch("PGM channel out of range");
  std::string out = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const double v = std::clamp(std::round(map.at(x, y, channel) * scale), 0.0, 255.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    }
  write_file(path, out);
}

}  // namespace pifukit
