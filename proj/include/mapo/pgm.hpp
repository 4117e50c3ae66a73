#pragma once

// Binary portable greymap (P5). Samples wider than 8 bits are stored
// most-significant byte first, as the format requires.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mapo::pgm {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint16_t maxval = 65535;
  std::vector<std::uint16_t> pixels;  // row-major

  friend bool operator==(const Image&, const Image&) = default;
};

std::string encode(const Image& image);
/// `name` is used in error messages.
Image decode(std::string_view bytes, const std::string& name);

void write(const std::string& path, const Image& image);
Image read(const std::string& path);

}  // namespace mapo::pgm
