#include "mapo/pgm.hpp"

#include <cctype>

#include "binary_io.hpp"
#include "mapo/error.hpp"

namespace mapo::pgm {

std::string encode(const Image& image) {
  require(image.maxval > 0, "pgm maxval must be positive");
  require(image.pixels.size() == image.width * image.height, "pgm pixel count does not match its size");
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                    std::to_string(image.maxval) + "\n";
  const bool wide = image.maxval > 255;
  for (auto v : image.pixels) {
    require(v <= image.maxval, "pgm sample exceeds maxval");
    if (wide) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  return out;
}

namespace {

class HeaderParser {
 public:
  HeaderParser(std::string_view bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  std::size_t number() {
    skip_space_and_comments();
    std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > 1'000'000) fail("header value too large");
      ++pos_;
    }
    if (pos_ == start) fail("malformed header");
    return v;
  }

  void magic() {
    if (bytes_.substr(0, 2) != "P5") fail("not a binary greymap (P5)");
    pos_ = 2;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) fail("malformed header");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& why) const { throw DataError(name_ + ": " + why); }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  const std::string& name_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode(std::string_view bytes, const std::string& name) {
  HeaderParser hp(bytes, name);
  hp.magic();
  Image img;
  img.width = hp.number();
  img.height = hp.number();
  const std::size_t maxval = hp.number();
  if (img.width == 0 || img.height == 0) hp.fail("zero image extent");
  if (maxval == 0 || maxval > 65535) hp.fail("maxval out of range");
  img.maxval = static_cast<std::uint16_t>(maxval);
  const std::size_t start = hp.raster_start();
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t need = img.width * img.height * bytes_per;
  if (bytes.size() < start + need)
    hp.fail("truncated raster: expected " + std::to_string(need) + " bytes, found " +
            std::to_string(bytes.size() - std::min(bytes.size(), start)));
  if (bytes.size() > start + need) hp.fail("trailing bytes after raster");
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    std::uint16_t v;
    if (bytes_per == 2) {
      v = static_cast<std::uint16_t>((static_cast<unsigned char>(bytes[start + 2 * i]) << 8) |
                                     static_cast<unsigned char>(bytes[start + 2 * i + 1]));
    } else {
      v = static_cast<unsigned char>(bytes[start + i]);
    }
    if (v > maxval) hp.fail("sample exceeds maxval");
    img.pixels[i] = v;
  }
  return img;
}

void write(const std::string& path, const Image& image) { io::write_file(path, encode(image)); }

Image read(const std::string& path) { return decode(io::read_file(path), path); }

}  // namespace mapo::pgm
