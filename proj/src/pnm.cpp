#include "grapy/pnm.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "grapy/io.hpp"

namespace grapy {

namespace {

struct Header {
  Index width = 0;
  Index height = 0;
  std::size_t data_offset = 0;
};

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  void expect_magic(char kind) {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != kind) {
      throw PnmError(std::string("bad magic, expected P") + kind, 0);
    }
    pos_ = 2;
  }

  Index next_int(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    Index value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1 << 24)) throw PnmError(std::string("implausible ") + what, start);
      ++pos_;
    }
    if (pos_ == start) throw PnmError(std::string("expected ") + what, start);
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw PnmError("missing whitespace after header", pos_);
    }
    return pos_ + 1;
  }

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

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

Header read_header(const std::string& bytes, char kind, std::size_t channels) {
  HeaderReader r(bytes);
  r.expect_magic(kind);
  Header h;
  h.width = r.next_int("width");
  h.height = r.next_int("height");
  const Index maxval = r.next_int("maxval");
  if (h.width <= 0 || h.height <= 0) throw PnmError("zero image extent", 2);
  if (maxval != 255) throw PnmError("only 8-bit maxval 255 is supported", 2);
  h.data_offset = r.end_header();
  const std::size_t need = static_cast<std::size_t>(h.width * h.height) * channels;
  if (bytes.size() - h.data_offset < need) {
    throw PnmError("raster truncated: need " + std::to_string(need) + " bytes", bytes.size());
  }
  if (bytes.size() - h.data_offset > need) {
    throw PnmError("unexpected bytes after raster", h.data_offset + need);
  }
  return h;
}

std::string header(char kind, Index width, Index height) {
  return std::string("P") + kind + "\n" + std::to_string(width) + " " + std::to_string(height) +
         "\n255\n";
}

}  // namespace

std::string encode_ppm(const RgbImage& image) {
  if (static_cast<Index>(image.pixels.size()) != image.height * image.width * 3) {
    throw std::invalid_argument("rgb image buffer does not match its extents");
  }
  std::string out = header('6', image.width, image.height);
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

RgbImage decode_ppm(const std::string& bytes) {
  const Header h = read_header(bytes, '6', 3);
  RgbImage img{h.height, h.width, {}};
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), bytes.end());
  return img;
}

std::string encode_pgm(const LabelMap& labels) {
  labels.check_range(256);
  std::string out = header('5', labels.width(), labels.height());
  for (int v : labels.labels()) out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return out;
}

LabelMap decode_pgm(const std::string& bytes) {
  const Header h = read_header(bytes, '5', 1);
  std::vector<int> values;
  values.reserve(static_cast<std::size_t>(h.width * h.height));
  for (std::size_t i = h.data_offset; i < bytes.size(); ++i) {
    values.push_back(static_cast<unsigned char>(bytes[i]));
  }
  return LabelMap(h.height, h.width, std::move(values));
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  write_file_atomically(path, encode_ppm(image));
}

RgbImage read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  write_file_atomically(path, encode_pgm(labels));
}

LabelMap read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

}  // namespace grapy
