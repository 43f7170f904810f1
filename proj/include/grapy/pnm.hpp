#ifndef GRAPY_PNM_HPP
#define GRAPY_PNM_HPP

// Binary netpbm I/O: P6 (8-bit RGB) for images, P5 (8-bit grey) for label maps.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "grapy/label_map.hpp"

namespace grapy {

class PnmError : public std::runtime_error {
 public:
  PnmError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct RgbImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

std::string encode_ppm(const RgbImage& image);
RgbImage decode_ppm(const std::string& bytes);
std::string encode_pgm(const LabelMap& labels);
LabelMap decode_pgm(const std::string& bytes);

void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_pgm(const std::filesystem::path& path);

}  // namespace grapy

#endif  // GRAPY_PNM_HPP
