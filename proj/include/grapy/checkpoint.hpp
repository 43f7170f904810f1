#ifndef GRAPY_CHECKPOINT_HPP
#define GRAPY_CHECKPOINT_HPP

// Parameter checkpoint container, little-endian throughout:
//
//   "GRPY"  u32 version  u32 scalar_bytes (4|8)
//   u32 manifest_bytes  manifest (UTF-8 "key\tvalue" lines)
//   u64 record_count
//   per record: u32 name_bytes, name, u32 rank, rank x u64 extents, raw values

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grapy/io.hpp"
#include "grapy/params.hpp"

namespace grapy {

inline constexpr char kCheckpointMagic[4] = {'G', 'R', 'P', 'Y'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered key/value lines stored alongside the parameters.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  std::string require(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string serialize() const;
  static Manifest parse(const std::string& text);

  friend bool operator==(const Manifest&, const Manifest&) = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void write_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  unsigned char bytes[sizeof(T)];
  const auto offset = static_cast<long long>(is.tellg());
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw CheckpointError(std::string("truncated checkpoint reading ") + what + " at offset " +
                          std::to_string(offset));
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string read_bytes(std::istream& is, std::size_t count, const char* what);

}  // namespace detail

template <typename Scalar>
struct Checkpoint {
  Manifest manifest;
  ParamStore<Scalar> params;
};

template <typename Scalar>
void write_checkpoint(std::ostream& os, const Checkpoint<Scalar>& ckpt) {
  static_assert(sizeof(Scalar) == 4 || sizeof(Scalar) == 8);
  os.write(kCheckpointMagic, 4);
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint32_t>(os, sizeof(Scalar));
  const std::string manifest = ckpt.manifest.serialize();
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(manifest.size()));
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  detail::write_le<std::uint64_t>(os, ckpt.params.size());
  for (const auto& [name, tensor] : ckpt.params) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (Index e : tensor.shape()) detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    for (Scalar v : tensor.span()) detail::write_le<Scalar>(os, v);
  }
  if (!os) throw CheckpointError("failed writing checkpoint");
}

// Width of the stored scalars (4 or 8), read from the header only.
std::uint32_t checkpoint_scalar_bytes(std::istream& is);
std::uint32_t checkpoint_scalar_bytes(const std::filesystem::path& path);

template <typename Scalar>
Checkpoint<Scalar> read_checkpoint(std::istream& is) {
  const std::uint32_t width = checkpoint_scalar_bytes(is);
  if (width != sizeof(Scalar)) {
    throw CheckpointError("checkpoint stores " + std::to_string(width * 8) +
                          "-bit values, reader expects " + std::to_string(sizeof(Scalar) * 8));
  }
  Checkpoint<Scalar> ckpt;
  const auto manifest_size = detail::read_le<std::uint32_t>(is, "manifest length");
  ckpt.manifest = Manifest::parse(detail::read_bytes(is, manifest_size, "manifest"));
  const auto count = detail::read_le<std::uint64_t>(is, "record count");
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto name_size = detail::read_le<std::uint32_t>(is, "name length");
    std::string name = detail::read_bytes(is, name_size, "parameter name");
    const auto rank = detail::read_le<std::uint32_t>(is, "rank");
    if (rank > 8) throw CheckpointError("implausible rank " + std::to_string(rank) + " for " + name);
    Shape shape;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto e = detail::read_le<std::uint64_t>(is, "extent");
      if (e == 0 || e > (1ull << 32)) {
        throw CheckpointError("implausible extent " + std::to_string(e) + " for " + name);
      }
      shape.push_back(static_cast<Index>(e));
    }
    Tensor<Scalar> t(shape);
    for (Scalar& v : t.span()) v = detail::read_le<Scalar>(is, "value");
    try {
      ckpt.params.add(name, std::move(t));
    } catch (const std::exception& e) {
      throw CheckpointError(e.what());
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("trailing bytes after last checkpoint record");
  }
  return ckpt;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& ckpt);

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

}  // namespace grapy

#endif  // GRAPY_CHECKPOINT_HPP
