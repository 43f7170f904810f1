#include "grapy/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace grapy {

void Manifest::set(const std::string& key, const std::string& value) {
  if (key.find_first_of("\t\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw std::invalid_argument("manifest key/value may not contain tabs or newlines: " + key);
  }
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

std::optional<std::string> Manifest::get(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string Manifest::require(const std::string& key) const {
  auto v = get(key);
  if (!v) throw CheckpointError("checkpoint manifest lacks key '" + key + "'");
  return *v;
}

std::string Manifest::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "\t" + v + "\n";
  return out;
}

Manifest Manifest::parse(const std::string& text) {
  Manifest m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw CheckpointError("malformed manifest line: " + line);
    m.set(line.substr(0, tab), line.substr(tab + 1));
  }
  return m;
}

namespace detail {

std::string read_bytes(std::istream& is, std::size_t count, const char* what) {
  std::string out(count, '\0');
  const auto offset = static_cast<long long>(is.tellg());
  if (count > 0 && !is.read(out.data(), static_cast<std::streamsize>(count))) {
    throw CheckpointError(std::string("truncated checkpoint reading ") + what + " at offset " +
                          std::to_string(offset));
  }
  return out;
}

}  // namespace detail

std::uint32_t checkpoint_scalar_bytes(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError("bad checkpoint magic at offset 0 (expected GRPY)");
  }
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto width = detail::read_le<std::uint32_t>(is, "scalar width");
  if (width != 4 && width != 8) {
    throw CheckpointError("unsupported scalar width " + std::to_string(width));
  }
  return width;
}

std::uint32_t checkpoint_scalar_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return checkpoint_scalar_bytes(is);
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& ckpt) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, ckpt);
  write_file_atomically(path, os.str());
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::istringstream is(read_file(path), std::ios::binary);
  return read_checkpoint<Scalar>(is);
}

template void save_checkpoint<float>(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace grapy
