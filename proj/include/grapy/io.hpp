#ifndef GRAPY_IO_HPP
#define GRAPY_IO_HPP

#include <filesystem>
#include <string>

namespace grapy {

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomically(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace grapy

#endif  // GRAPY_IO_HPP
