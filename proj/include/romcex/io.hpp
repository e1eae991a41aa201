#pragma once

#include <filesystem>
#include <string>

#include "romcex/linalg.hpp"

namespace romcex {

/// Writes via a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

void save_matrix_csv(const std::filesystem::path& path, const Matrix& a);
Matrix load_matrix_csv(const std::filesystem::path& path);

}  // namespace romcex
