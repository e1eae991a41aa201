#include "romcex/io.hpp"

#include <fstream>
#include <sstream>

#include "romcex/error.hpp"

namespace romcex {

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.flush()) fail(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_matrix_csv(const std::filesystem::path& path, const Matrix& a) {
  std::ostringstream out;
  write_csv(out, a);
  write_file_atomic(path, out.str());
}

Matrix load_matrix_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return read_csv(in);
}

}  // namespace romcex
