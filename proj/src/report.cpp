#include "covnz/report.hpp"

#include <filesystem>
#include <fstream>

#include "covnz/error.hpp"
#include "covnz/jsonio.hpp"

namespace covnz {

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
  }
  fs::rename(tmp, path);
}

std::string csv_cell(double v) { return format_g17(v); }

CsvWriter::CsvWriter(std::string header, std::string config_hash) {
  body_ = "# config_hash=" + config_hash + "\n" + header + "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) body_ += ',';
    body_ += cells[i];
  }
  body_ += '\n';
}

void CsvWriter::row_values(const std::vector<double>& values, int index1) {
  std::vector<std::string> cells;
  if (index1 >= 0) cells.push_back(std::to_string(index1));
  for (double v : values) cells.push_back(csv_cell(v));
  row(cells);
}

void CsvWriter::save(const std::string& path) const { write_text_atomic(path, body_); }

void write_matrix_csv(const std::string& path, const SymMatrix& m,
                      const std::string& config_hash) {
  std::string body = "# config_hash=" + config_hash + "\n";
  for (Eigen::Index i = 0; i < m.dim(); ++i) {
    for (Eigen::Index j = 0; j < m.dim(); ++j) {
      if (j) body += ',';
      body += csv_cell(m(i, j));
    }
    body += '\n';
  }
  write_text_atomic(path, body);
}

}  // namespace covnz
