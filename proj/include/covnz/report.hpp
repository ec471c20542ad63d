#pragma once

#include <string>
#include <vector>

#include "covnz/linalg.hpp"

namespace covnz {

inline constexpr const char* kToolVersion = "covnz 0.1.0";
inline constexpr const char* kReportSchema = "covnz-report-v1";

// Atomic text-file write (tmp + rename).
void write_text_atomic(const std::string& path, const std::string& content);

// CSV with LF endings and a leading "# config_hash=..." comment; doubles
// print with 17 significant digits.
class CsvWriter {
public:
  CsvWriter(std::string header, std::string config_hash);
  void row(const std::vector<std::string>& cells);
  void row_values(const std::vector<double>& values, int index1 = -1);
  void save(const std::string& path) const;

private:
  std::string body_;
};

std::string csv_cell(double v);

// Dense row-major matrix dump, one CSV row per matrix row.
void write_matrix_csv(const std::string& path, const SymMatrix& m,
                      const std::string& config_hash);

}  // namespace covnz
