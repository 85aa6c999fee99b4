#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace cyclecap::training {

/// Append-only CSV with a fixed column list. Numbers use "%.9g" so equal
/// runs give byte-identical files.
class CsvLog {
 public:
  CsvLog() = default;
  /// With `append` an existing file keeps its rows and no header is added.
  CsvLog(const std::filesystem::path& path, std::vector<std::string> columns, bool append);

  bool is_open() const { return out_.is_open(); }
  void row(const std::vector<double>& values);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::vector<std::string> columns_;
};

std::string format_number(double v);

}  // namespace cyclecap::training
