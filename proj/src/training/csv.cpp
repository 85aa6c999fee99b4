#include "cyclecap/training/csv.hpp"

#include <cstdio>
#include <stdexcept>

namespace cyclecap::training {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

CsvLog::CsvLog(const std::filesystem::path& path, std::vector<std::string> columns, bool append)
    : columns_(std::move(columns)) {
  const bool fresh = !append || !std::filesystem::exists(path);
  out_.open(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out_) throw std::runtime_error("cannot open log " + path.string());
  if (fresh) {
    for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
    out_ << '\n';
  }
}

void CsvLog::row(const std::vector<double>& values) {
  if (values.size() != columns_.size()) throw std::logic_error("csv row width does not match the header");
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_number(values[i]);
  out_ << '\n';
}

}  // namespace cyclecap::training
