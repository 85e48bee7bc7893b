#pragma once

#include "edm2d/tensor.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace edm2d::io {

/// Writes `contents` to a sibling temp file and renames it over `path`, so
/// readers never observe a partial file. Parent directories are created.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip-safe text for a double (17 significant digits).
std::string format_real(double value);

/// Accumulates CSV text with a fixed header.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& cell(double value);
  CsvWriter& cell(long long value);
  CsvWriter& cell(int value) { return cell(static_cast<long long>(value)); }
  CsvWriter& cell(std::string_view text);
  /// Ends the current row; throws if its width differs from the header.
  void end_row();

  const std::string& str() const { return text_; }
  void save(const std::filesystem::path& path) const { write_atomic(path, text_); }

 private:
  std::size_t width_;
  std::size_t pending_ = 0;
  std::string text_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of `name` in the header; throws IoError when absent.
  std::size_t column(std::string_view name) const;
};

/// Parses a numeric CSV with one header line. Throws IoError on malformed input.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

/// Writes a (N x 2) sample batch with columns x1, x2.
void write_samples_csv(const std::filesystem::path& path, const Tensor& samples);
Tensor read_samples_csv(const std::filesystem::path& path);

}  // namespace edm2d::io
