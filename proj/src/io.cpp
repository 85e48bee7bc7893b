#include "edm2d/io.hpp"

#include "edm2d/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

namespace edm2d::io {

namespace fs = std::filesystem;

void write_atomic(const fs::path& path, std::string_view contents) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : width_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) text_ += ',';
    text_ += header[i];
  }
  text_ += '\n';
}

CsvWriter& CsvWriter::cell(double value) { return cell(std::string_view(format_real(value))); }

CsvWriter& CsvWriter::cell(long long value) { return cell(std::string_view(std::to_string(value))); }

CsvWriter& CsvWriter::cell(std::string_view text) {
  if (pending_ > 0) text_ += ',';
  text_.append(text);
  ++pending_;
  return *this;
}

void CsvWriter::end_row() {
  if (pending_ != width_) throw std::logic_error("csv: row width does not match header");
  text_ += '\n';
  pending_ = 0;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw IoError("csv: missing column " + std::string(name));
}

namespace {

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_real(const std::string& text, std::size_t line) {
  if (text == "nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw IoError("csv: bad number '" + text + "' on line " + std::to_string(line));
  }
}

}  // namespace

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw IoError("csv: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                    " fields, expected " + std::to_string(table.header.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_real(f, line_no));
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw IoError("csv: missing header");
  return table;
}

CsvTable read_csv(const fs::path& path) { return parse_csv(read_file(path)); }

void write_samples_csv(const fs::path& path, const Tensor& samples) {
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < samples.cols(); ++j) header.push_back("x" + std::to_string(j + 1));
  if (header.empty()) header = {"x1", "x2"};
  CsvWriter csv(header);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) csv.cell(samples(i, j));
    csv.end_row();
  }
  csv.save(path);
}

Tensor read_samples_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t first = t.column("x1");
  const Eigen::Index d = static_cast<Eigen::Index>(t.header.size() - first);
  Tensor out(static_cast<Eigen::Index>(t.rows.size()), d);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out(static_cast<Eigen::Index>(i), j) = t.rows[i][first + j];
  }
  return out;
}

}  // namespace edm2d::io
