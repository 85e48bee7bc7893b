#include "edm2d/app/figspec.hpp"

#include "edm2d/errors.hpp"
#include "edm2d/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>

namespace edm2d::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::vector<std::string> kGridColumns{"x1", "x2", "value"};
const std::vector<std::string> kSampleColumns{"x1", "x2"};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key " + where + "." + key);
  }
}

std::string string_at(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + "." + key + " is required");
  if (!j.at(key).is_string()) throw ConfigError(where + "." + key + " must be a string");
  return j.at(key).get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) return std::nullopt;
  return string_at(j, key, where);
}

void require_columns(const fs::path& path, const std::vector<std::string>& columns) {
  if (!fs::exists(path)) throw IoError(path.string() + ": missing file");
  const io::CsvTable t = io::read_csv(path);
  for (const auto& c : columns) {
    if (std::find(t.header.begin(), t.header.end(), c) == t.header.end()) {
      throw IoError(path.string() + ": missing column " + c);
    }
  }
}

}  // namespace

PlotKind parse_plot_kind(const std::string& name) {
  if (name == "heatmap") return PlotKind::Heatmap;
  if (name == "scatter_overlay") return PlotKind::ScatterOverlay;
  if (name == "line") return PlotKind::Line;
  if (name == "log_line") return PlotKind::LogLine;
  throw ConfigError("unknown plot kind " + name);
}

std::string to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::Heatmap: return "heatmap";
    case PlotKind::ScatterOverlay: return "scatter_overlay";
    case PlotKind::Line: return "line";
    case PlotKind::LogLine: return "log_line";
  }
  return "?";
}

std::vector<std::string> Panel::required_columns() const {
  switch (kind) {
    case PlotKind::Heatmap: return kGridColumns;
    case PlotKind::ScatterOverlay: return kSampleColumns;
    case PlotKind::Line:
    case PlotKind::LogLine: {
      std::vector<std::string> c{x, y};
      if (group) c.push_back(*group);
      return c;
    }
  }
  return {};
}

FigureSpec parse_figure_spec(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("figure spec is not valid JSON: ") + e.what());
  }
  check_keys(doc, {"title", "layout", "output", "panels"}, "figure");
  FigureSpec spec;
  spec.title = optional_string(doc, "title", "figure").value_or("");
  spec.output = string_at(doc, "output", "figure");
  if (doc.contains("layout")) {
    const json& l = doc.at("layout");
    check_keys(l, {"rows", "cols"}, "figure.layout");
    for (const auto& [key, target] : {std::pair{"rows", &spec.rows}, std::pair{"cols", &spec.cols}}) {
      if (!l.contains(key)) continue;
      if (!l.at(key).is_number_integer() || l.at(key).get<int>() < 1) {
        throw ConfigError(std::string("figure.layout.") + key + " must be a positive integer");
      }
      *target = l.at(key).get<int>();
    }
  }
  if (!doc.contains("panels") || !doc.at("panels").is_array() || doc.at("panels").empty()) {
    throw ConfigError("figure.panels must be a non-empty array");
  }
  const json& panels = doc.at("panels");
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const std::string where = "figure.panels[" + std::to_string(i) + "]";
    const json& p = panels[i];
    check_keys(p, {"kind", "title", "csv", "background", "reference", "x", "y", "group"}, where);
    Panel panel;
    panel.kind = parse_plot_kind(string_at(p, "kind", where));
    panel.title = optional_string(p, "title", where).value_or("");
    panel.csv = string_at(p, "csv", where);
    if (auto b = optional_string(p, "background", where)) panel.background = *b;
    if (auto r = optional_string(p, "reference", where)) panel.reference = *r;
    const bool line = panel.kind == PlotKind::Line || panel.kind == PlotKind::LogLine;
    if (!line && (p.contains("x") || p.contains("y") || p.contains("group"))) {
      throw ConfigError(where + ": x, y and group apply to line panels only");
    }
    if (panel.kind != PlotKind::ScatterOverlay && (panel.background || panel.reference)) {
      throw ConfigError(where + ": background and reference apply to scatter_overlay panels only");
    }
    panel.x = optional_string(p, "x", where).value_or(panel.x);
    panel.y = optional_string(p, "y", where).value_or(panel.y);
    panel.group = optional_string(p, "group", where);
    spec.panels.push_back(std::move(panel));
  }
  if (static_cast<std::size_t>(spec.rows) * static_cast<std::size_t>(spec.cols) < spec.panels.size()) {
    throw ConfigError("figure layout has fewer cells than panels");
  }
  return spec;
}

FigureSpec load_figure_spec(const fs::path& path) { return parse_figure_spec(io::read_file(path)); }

void validate_figure(const FigureSpec& spec, const fs::path& base) {
  for (const auto& p : spec.panels) {
    require_columns(base / p.csv, p.required_columns());
    if (p.background) require_columns(base / *p.background, kGridColumns);
    if (p.reference) require_columns(base / *p.reference, kSampleColumns);
  }
}

}  // namespace edm2d::app
