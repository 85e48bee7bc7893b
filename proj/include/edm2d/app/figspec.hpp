#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace edm2d::app {

enum class PlotKind { Heatmap, ScatterOverlay, Line, LogLine };

PlotKind parse_plot_kind(const std::string& name);
std::string to_string(PlotKind kind);

/// One panel binds a CSV artifact to a plot kind. Paths are relative to the
/// directory the figure is rendered from (normally the output root).
struct Panel {
  PlotKind kind = PlotKind::Heatmap;
  std::string title;
  std::filesystem::path csv;
  std::optional<std::filesystem::path> background;  // scatter_overlay: heatmap drawn underneath
  std::optional<std::filesystem::path> reference;   // scatter_overlay: faded ground-truth samples
  std::string x = "iter";                           // line kinds
  std::string y = "loss";
  std::optional<std::string> group;  // line kinds: one curve per distinct value

  /// Columns `csv` must carry.
  std::vector<std::string> required_columns() const;
};

struct FigureSpec {
  std::string title;
  int rows = 1;
  int cols = 1;
  std::filesystem::path output;
  std::vector<Panel> panels;
};

/// Throws ConfigError on unknown keys, bad kinds or a layout too small for the panels.
FigureSpec parse_figure_spec(const std::string& json_text);
FigureSpec load_figure_spec(const std::filesystem::path& path);

/// Checks that every referenced CSV under `base` exists and carries its panel's
/// columns. Throws IoError naming the first offending file.
void validate_figure(const FigureSpec& spec, const std::filesystem::path& base);

}  // namespace edm2d::app
