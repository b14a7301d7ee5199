#pragma once

// Static SVG line charts.

#include <filesystem>
#include <string>
#include <vector>

namespace mesm {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;  // non-positive values are dropped
};

std::string line_plot_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series);
void write_line_plot(const std::filesystem::path& path, const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace mesm
