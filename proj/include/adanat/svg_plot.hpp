#pragma once

#include <string>
#include <utility>
#include <vector>

namespace adanat {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct PlotPanel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

// Panels stacked vertically, each a polyline chart with axis ticks and labels.
std::string render_svg(const std::vector<PlotPanel>& panels, int width = 640, int panel_height = 280);
void write_svg(const std::string& path, const std::vector<PlotPanel>& panels);

}  // namespace adanat
