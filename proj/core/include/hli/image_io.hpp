#ifndef HLI_IMAGE_IO_HPP_
#define HLI_IMAGE_IO_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hli {

// Planar C x H x W doubles in [0,1] <-> RGB PNG. 16-bit files round-trip to
// within 1/65535 per channel.
void write_png(const std::filesystem::path& path, std::span<const double> planar, int height,
               int width, int bit_depth = 8);
std::vector<double> read_png(const std::filesystem::path& path, int& height, int& width);

// Line plot rendered as a standalone SVG file.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

void write_line_plot_svg(const std::filesystem::path& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         std::span<const PlotSeries> series);

// Grouped bar chart (one bar per row) rendered as SVG.
void write_bar_plot_svg(const std::filesystem::path& path, const std::string& title,
                        std::span<const std::string> labels, std::span<const double> values,
                        std::span<const double> errors);

}  // namespace hli

#endif  // HLI_IMAGE_IO_HPP_
