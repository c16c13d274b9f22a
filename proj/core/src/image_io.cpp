#include "hli/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>

#include "hli/tensor.hpp"

namespace hli {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, std::span<const double> planar, int height,
               int width, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw Error("write_png: bit depth must be 8 or 16");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (planar.size() != 3 * plane) throw Error("write_png: expected 3-channel planar image");

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw Error("write_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: libpng error writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const int bytes = bit_depth / 8;
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<png_byte> row(static_cast<std::size_t>(width) * 3 * bytes);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(planar[c * plane + static_cast<std::size_t>(y) * width + x], 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * scale));
        const std::size_t off = (static_cast<std::size_t>(x) * 3 + c) * bytes;
        if (bytes == 2) {
          row[off] = static_cast<png_byte>(q >> 8);  // PNG is big-endian
          row[off + 1] = static_cast<png_byte>(q & 0xff);
        } else {
          row[off] = static_cast<png_byte>(q);
        }
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<double> read_png(const std::filesystem::path& path, int& height, int& width) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw Error("read_png: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: libpng error reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: only 8/16-bit RGB images are supported");
  }
  const int bytes = depth / 8;
  const double scale = depth == 16 ? 65535.0 : 255.0;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  std::vector<double> out(3 * plane);
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t off = (static_cast<std::size_t>(x) * 3 + c) * bytes;
        const unsigned q = bytes == 2 ? (static_cast<unsigned>(row[off]) << 8) | row[off + 1] : row[off];
        out[c * plane + static_cast<std::size_t>(y) * width + x] = q / scale;
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_line_plot_svg(const std::filesystem::path& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         std::span<const PlotSeries> series) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
  double x0 = std::numeric_limits<double>::max(), x1 = std::numeric_limits<double>::lowest();
  double y0 = 0.0, y1 = 1.0;
  for (const auto& s : series) {
    for (double v : s.x) {
      x0 = std::min(x0, v);
      x1 = std::max(x1, v);
    }
    for (double v : s.y) y1 = std::max(y1, v);
  }
  if (x0 > x1) {
    x0 = 0;
    x1 = 1;
  }
  if (x1 == x0) x1 = x0 + 1;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto sx = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return kTop + ph - (v - y0) / (y1 - y0) * ph; };

  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                            "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n"
      << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double yv = y0 + (y1 - y0) * t / 5.0;
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << yv
        << "</text>\n";
    const double xv = x0 + (x1 - x0) * t / 5.0;
    out << "<text x=\"" << sx(xv) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
        << xv << "</text>\n";
  }
  out << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 18 << "\" text-anchor=\"middle\">"
      << xml_escape(x_label) << "</text>\n"
      << "<text x=\"18\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << kTop + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kColors[i % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) out << sx(s.x[k]) << "," << sy(s.y[k]) << " ";
    out << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(i);
    out << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 30
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << kW - kRight + 35 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label)
        << "</text>\n";
  }
  out << "</svg>\n";
}

void write_bar_plot_svg(const std::filesystem::path& path, const std::string& title,
                        std::span<const std::string> labels, std::span<const double> values,
                        std::span<const double> errors) {
  constexpr double kW = 640, kH = 420, kLeft = 60, kTop = 40, kBottom = 90, kRight = 20;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  double vmax = 1e-9;
  for (std::size_t i = 0; i < values.size(); ++i) {
    vmax = std::max(vmax, values[i] + (i < errors.size() ? errors[i] : 0.0));
  }
  vmax *= 1.1;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";
  const double slot = values.empty() ? pw : pw / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double h = values[i] / vmax * ph;
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    out << "<rect x=\"" << x << "\" y=\"" << kTop + ph - h << "\" width=\"" << slot * 0.7
        << "\" height=\"" << h << "\" fill=\"#1f77b4\"/>\n";
    if (i < errors.size() && errors[i] > 0) {
      const double cx = x + slot * 0.35;
      out << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\""
          << kTop + ph - (values[i] + errors[i]) / vmax * ph << "\" y2=\""
          << kTop + ph - (values[i] - errors[i]) / vmax * ph << "\" stroke=\"black\"/>\n";
    }
    out << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kTop + ph - h - 4
        << "\" text-anchor=\"middle\">" << values[i] << "</text>\n";
    out << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kTop + ph + 16
        << "\" text-anchor=\"middle\">" << (i < labels.size() ? xml_escape(labels[i]) : "") << "</text>\n";
  }
  out << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << kTop + ph << "\" y2=\""
      << kTop + ph << "\" stroke=\"black\"/>\n</svg>\n";
}

}  // namespace hli
