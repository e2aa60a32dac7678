#ifndef UADA_PLOT_HPP
#define UADA_PLOT_HPP

// Static figure output: SVG line charts and PGM grayscale images.

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace uada {

struct Series {
    std::string label;
    std::vector<double> x, y;
    std::vector<double> err;  // optional symmetric error bars, same length as y
};

std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label);

/// Writes a [H,W] tensor as binary PGM, min-max scaled to 0..255.
void write_pgm(const std::filesystem::path& path, const torch::Tensor& image);

/// Tiles [H,W] images into rows x cols with a 1-pixel gap; each tile is
/// min-max scaled on its own.
torch::Tensor montage(const std::vector<std::vector<torch::Tensor>>& rows);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace uada

#endif  // UADA_PLOT_HPP
