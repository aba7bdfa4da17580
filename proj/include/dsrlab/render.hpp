#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dsrlab/spectral.hpp"

namespace dsrlab {

struct RenderOptions {
    double db_span = 60.0;  // colour range below the peak
    bool axes = false;      // tick margin on the left and bottom
};

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, top row first

    std::array<std::uint8_t, 3> pixel(int x, int y) const {
        const auto i = 3 * (static_cast<std::size_t>(y) * width + x);
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
};

inline constexpr int kAxisMargin = 8;
inline constexpr int kPanelGutter = 4;

/// Peak-relative dB of every cell, whatever the map's domain.
Grid relative_db(const RDMap& map);

/// Doppler runs left to right, range bottom to top; colours follow a
/// viridis-like ramp over [-db_span, 0] dB.
Image rasterize(const RDMap& map, const RenderOptions& opts = {});

/// Panels side by side in the given order (HR, LR, SR-FFT, SR3 for the
/// figure layout), separated by white gutters.
Image rasterize_panels(std::span<const RDMap> maps, const RenderOptions& opts = {});

/// Binary P6 pixmap.
void write_ppm(const Image& img, const std::filesystem::path& path);

void render_heatmap(const RDMap& map, const std::filesystem::path& path, const RenderOptions& opts = {});
void render_panels(std::span<const RDMap> maps, const std::filesystem::path& path, const RenderOptions& opts = {});

}  // namespace dsrlab
