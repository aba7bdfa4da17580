#include "dsrlab/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dsrlab {

namespace {

// Samples of the viridis colour map at 0, 1/8, ..., 1.
constexpr std::array<std::array<double, 3>, 9> kRamp{{{68, 1, 84},
                                                      {71, 44, 122},
                                                      {59, 81, 139},
                                                      {44, 113, 142},
                                                      {33, 144, 141},
                                                      {39, 173, 129},
                                                      {92, 200, 99},
                                                      {170, 220, 50},
                                                      {253, 231, 37}}};

std::array<std::uint8_t, 3> ramp(double u) {
    u = std::clamp(u, 0.0, 1.0) * (kRamp.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(u), kRamp.size() - 2);
    const double f = u - static_cast<double>(i);
    std::array<std::uint8_t, 3> c{};
    for (int k = 0; k < 3; ++k) {
        c[k] = static_cast<std::uint8_t>(std::lround(kRamp[i][k] + f * (kRamp[i + 1][k] - kRamp[i][k])));
    }
    return c;
}

void put(Image& img, int x, int y, std::array<std::uint8_t, 3> c) {
    const auto i = 3 * (static_cast<std::size_t>(y) * img.width + x);
    img.rgb[i] = c[0];
    img.rgb[i + 1] = c[1];
    img.rgb[i + 2] = c[2];
}

void check_finite(const RDMap& map) {
    for (double v : map.values.data) {
        if (!std::isfinite(v)) throw std::invalid_argument("render: map has non-finite values");
    }
}

}  // namespace

Grid relative_db(const RDMap& map) {
    check_finite(map);
    Grid out(map.values.rows, map.values.cols);
    if (map.values.size() == 0) return out;
    const double peak = *std::max_element(map.values.data.begin(), map.values.data.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = map.values.data[i];
        switch (map.domain) {
            case MapDomain::linear:
                out.data[i] = peak > 0.0 ? (v > 0.0 ? 10.0 * std::log10(v / peak) : -1e9) : 0.0;
                break;
            case MapDomain::log_db:
                out.data[i] = v - peak;
                break;
            case MapDomain::normalized: {
                const double floor = map.floor_db.value_or(kDefaultFloorDb);
                out.data[i] = 0.5 * (peak - v) * floor;
                break;
            }
        }
    }
    return out;
}

Image rasterize(const RDMap& map, const RenderOptions& opts) {
    const RDMap* one = &map;
    return rasterize_panels(std::span<const RDMap>(one, 1), opts);
}

Image rasterize_panels(std::span<const RDMap> maps, const RenderOptions& opts) {
    if (maps.empty()) throw std::invalid_argument("render: no maps");
    if (!(opts.db_span > 0.0)) throw std::invalid_argument("render: db_span must be positive");
    const int margin = opts.axes ? kAxisMargin : 0;
    int width = margin;
    int height = 0;
    for (std::size_t p = 0; p < maps.size(); ++p) {
        width += static_cast<int>(maps[p].n_doppler()) + (p > 0 ? kPanelGutter : 0);
        height = std::max(height, static_cast<int>(maps[p].n_range()));
    }
    height += margin;

    Image img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3, 255)};
    int x0 = margin;
    for (const auto& map : maps) {
        const auto db = relative_db(map);
        const int rows = static_cast<int>(map.n_range());
        const int cols = static_cast<int>(map.n_doppler());
        for (int r = 0; r < rows; ++r) {
            const int y = rows - 1 - r;  // range 0 at the bottom
            for (int d = 0; d < cols; ++d) put(img, x0 + d, y, ramp(1.0 + db(r, d) / opts.db_span));
        }
        if (opts.axes) {
            const std::array<std::uint8_t, 3> black{0, 0, 0};
            for (int d = 0; d < cols; d += 16) {
                for (int k = 0; k < margin / 2; ++k) put(img, x0 + d, rows + k, black);
            }
            if (cols > 0) {
                for (int k = 0; k < margin; ++k) put(img, x0 + cols / 2, rows + k, black);  // zero Doppler
            }
            if (x0 == margin) {
                for (int r = 0; r < rows; r += 16) {
                    for (int k = margin / 2; k < margin; ++k) put(img, k, rows - 1 - r, black);
                }
            }
        }
        x0 += cols + kPanelGutter;
    }
    return img;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void render_heatmap(const RDMap& map, const std::filesystem::path& path, const RenderOptions& opts) {
    write_ppm(rasterize(map, opts), path);
}

void render_panels(std::span<const RDMap> maps, const std::filesystem::path& path, const RenderOptions& opts) {
    write_ppm(rasterize_panels(maps, opts), path);
}

}  // namespace dsrlab
