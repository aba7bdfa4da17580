#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dsrlab/grid.hpp"
#include "dsrlab/radar_sim.hpp"

namespace dsrlab {

enum class MapDomain { linear, log_db, normalized };

std::string to_string(MapDomain domain);
MapDomain map_domain_from_string(const std::string& name);

/// Records the affine stage of the log normalization so it can be undone.
/// Both values are absolute dB of the linear power map.
struct NormParams {
    double peak_db = 0.0;
    double floor_db = -60.0;

    friend bool operator==(const NormParams&, const NormParams&) = default;
};

/// Range-Doppler map: rows are range bins, columns Doppler bins with zero
/// velocity at column n_doppler / 2.
struct RDMap {
    Grid values;
    MapDomain domain = MapDomain::linear;
    std::optional<double> floor_db;   // relative clip floor, set for log_db and normalized maps
    std::optional<NormParams> norm;   // set for normalized maps and their denormalized copies

    std::size_t n_range() const { return values.rows; }
    std::size_t n_doppler() const { return values.cols; }

    friend bool operator==(const RDMap&, const RDMap&) = default;
};

enum class Window { rectangular, blackman };

inline constexpr double kDefaultFloorDb = -60.0;

std::vector<double> blackman_window(std::size_t n);

bool is_power_of_two(std::size_t n);

/// Centered power spectrum |DFT_pad(w .* x)|^2 of one slow-time vector.
std::vector<double> slow_time_spectrum(std::span<const cdouble> slow_time, std::size_t pad_to, Window window);

/// Per range bin: window, zero-pad to pad_to, FFT, center-shift, |.|^2.
RDMap rd_map_from_cube(const SlowTimeCube& cube, std::size_t pad_to, Window window = Window::blackman,
                       int element = 0);

/// dB relative to the peak, clipped at floor_db, mapped affinely [floor_db, 0] -> [-1, 1].
std::pair<RDMap, NormParams> to_log_normalized(const RDMap& map, double floor_db = kDefaultFloorDb);

/// Inverse of the affine stage: normalized -> absolute dB.
RDMap denormalize(const RDMap& map, const NormParams& params);

/// log_db -> linear power.
RDMap db_to_linear(const RDMap& map);

/// Raw export: little-endian float32, row-major, no header; sidecar JSON next
/// to it at `<path>.json` carries shape, domain, floor and NormParams.
void write_raw_map(const RDMap& map, const std::filesystem::path& path);
RDMap read_raw_map(const std::filesystem::path& path);

nlohmann::json map_sidecar(const RDMap& map);

}  // namespace dsrlab
