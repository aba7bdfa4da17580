#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dsrlab {

using cdouble = std::complex<double>;

/// Scenario geometry, truth distributions and seed for one simulated map.
///
/// Range is synthesized directly on the range grid, so only the slow-time
/// (Doppler) axis carries physics. The PRI is derived from the wavelength and
/// the requested velocity grid, see pulse_repetition_interval().
struct ScenarioConfig {
    int n_pulses = 128;
    int n_range = 128;
    double range_res = 0.75;
    double vel_res = 0.23;
    double max_range = 96.0;
    double carrier_wavelength = 0.03;
    int n_elements = 2;
    double element_spacing = 0.12;
    int n_targets = 3;
    int n_clutter = 3;
    double snr_db = 0.0;
    double clutter_to_target_db = 10.0;
    double clutter_vel_sigma = 0.05;
    std::uint64_t seed = 1;
    // 0: targets placed independently. >0: exactly two targets share a range
    // bin, on the velocity grid, this many Doppler bins apart.
    int pair_spacing_bins = 0;

    friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

enum class ScattererKind { target, clutter };

struct Scatterer {
    int range_bin = 0;
    double velocity = 0.0;   // m/s, zero at the map center
    double amplitude = 1.0;  // linear magnitude
    double phase = 0.0;      // radians
    ScattererKind kind = ScattererKind::target;

    friend bool operator==(const Scatterer&, const Scatterer&) = default;
};

/// Complex baseband samples indexed [pulse, range bin, element].
struct SlowTimeCube {
    int n_pulses = 0;
    int n_range = 0;
    int n_elements = 0;
    double pri = 0.0;
    double wavelength = 0.0;
    std::vector<cdouble> data;

    SlowTimeCube() = default;
    SlowTimeCube(int pulses, int ranges, int elements, double pri_s, double lambda)
        : n_pulses(pulses), n_range(ranges), n_elements(elements), pri(pri_s), wavelength(lambda),
          data(static_cast<std::size_t>(pulses) * ranges * elements) {}

    cdouble& at(int pulse, int range, int element) { return data[index(pulse, range, element)]; }
    const cdouble& at(int pulse, int range, int element) const { return data[index(pulse, range, element)]; }

    /// Slow-time vector of one range bin and element.
    std::vector<cdouble> slow_time(int range, int element) const;

    friend bool operator==(const SlowTimeCube&, const SlowTimeCube&) = default;

private:
    std::size_t index(int pulse, int range, int element) const {
        return (static_cast<std::size_t>(pulse) * n_range + range) * n_elements + element;
    }
};

struct Simulation {
    SlowTimeCube cube;
    std::vector<Scatterer> scatterers;
};

/// Throws std::invalid_argument when the configuration breaks an invariant.
void validate(const ScenarioConfig& cfg);

/// PRI = wavelength / (2 * n_pulses * vel_res), which puts the FFT bins of an
/// n_pulses-long train exactly vel_res apart.
double pulse_repetition_interval(const ScenarioConfig& cfg);

/// Unambiguous velocity span n_pulses * vel_res.
double velocity_span(const ScenarioConfig& cfg);

/// Noise standard deviation (per complex sample) implied by snr_db and the
/// weakest target amplitude. Falls back to the weakest scatterer when there
/// are no targets.
double noise_sigma(const ScenarioConfig& cfg, std::span<const Scatterer> scatterers);

std::vector<Scatterer> draw_scatterers(const ScenarioConfig& cfg, std::mt19937_64& rng);

/// Noiseless superposition of the scatterers' slow-time returns.
SlowTimeCube synthesize_cube(const ScenarioConfig& cfg, std::span<const Scatterer> scatterers);

/// Adds circular complex white Gaussian noise with E|n|^2 = sigma^2.
void add_noise(SlowTimeCube& cube, double sigma, std::mt19937_64& rng);

/// Draws scatterers and noise from independent streams of cfg.seed.
Simulation simulate_datacube(const ScenarioConfig& cfg);

/// Keeps the first n_pulses / factor pulses (shorter coherent integration).
SlowTimeCube truncate_integration(const SlowTimeCube& cube, int factor);

/// Fractional Doppler column of a velocity on a zero-centered grid.
double velocity_to_doppler_bin(double velocity, int n_doppler, double vel_res_effective);
double doppler_bin_to_velocity(double bin, int n_doppler, double vel_res_effective);

nlohmann::json to_json(const ScenarioConfig& cfg);
/// Rejects unknown and mistyped fields; absent fields keep their defaults.
ScenarioConfig scenario_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Scatterer& s);
Scatterer scatterer_from_json(const nlohmann::json& j);

std::string to_string(ScattererKind kind);

}  // namespace dsrlab
