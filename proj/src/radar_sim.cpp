#include "dsrlab/radar_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dsrlab/seed.hpp"

namespace dsrlab {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::vector<cdouble> SlowTimeCube::slow_time(int range, int element) const {
    std::vector<cdouble> out(static_cast<std::size_t>(n_pulses));
    for (int m = 0; m < n_pulses; ++m) out[m] = at(m, range, element);
    return out;
}

void validate(const ScenarioConfig& cfg) {
    require(cfg.n_pulses >= 1 && cfg.n_range >= 1 && cfg.n_elements >= 1,
            "scenario: n_pulses, n_range and n_elements must be >= 1");
    require(cfg.n_targets >= 0 && cfg.n_clutter >= 0, "scenario: negative scatterer count");
    require(cfg.n_targets + cfg.n_clutter >= 1, "scenario: needs at least one scatterer");
    require(cfg.range_res > 0.0 && cfg.vel_res > 0.0, "scenario: resolutions must be positive");
    require(cfg.carrier_wavelength > 0.0, "scenario: wavelength must be positive");
    require(cfg.element_spacing >= 0.0, "scenario: negative element spacing");
    require(cfg.clutter_vel_sigma >= 0.0, "scenario: negative clutter velocity spread");
    require(std::abs(cfg.n_range * cfg.range_res - cfg.max_range) <= 1e-9 * cfg.max_range,
            "scenario: n_range * range_res must equal max_range");
    require(std::isfinite(cfg.snr_db) && std::isfinite(cfg.clutter_to_target_db), "scenario: non-finite dB value");
    require(cfg.pair_spacing_bins >= 0, "scenario: negative pair spacing");
    if (cfg.pair_spacing_bins > 0) {
        require(cfg.n_targets == 2, "scenario: pair layout needs exactly two targets");
        require(cfg.pair_spacing_bins < cfg.n_pulses - 1, "scenario: pair spacing exceeds the Doppler span");
        require(cfg.n_range >= 2 || cfg.n_clutter == 0, "scenario: pair layout needs a free range bin for clutter");
    }
}

double pulse_repetition_interval(const ScenarioConfig& cfg) {
    return cfg.carrier_wavelength / (2.0 * cfg.n_pulses * cfg.vel_res);
}

double velocity_span(const ScenarioConfig& cfg) { return cfg.n_pulses * cfg.vel_res; }

double noise_sigma(const ScenarioConfig& cfg, std::span<const Scatterer> scatterers) {
    double weakest = 0.0;
    bool found = false;
    for (const auto& s : scatterers) {
        if (s.kind != ScattererKind::target) continue;
        weakest = found ? std::min(weakest, s.amplitude) : s.amplitude;
        found = true;
    }
    if (!found) {
        for (const auto& s : scatterers) {
            weakest = found ? std::min(weakest, s.amplitude) : s.amplitude;
            found = true;
        }
    }
    if (!found) return 0.0;
    return weakest / std::pow(10.0, cfg.snr_db / 20.0);
}

std::vector<Scatterer> draw_scatterers(const ScenarioConfig& cfg, std::mt19937_64& rng) {
    validate(cfg);
    const double half_span = velocity_span(cfg) / 2.0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> range_bin(0, cfg.n_range - 1);

    std::vector<Scatterer> out;
    out.reserve(static_cast<std::size_t>(cfg.n_targets + cfg.n_clutter));

    int pair_bin = -1;
    if (cfg.pair_spacing_bins > 0) {
        pair_bin = range_bin(rng);
        const int half = cfg.n_pulses / 2;
        // Both Doppler columns stay strictly inside (0, n_pulses).
        std::uniform_int_distribution<int> first(-half + 1, half - 1 - cfg.pair_spacing_bins);
        const int k = first(rng);
        for (int i = 0; i < 2; ++i) {
            Scatterer s;
            s.range_bin = pair_bin;
            s.velocity = (k + i * cfg.pair_spacing_bins) * cfg.vel_res;
            s.amplitude = 1.0;
            s.phase = kTwoPi * unit(rng);
            s.kind = ScattererKind::target;
            out.push_back(s);
        }
    } else {
        for (int i = 0; i < cfg.n_targets; ++i) {
            Scatterer s;
            s.range_bin = range_bin(rng);
            s.velocity = (2.0 * unit(rng) - 1.0) * 0.9 * half_span;
            s.amplitude = 1.0;
            s.phase = kTwoPi * unit(rng);
            s.kind = ScattererKind::target;
            out.push_back(s);
        }
    }

    const double clutter_amp = std::pow(10.0, cfg.clutter_to_target_db / 20.0);
    std::normal_distribution<double> clutter_vel(0.0, cfg.clutter_vel_sigma);
    for (int i = 0; i < cfg.n_clutter; ++i) {
        Scatterer s;
        do {
            s.range_bin = range_bin(rng);
        } while (s.range_bin == pair_bin);
        do {
            s.velocity = clutter_vel(rng);
        } while (std::abs(s.velocity) >= half_span);
        s.amplitude = clutter_amp;
        s.phase = kTwoPi * unit(rng);
        s.kind = ScattererKind::clutter;
        out.push_back(s);
    }
    return out;
}

SlowTimeCube synthesize_cube(const ScenarioConfig& cfg, std::span<const Scatterer> scatterers) {
    validate(cfg);
    const double pri = pulse_repetition_interval(cfg);
    const double lambda = cfg.carrier_wavelength;
    const double half_span = velocity_span(cfg) / 2.0;
    SlowTimeCube cube(cfg.n_pulses, cfg.n_range, cfg.n_elements, pri, lambda);

    constexpr double theta = 0.0;  // broadside
    for (const auto& s : scatterers) {
        if (s.range_bin < 0 || s.range_bin >= cfg.n_range) {
            throw std::invalid_argument("synthesize_cube: range bin outside the grid");
        }
        if (!(std::abs(s.velocity) < half_span)) {
            throw std::invalid_argument("synthesize_cube: velocity outside the unambiguous span");
        }
        if (!(s.amplitude > 0.0)) throw std::invalid_argument("synthesize_cube: amplitude must be positive");
        const double doppler = 2.0 * s.velocity / lambda;
        for (int e = 0; e < cfg.n_elements; ++e) {
            const double spatial = kTwoPi * (e * cfg.element_spacing / lambda) * std::sin(theta);
            for (int m = 0; m < cfg.n_pulses; ++m) {
                const double phase = s.phase + kTwoPi * doppler * m * pri + spatial;
                cube.at(m, s.range_bin, e) += std::polar(s.amplitude, phase);
            }
        }
    }
    return cube;
}

void add_noise(SlowTimeCube& cube, double sigma, std::mt19937_64& rng) {
    if (sigma <= 0.0) return;
    std::normal_distribution<double> gauss(0.0, sigma / std::numbers::sqrt2);
    for (auto& v : cube.data) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        v += cdouble(re, im);
    }
}

Simulation simulate_datacube(const ScenarioConfig& cfg) {
    validate(cfg);
    std::mt19937_64 truth_rng(derive_seed(cfg.seed, 0));
    std::mt19937_64 noise_rng(derive_seed(cfg.seed, 1));
    Simulation sim;
    sim.scatterers = draw_scatterers(cfg, truth_rng);
    sim.cube = synthesize_cube(cfg, sim.scatterers);
    add_noise(sim.cube, noise_sigma(cfg, sim.scatterers), noise_rng);
    return sim;
}

SlowTimeCube truncate_integration(const SlowTimeCube& cube, int factor) {
    if (factor < 1) throw std::invalid_argument("truncate_integration: factor must be >= 1");
    if (cube.n_pulses % factor != 0) {
        throw std::invalid_argument("truncate_integration: pulse count not divisible by factor");
    }
    const int kept = cube.n_pulses / factor;
    SlowTimeCube out(kept, cube.n_range, cube.n_elements, cube.pri, cube.wavelength);
    const auto per_pulse = static_cast<std::size_t>(cube.n_range) * cube.n_elements;
    std::copy_n(cube.data.begin(), per_pulse * kept, out.data.begin());
    return out;
}

double velocity_to_doppler_bin(double velocity, int n_doppler, double vel_res_effective) {
    if (n_doppler < 1 || !(vel_res_effective > 0.0)) {
        throw std::invalid_argument("velocity_to_doppler_bin: invalid grid");
    }
    if (!(std::abs(velocity) < n_doppler * vel_res_effective / 2.0)) {
        throw std::invalid_argument("velocity_to_doppler_bin: velocity outside the unambiguous span");
    }
    return n_doppler / 2.0 + velocity / vel_res_effective;
}

double doppler_bin_to_velocity(double bin, int n_doppler, double vel_res_effective) {
    if (n_doppler < 1 || !(vel_res_effective > 0.0)) {
        throw std::invalid_argument("doppler_bin_to_velocity: invalid grid");
    }
    return (bin - n_doppler / 2.0) * vel_res_effective;
}

nlohmann::json to_json(const ScenarioConfig& cfg) {
    return {
        {"n_pulses", cfg.n_pulses},
        {"n_range", cfg.n_range},
        {"range_res", cfg.range_res},
        {"vel_res", cfg.vel_res},
        {"max_range", cfg.max_range},
        {"carrier_wavelength", cfg.carrier_wavelength},
        {"n_elements", cfg.n_elements},
        {"element_spacing", cfg.element_spacing},
        {"n_targets", cfg.n_targets},
        {"n_clutter", cfg.n_clutter},
        {"snr_db", cfg.snr_db},
        {"clutter_to_target_db", cfg.clutter_to_target_db},
        {"clutter_vel_sigma", cfg.clutter_vel_sigma},
        {"seed", cfg.seed},
        {"pair_spacing_bins", cfg.pair_spacing_bins},
    };
}

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("scenario: expected a JSON object");
    ScenarioConfig cfg;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "n_pulses") cfg.n_pulses = value.get<int>();
            else if (key == "n_range") cfg.n_range = value.get<int>();
            else if (key == "range_res") cfg.range_res = value.get<double>();
            else if (key == "vel_res") cfg.vel_res = value.get<double>();
            else if (key == "max_range") cfg.max_range = value.get<double>();
            else if (key == "carrier_wavelength") cfg.carrier_wavelength = value.get<double>();
            else if (key == "n_elements") cfg.n_elements = value.get<int>();
            else if (key == "element_spacing") cfg.element_spacing = value.get<double>();
            else if (key == "n_targets") cfg.n_targets = value.get<int>();
            else if (key == "n_clutter") cfg.n_clutter = value.get<int>();
            else if (key == "snr_db") cfg.snr_db = value.get<double>();
            else if (key == "clutter_to_target_db") cfg.clutter_to_target_db = value.get<double>();
            else if (key == "clutter_vel_sigma") cfg.clutter_vel_sigma = value.get<double>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else if (key == "pair_spacing_bins") cfg.pair_spacing_bins = value.get<int>();
            else throw std::invalid_argument("scenario: unknown field '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("scenario: bad value for '" + key + "': " + e.what());
        }
    }
    validate(cfg);
    return cfg;
}

std::string to_string(ScattererKind kind) { return kind == ScattererKind::target ? "target" : "clutter"; }

nlohmann::json to_json(const Scatterer& s) {
    return {{"range_bin", s.range_bin},
            {"velocity", s.velocity},
            {"amplitude", s.amplitude},
            {"phase", s.phase},
            {"kind", to_string(s.kind)}};
}

Scatterer scatterer_from_json(const nlohmann::json& j) {
    Scatterer s;
    s.range_bin = j.at("range_bin").get<int>();
    s.velocity = j.at("velocity").get<double>();
    s.amplitude = j.at("amplitude").get<double>();
    s.phase = j.at("phase").get<double>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "target") s.kind = ScattererKind::target;
    else if (kind == "clutter") s.kind = ScattererKind::clutter;
    else throw std::invalid_argument("scatterer: unknown kind '" + kind + "'");
    return s;
}

}  // namespace dsrlab
