#include "dsrlab/spectral.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include <fftw3.h>
#include <nlohmann/json.hpp>

namespace dsrlab {

static_assert(std::endian::native == std::endian::little, "raw map IO assumes a little-endian host");

namespace {

// The FFTW planner is not thread-safe; execution is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

class FftPlan {
public:
    explicit FftPlan(std::size_t n) : n_(n) {
        in_ = fftw_alloc_complex(n);
        out_ = fftw_alloc_complex(n);
        std::lock_guard lock(planner_mutex());
        plan_ = fftw_plan_dft_1d(static_cast<int>(n), in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
    }
    ~FftPlan() {
        {
            std::lock_guard lock(planner_mutex());
            fftw_destroy_plan(plan_);
        }
        fftw_free(in_);
        fftw_free(out_);
    }
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;

    /// Writes the centered power spectrum of the zero-padded, weighted input into out.
    void power(std::span<const cdouble> x, std::span<const double> weights, std::span<double> out) {
        std::memset(in_, 0, sizeof(fftw_complex) * n_);
        for (std::size_t m = 0; m < x.size(); ++m) {
            const double w = weights.empty() ? 1.0 : weights[m];
            in_[m][0] = w * x[m].real();
            in_[m][1] = w * x[m].imag();
        }
        fftw_execute(plan_);
        const std::size_t half = n_ / 2;
        for (std::size_t k = 0; k < n_; ++k) {
            const auto& v = out_[(k + half) % n_];
            out[k] = v[0] * v[0] + v[1] * v[1];
        }
    }

private:
    std::size_t n_;
    fftw_complex* in_ = nullptr;
    fftw_complex* out_ = nullptr;
    fftw_plan plan_ = nullptr;
};

void check_pad(std::size_t n, std::size_t pad_to) {
    if (n == 0) throw std::invalid_argument("spectrum: empty slow-time vector");
    if (pad_to < n) throw std::invalid_argument("spectrum: pad_to shorter than the pulse train");
    if (!is_power_of_two(pad_to)) throw std::invalid_argument("spectrum: pad_to must be a power of two");
}

std::vector<double> weights_for(std::size_t n, Window window) {
    if (window == Window::rectangular) return {};
    if (n < 2) throw std::invalid_argument("spectrum: Blackman window needs at least two pulses");
    return blackman_window(n);
}

}  // namespace

std::string to_string(MapDomain domain) {
    switch (domain) {
        case MapDomain::linear: return "linear";
        case MapDomain::log_db: return "log_db";
        case MapDomain::normalized: return "normalized";
    }
    return "linear";
}

MapDomain map_domain_from_string(const std::string& name) {
    if (name == "linear") return MapDomain::linear;
    if (name == "log_db") return MapDomain::log_db;
    if (name == "normalized") return MapDomain::normalized;
    throw std::invalid_argument("unknown map domain '" + name + "'");
}

std::vector<double> blackman_window(std::size_t n) {
    if (n < 2) throw std::invalid_argument("blackman_window: n must be >= 2");
    std::vector<double> w(n);
    const double denom = static_cast<double>(n - 1);
    for (std::size_t k = 0; k < n; ++k) {
        const double x = 2.0 * std::numbers::pi * static_cast<double>(k) / denom;
        w[k] = 0.42 - 0.5 * std::cos(x) + 0.08 * std::cos(2.0 * x);
    }
    w[0] = 0.0;  // 0.42 - 0.5 + 0.08 leaves -1.4e-17 in floating point
    // Exact symmetry; cos() round-off differs between k and n-1-k.
    for (std::size_t k = 0; k < n / 2; ++k) w[n - 1 - k] = w[k];
    return w;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::vector<double> slow_time_spectrum(std::span<const cdouble> slow_time, std::size_t pad_to, Window window) {
    check_pad(slow_time.size(), pad_to);
    const auto weights = weights_for(slow_time.size(), window);
    std::vector<double> out(pad_to);
    FftPlan plan(pad_to);
    plan.power(slow_time, weights, out);
    return out;
}

RDMap rd_map_from_cube(const SlowTimeCube& cube, std::size_t pad_to, Window window, int element) {
    const auto n = static_cast<std::size_t>(cube.n_pulses);
    check_pad(n, pad_to);
    if (element < 0 || element >= cube.n_elements) throw std::invalid_argument("rd_map_from_cube: bad element");
    const auto weights = weights_for(n, window);

    RDMap map;
    map.domain = MapDomain::linear;
    map.values = Grid(static_cast<std::size_t>(cube.n_range), pad_to);
    FftPlan plan(pad_to);
    for (int r = 0; r < cube.n_range; ++r) {
        const auto x = cube.slow_time(r, element);
        std::span<double> row(map.values.data.data() + static_cast<std::size_t>(r) * pad_to, pad_to);
        plan.power(x, weights, row);
    }
    return map;
}

std::pair<RDMap, NormParams> to_log_normalized(const RDMap& map, double floor_db) {
    if (map.domain != MapDomain::linear) throw std::invalid_argument("to_log_normalized: expects a linear map");
    if (!(floor_db < 0.0)) throw std::invalid_argument("to_log_normalized: floor_db must be negative");
    const double peak = map.values.data.empty() ? 0.0 : *std::max_element(map.values.data.begin(), map.values.data.end());
    if (!(peak > 0.0) || !std::isfinite(peak)) throw std::invalid_argument("to_log_normalized: map has no positive value");

    NormParams params{10.0 * std::log10(peak), 10.0 * std::log10(peak) + floor_db};
    RDMap out;
    out.domain = MapDomain::normalized;
    out.floor_db = floor_db;
    out.norm = params;
    out.values = Grid(map.values.rows, map.values.cols);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double v = map.values.data[i];
        if (v < 0.0) throw std::invalid_argument("to_log_normalized: negative power");
        const double rel = v > 0.0 ? std::max(10.0 * std::log10(v / peak), floor_db) : floor_db;
        out.values.data[i] = std::clamp(1.0 - 2.0 * rel / floor_db, -1.0, 1.0);
    }
    return {std::move(out), params};
}

RDMap denormalize(const RDMap& map, const NormParams& params) {
    if (!(params.peak_db > params.floor_db)) throw std::invalid_argument("denormalize: peak_db must exceed floor_db");
    RDMap out;
    out.domain = MapDomain::log_db;
    out.floor_db = params.floor_db - params.peak_db;
    out.norm = params;
    out.values = Grid(map.values.rows, map.values.cols);
    const double span = params.peak_db - params.floor_db;
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double v = map.values.data[i];
        if (!(v >= -1.0 && v <= 1.0)) throw std::invalid_argument("denormalize: value outside [-1, 1]");
        out.values.data[i] = params.floor_db + 0.5 * (v + 1.0) * span;
    }
    return out;
}

RDMap db_to_linear(const RDMap& map) {
    if (map.domain != MapDomain::log_db) throw std::invalid_argument("db_to_linear: expects a log_db map");
    RDMap out;
    out.domain = MapDomain::linear;
    out.values = Grid(map.values.rows, map.values.cols);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        out.values.data[i] = std::pow(10.0, map.values.data[i] / 10.0);
    }
    return out;
}

nlohmann::json map_sidecar(const RDMap& map) {
    nlohmann::json j{{"rows", map.values.rows},
                     {"cols", map.values.cols},
                     {"domain", to_string(map.domain)},
                     {"dtype", "float32"},
                     {"byte_order", "little"}};
    j["floor_db"] = map.floor_db ? nlohmann::json(*map.floor_db) : nlohmann::json(nullptr);
    if (map.norm) {
        j["norm"] = {{"peak_db", map.norm->peak_db}, {"floor_db", map.norm->floor_db}};
    } else {
        j["norm"] = nullptr;
    }
    return j;
}

void write_raw_map(const RDMap& map, const std::filesystem::path& path) {
    std::vector<float> buf(map.values.size());
    std::transform(map.values.data.begin(), map.values.data.end(), buf.begin(),
                   [](double v) { return static_cast<float>(v); });
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!out) throw std::runtime_error("write failed: " + path.string());
    }
    std::ofstream side(path.string() + ".json", std::ios::trunc);
    if (!side) throw std::runtime_error("cannot write sidecar for " + path.string());
    side << map_sidecar(map).dump(2) << '\n';
}

RDMap read_raw_map(const std::filesystem::path& path) {
    std::ifstream side(path.string() + ".json");
    if (!side) throw std::runtime_error("missing sidecar for " + path.string());
    const auto j = nlohmann::json::parse(side);

    RDMap map;
    map.domain = map_domain_from_string(j.at("domain").get<std::string>());
    map.values = Grid(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    if (!j.at("floor_db").is_null()) map.floor_db = j.at("floor_db").get<double>();
    if (!j.at("norm").is_null()) {
        map.norm = NormParams{j["norm"].at("peak_db").get<double>(), j["norm"].at("floor_db").get<double>()};
    }

    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<float> buf(map.values.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)) || in.peek() != EOF) {
        throw std::runtime_error("raw map size does not match its sidecar: " + path.string());
    }
    std::copy(buf.begin(), buf.end(), map.values.data.begin());
    return map;
}

}  // namespace dsrlab
