#include "dsrlab/cfar.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dsrlab {

void validate(const CfarConfig& cfg) {
    if (cfg.guard < 0) throw std::invalid_argument("cfar: guard must be >= 0");
    if (cfg.train < 1) throw std::invalid_argument("cfar: train must be >= 1");
    if (!(cfg.pfa > 0.0 && cfg.pfa < 1.0)) throw std::invalid_argument("cfar: pfa must lie in (0, 1)");
}

double threshold_factor(int n_train, double pfa) {
    if (n_train < 1) throw std::invalid_argument("threshold_factor: n_train must be >= 1");
    if (!(pfa > 0.0 && pfa < 1.0)) throw std::invalid_argument("threshold_factor: pfa must lie in (0, 1)");
    return n_train * (std::pow(pfa, -1.0 / n_train) - 1.0);
}

DetectionList ca_cfar_2d(const RDMap& map, const CfarConfig& cfg) {
    validate(cfg);
    if (map.domain != MapDomain::linear) throw std::invalid_argument("ca_cfar_2d: map must be linear power");
    for (double v : map.values.data) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("ca_cfar_2d: linear power must be finite and >= 0");
    }
    const int rows = static_cast<int>(map.values.rows);
    const int cols = static_cast<int>(map.values.cols);
    const int reach = cfg.guard + cfg.train;
    const int side = 2 * reach + 1;
    if (rows < side || cols < side) throw std::invalid_argument("ca_cfar_2d: map smaller than the CFAR window");

    const bool wrap = cfg.boundary == Boundary::wrap;
    std::map<int, double> alpha_cache;
    auto alpha_for = [&](int n) {
        auto it = alpha_cache.find(n);
        if (it == alpha_cache.end()) it = alpha_cache.emplace(n, threshold_factor(n, cfg.pfa)).first;
        return it->second;
    };

    DetectionList out;
    for (int r = 0; r < rows; ++r) {
        const int r0 = std::max(0, r - reach);
        const int r1 = std::min(rows - 1, r + reach);
        for (int d = 0; d < cols; ++d) {
            double sum = 0.0;
            int count = 0;
            for (int rr = r0; rr <= r1; ++rr) {
                const bool in_guard_rows = std::abs(rr - r) <= cfg.guard;
                for (int dd = d - reach; dd <= d + reach; ++dd) {
                    if (in_guard_rows && std::abs(dd - d) <= cfg.guard) continue;
                    int col = dd;
                    if (wrap) {
                        col = ((dd % cols) + cols) % cols;
                    } else if (dd < 0 || dd >= cols) {
                        continue;
                    }
                    sum += map.values(rr, col);
                    ++count;
                }
            }
            const double threshold = alpha_for(count) * sum / count;
            const double value = map.values(r, d);
            if (value > threshold) out.detections.push_back({r, d, value, threshold});
        }
    }
    if (cfg.group_peaks) return group_peaks(out, map, cfg.boundary);
    return out;
}

DetectionList group_peaks(const DetectionList& dets, const RDMap& map, Boundary boundary) {
    const int rows = static_cast<int>(map.values.rows);
    const int cols = static_cast<int>(map.values.cols);
    std::vector<char> hit(static_cast<std::size_t>(rows) * cols, 0);
    for (const auto& det : dets.detections) hit[static_cast<std::size_t>(det.range) * cols + det.doppler] = 1;

    DetectionList out;
    for (const auto& det : dets.detections) {
        bool keep = true;
        for (int dr = -1; dr <= 1 && keep; ++dr) {
            for (int dd = -1; dd <= 1 && keep; ++dd) {
                if (dr == 0 && dd == 0) continue;
                const int r = det.range + dr;
                int d = det.doppler + dd;
                if (r < 0 || r >= rows) continue;
                if (boundary == Boundary::wrap) {
                    d = (d + cols) % cols;
                } else if (d < 0 || d >= cols) {
                    continue;
                }
                if (!hit[static_cast<std::size_t>(r) * cols + d]) continue;
                const double v = map.values(r, d);
                const bool earlier = r < det.range || (r == det.range && d < det.doppler);
                if (v > det.value || (v == det.value && earlier)) keep = false;
            }
        }
        if (keep) out.detections.push_back(det);
    }
    return out;
}

nlohmann::json to_json(const DetectionList& dets) {
    auto rows = nlohmann::json::array();
    for (const auto& d : dets.detections) {
        rows.push_back({{"r", d.range}, {"d", d.doppler}, {"value", d.value}, {"threshold", d.threshold}});
    }
    return rows;
}

Boundary boundary_from_string(const std::string& name) {
    if (name == "clip") return Boundary::clip;
    if (name == "wrap") return Boundary::wrap;
    throw std::invalid_argument("unknown CFAR boundary '" + name + "'");
}

}  // namespace dsrlab
