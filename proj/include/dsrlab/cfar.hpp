#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dsrlab/spectral.hpp"

namespace dsrlab {

enum class Boundary { clip, wrap };

struct CfarConfig {
    int guard = 2;       // cells per side, both axes
    int train = 4;       // cells per side beyond the guard ring
    double pfa = 1e-3;
    Boundary boundary = Boundary::clip;  // wrap applies to the Doppler axis only
    bool group_peaks = true;             // keep only local maxima among adjacent detections
};

struct Detection {
    int range = 0;
    int doppler = 0;
    double value = 0.0;
    double threshold = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectionList {
    std::vector<Detection> detections;

    std::size_t size() const { return detections.size(); }
    bool empty() const { return detections.empty(); }
};

void validate(const CfarConfig& cfg);

/// CA-CFAR scale factor alpha = n (pfa^(-1/n) - 1) for n i.i.d. exponential training cells.
double threshold_factor(int n_train, double pfa);

/// 2-D cell-averaging CFAR on a linear power map. Every cell is tested against
/// alpha(n) times the mean of its training ring, n being the number of ring
/// cells inside the map. Results are in row-major order.
DetectionList ca_cfar_2d(const RDMap& map, const CfarConfig& cfg = {});

/// Drops detections that have a strictly larger detected 8-neighbour (ties go
/// to the earlier cell in row-major order).
DetectionList group_peaks(const DetectionList& dets, const RDMap& map, Boundary boundary);

nlohmann::json to_json(const DetectionList& dets);

Boundary boundary_from_string(const std::string& name);

}  // namespace dsrlab
