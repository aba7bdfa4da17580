#pragma once

#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dsrlab/radar_sim.hpp"
#include "dsrlab/spectral.hpp"

namespace dsrlab {

struct CovarianceEstimate {
    Eigen::MatrixXcd matrix;  // L x L, Hermitian
    int n_snapshots = 0;      // number of overlapping subvectors (forward and backward each)
    int smoothing_len = 0;    // L
};

/// Forward-backward smoothed covariance from the N-L+1 overlapping length-L
/// subvectors of one slow-time record and their conjugate reversals.
CovarianceEstimate smoothed_covariance(std::span<const cdouble> slow_time, int smoothing_len);

/// Centered frequency of grid bin m out of g, in cycles per pulse: (m - g/2) / g.
double grid_frequency(int m, int g);

/// MUSIC pseudospectrum 1 / (a^H En En^H a + eps) on the centered grid, with
/// eps = 1e-12 * trace(cov).
std::vector<double> music_pseudospectrum(const CovarianceEstimate& cov, int n_sources, int grid);

/// Model order for music_rd_map: one global order, or one entry per range bin.
using MusicOrder = std::variant<int, std::vector<int>>;

/// Per range bin: smoothed covariance with L = N/2 and a pseudospectrum on
/// `grid` Doppler bins, rescaled so the row sums to grid * slow-time energy
/// (the same total a rectangular-window periodogram would carry).
RDMap music_rd_map(const SlowTimeCube& cube, int grid, const MusicOrder& order = 2, int element = 0);

/// Per-range-bin order from truth: count of scatterers in the bin, clamped to [1, max_order].
std::vector<int> order_from_truth(std::span<const Scatterer> scatterers, int n_range, int max_order);

}  // namespace dsrlab
