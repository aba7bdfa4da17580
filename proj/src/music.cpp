#include "dsrlab/music.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dsrlab {

CovarianceEstimate smoothed_covariance(std::span<const cdouble> slow_time, int smoothing_len) {
    const int n = static_cast<int>(slow_time.size());
    if (smoothing_len < 2) throw std::invalid_argument("smoothed_covariance: L must be >= 2");
    if (smoothing_len > n) throw std::invalid_argument("smoothed_covariance: L exceeds the record length");

    const int l = smoothing_len;
    const int k = n - l + 1;
    Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(l, l);
    Eigen::VectorXcd fwd(l);
    Eigen::VectorXcd bwd(l);
    for (int s = 0; s < k; ++s) {
        for (int i = 0; i < l; ++i) {
            fwd(i) = slow_time[s + i];
            bwd(i) = std::conj(slow_time[s + l - 1 - i]);
        }
        r.noalias() += fwd * fwd.adjoint();
        r.noalias() += bwd * bwd.adjoint();
    }
    r /= static_cast<double>(2 * k);
    // Remove round-off asymmetry.
    const Eigen::MatrixXcd herm = 0.5 * (r + r.adjoint());
    return {herm, k, l};
}

double grid_frequency(int m, int g) { return (m - g / 2.0) / g; }

std::vector<double> music_pseudospectrum(const CovarianceEstimate& cov, int n_sources, int grid) {
    const int l = static_cast<int>(cov.matrix.rows());
    if (cov.matrix.cols() != l || l < 2) throw std::invalid_argument("music: covariance must be square, L >= 2");
    if (n_sources < 1 || n_sources >= l) throw std::invalid_argument("music: need 1 <= n_sources < L");
    if (grid < 1) throw std::invalid_argument("music: grid must be positive");
    const double scale = cov.matrix.cwiseAbs().maxCoeff();
    if ((cov.matrix - cov.matrix.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1.0)) {
        throw std::invalid_argument("music: covariance is not Hermitian");
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(cov.matrix);
    if (eig.info() != Eigen::Success) throw std::runtime_error("music: eigendecomposition failed");
    // Eigenvalues ascend; the first L - n_sources span the noise subspace.
    const Eigen::MatrixXcd noise = eig.eigenvectors().leftCols(l - n_sources);
    const double eps = 1e-12 * std::abs(cov.matrix.trace().real());

    std::vector<double> p(static_cast<std::size_t>(grid));
    Eigen::VectorXcd a(l);
    for (int m = 0; m < grid; ++m) {
        const double f = grid_frequency(m, grid);
        for (int i = 0; i < l; ++i) a(i) = std::polar(1.0, 2.0 * std::numbers::pi * f * i);
        const double denom = (noise.adjoint() * a).squaredNorm();
        p[m] = 1.0 / (denom + eps);
    }
    return p;
}

std::vector<int> order_from_truth(std::span<const Scatterer> scatterers, int n_range, int max_order) {
    std::vector<int> order(static_cast<std::size_t>(n_range), 0);
    for (const auto& s : scatterers) {
        if (s.range_bin >= 0 && s.range_bin < n_range) ++order[s.range_bin];
    }
    for (auto& o : order) o = std::clamp(o, 1, std::max(1, max_order));
    return order;
}

RDMap music_rd_map(const SlowTimeCube& cube, int grid, const MusicOrder& order, int element) {
    if (cube.n_pulses < 4 || cube.n_range < 1) throw std::invalid_argument("music_rd_map: cube too small");
    if (element < 0 || element >= cube.n_elements) throw std::invalid_argument("music_rd_map: bad element");
    const int l = cube.n_pulses / 2;
    if (const auto* per_bin = std::get_if<std::vector<int>>(&order)) {
        if (static_cast<int>(per_bin->size()) != cube.n_range) {
            throw std::invalid_argument("music_rd_map: per-bin order size mismatch");
        }
    }

    RDMap map;
    map.domain = MapDomain::linear;
    map.values = Grid(static_cast<std::size_t>(cube.n_range), static_cast<std::size_t>(grid));
    for (int r = 0; r < cube.n_range; ++r) {
        const auto x = cube.slow_time(r, element);
        const int sources = std::holds_alternative<int>(order) ? std::get<int>(order)
                                                                 : std::get<std::vector<int>>(order)[r];
        double energy = 0.0;
        for (const auto& v : x) energy += std::norm(v);

        if (energy == 0.0) continue;  // empty row stays zero
        const auto cov = smoothed_covariance(x, l);
        const auto p = music_pseudospectrum(cov, std::clamp(sources, 1, l - 1), grid);
        double total = 0.0;
        for (double v : p) total += v;
        const double gain = grid * energy / total;
        for (int m = 0; m < grid; ++m) map.values(r, m) = gain * p[m];
    }
    return map;
}

}  // namespace dsrlab
