#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dsrlab/grid.hpp"

namespace dsrlab {

/// Linear variance schedule with cumulative products.
///
/// Step indices run 0..T-1; index 0 carries beta_1. The clean sample sits
/// "before" index 0, i.e. alpha_bar_prev(0) == 1.
struct DiffusionSchedule {
    int T = 0;
    double beta_first = 0.0;
    double beta_last = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sqrt_alpha_bar;
    std::vector<double> sqrt_one_minus_alpha_bar;
    std::vector<double> posterior_variance;  // (1 - abar_{t-1}) / (1 - abar_t) * beta_t

    double alpha_bar_prev(int t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }
};

DiffusionSchedule make_schedule(int T, double beta_1, double beta_T);

/// T = 2000, beta from 1e-6 to 0.02.
DiffusionSchedule full_scale_schedule();

/// Desk profile: T = 200 with both beta endpoints scaled by 10, which keeps
/// sum(beta), and therefore alpha_bar at the last step, close to the
/// 2000-step configuration.
DiffusionSchedule desk_schedule();

/// Noise-prediction network interface. Batched: element i of the result is
/// the predicted noise for (x_t[i], cond[i], steps[i]).
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual std::vector<Grid> predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                            std::span<const int> steps) const = 0;
};

/// Exact noise predictor when the data distribution is a single point x*.
class SinglePointOracle final : public Denoiser {
public:
    SinglePointOracle(const DiffusionSchedule& sched, Grid x_star);
    std::vector<Grid> predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                    std::span<const int> steps) const override;

private:
    const DiffusionSchedule* sched_;
    Grid x_star_;
};

/// Optimal predictor for x0 ~ N(0, I): eps_hat = sqrt(1 - abar_t) * x_t.
class GaussianOracle final : public Denoiser {
public:
    explicit GaussianOracle(const DiffusionSchedule& sched) : sched_(&sched) {}
    std::vector<Grid> predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                    std::span<const int> steps) const override;

private:
    const DiffusionSchedule* sched_;
};

class ZeroDenoiser final : public Denoiser {
public:
    std::vector<Grid> predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                    std::span<const int> steps) const override;
};

/// Paired training data: targets x_hr and conditioning y_sr, all in [-1, 1].
struct MapBatch {
    std::vector<Grid> x_hr;
    std::vector<Grid> y_sr;

    std::size_t size() const { return x_hr.size(); }
};

void validate(const MapBatch& batch);

Grid standard_normal_grid(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Grid forward_sample(const Grid& x0, int t, const Grid& eps, const DiffusionSchedule& sched);

/// One draw of the training objective's randomness for a batch.
struct NoisedBatch {
    std::vector<int> steps;
    std::vector<Grid> eps;
    std::vector<Grid> x_t;
};

/// Per element: t ~ U{0..T-1}, then eps ~ N(0, I), in that order from rng.
NoisedBatch draw_noised_batch(const MapBatch& batch, const DiffusionSchedule& sched, std::mt19937_64& rng);

/// Mean over batch and cells of (eps - eps_hat)^2.
double training_loss(const Denoiser& denoiser, const MapBatch& batch, const DiffusionSchedule& sched,
                     std::mt19937_64& rng);

/// One ancestral step x_t -> x_{t-1}; adds no noise at t = 0.
Grid reverse_step(const Denoiser& denoiser, const Grid& x_t, const Grid& cond, int t, const DiffusionSchedule& sched,
                  std::mt19937_64& rng);

struct SampleOptions {
    bool clip = true;  // clamp the final map to [-1, 1]
};

/// Full reverse chain from x_{T-1} ~ N(0, I) conditioned on `cond`.
Grid sample(const Denoiser& denoiser, const Grid& cond, const DiffusionSchedule& sched, std::uint64_t seed,
            const SampleOptions& opts = {});

/// Samples several maps with one batched denoiser call per step. Map i uses
/// its own stream seeded by seeds[i], so results equal per-map sample() calls.
std::vector<Grid> sample_batch(const Denoiser& denoiser, std::span<const Grid> conds, const DiffusionSchedule& sched,
                               std::span<const std::uint64_t> seeds, const SampleOptions& opts = {});

/// Network description stored alongside trained weights.
struct DenoiserSpec {
    std::string kind = "trainable_unet";  // oracle_single_point | oracle_gaussian | trainable_unet
    int rows = 32;
    int cols = 32;
    int base_channels = 16;
    std::vector<int> channel_mults{1, 2};
    int in_channels = 2;
    int time_embed_dim = 64;

    friend bool operator==(const DenoiserSpec&, const DenoiserSpec&) = default;
};

void validate(const DenoiserSpec& spec);
DenoiserSpec desk_denoiser_spec();
/// 128x128, base 64, multipliers [1, 2, 3, 4].
DenoiserSpec full_scale_denoiser_spec();

nlohmann::json to_json(const DenoiserSpec& spec);
DenoiserSpec denoiser_spec_from_json(const nlohmann::json& j);

}  // namespace dsrlab
