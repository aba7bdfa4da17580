#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dsrlab/diffusion.hpp"

namespace dsrlab {

/// Schedule parameters persisted with a checkpoint.
struct ScheduleConfig {
    int T = 200;
    double beta_1 = 1e-5;
    double beta_T = 0.2;

    DiffusionSchedule build() const { return make_schedule(T, beta_1, beta_T); }
    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

ScheduleConfig schedule_config_of(const DiffusionSchedule& sched);

/// DDPM-style UNet noise predictor: input is x_t concatenated with the
/// conditioning map, time enters through a sinusoidal embedding added to
/// every residual block. One residual block per resolution level, stride-2
/// convolutions down, nearest upsampling plus convolution up.
class UNetDenoiser final : public Denoiser {
public:
    UNetDenoiser(const DenoiserSpec& spec, std::uint64_t init_seed);
    ~UNetDenoiser() override;
    UNetDenoiser(UNetDenoiser&&) noexcept;
    UNetDenoiser& operator=(UNetDenoiser&&) noexcept;

    std::vector<Grid> predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                    std::span<const int> steps) const override;

    const DenoiserSpec& spec() const;
    std::size_t parameter_count() const;

    /// Self-describing container: magic, JSON header (spec, schedule, tensor
    /// table), then little-endian float32 blobs in header order.
    void save(const std::filesystem::path& path, const ScheduleConfig& schedule) const;
    static UNetDenoiser load(const std::filesystem::path& path, ScheduleConfig* schedule = nullptr);

    struct Impl;
    Impl& impl() { return *impl_; }

private:
    std::unique_ptr<Impl> impl_;
};

struct TrainConfig {
    int steps = 2000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double ema_decay = 0.995;  // 0 disables the weight average
    double grad_clip = 1.0;
    std::uint64_t seed = 7;
    int threads = 1;
};

struct TrainResult {
    std::vector<double> loss;  // per step
};

/// Adam on the eps-MSE objective. Batches cycle through per-epoch shuffles of
/// the dataset; t and eps come from draw_noised_batch() with a seed-derived
/// stream. When ema_decay > 0 the averaged weights are loaded into the model
/// at the end. Writes `step,loss` rows to loss_csv when given.
TrainResult train_denoiser(UNetDenoiser& model, const MapBatch& dataset, const DiffusionSchedule& sched,
                           const TrainConfig& cfg, const std::optional<std::filesystem::path>& loss_csv = std::nullopt);

}  // namespace dsrlab
