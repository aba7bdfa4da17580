#include "dsrlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dsrlab {

DiffusionSchedule make_schedule(int T, double beta_1, double beta_T) {
    if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
    if (!(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0)) {
        throw std::invalid_argument("make_schedule: need 0 < beta_1 <= beta_T < 1");
    }
    DiffusionSchedule s;
    s.T = T;
    s.beta_first = beta_1;
    s.beta_last = beta_T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sqrt_alpha_bar.resize(T);
    s.sqrt_one_minus_alpha_bar.resize(T);
    s.posterior_variance.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double beta = beta_1 + (beta_T - beta_1) * t / (T - 1);
        s.beta[t] = beta;
        s.alpha[t] = 1.0 - beta;
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
        s.sqrt_alpha_bar[t] = std::sqrt(prod);
        s.sqrt_one_minus_alpha_bar[t] = std::sqrt(1.0 - prod);
    }
    for (int t = 0; t < T; ++t) {
        s.posterior_variance[t] = (1.0 - s.alpha_bar_prev(t)) / (1.0 - s.alpha_bar[t]) * s.beta[t];
    }
    return s;
}

DiffusionSchedule full_scale_schedule() { return make_schedule(2000, 1e-6, 0.02); }

DiffusionSchedule desk_schedule() { return make_schedule(200, 1e-5, 0.2); }

namespace {

void check_step(const DiffusionSchedule& sched, int t) {
    if (t < 0 || t >= sched.T) throw std::invalid_argument("diffusion: step index out of range");
}

void check_batch_args(std::span<const Grid> x_t, std::span<const Grid> cond, std::span<const int> steps) {
    if (x_t.size() != cond.size() || x_t.size() != steps.size()) {
        throw std::invalid_argument("denoiser: batch length mismatch");
    }
}

}  // namespace

SinglePointOracle::SinglePointOracle(const DiffusionSchedule& sched, Grid x_star)
    : sched_(&sched), x_star_(std::move(x_star)) {}

std::vector<Grid> SinglePointOracle::predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                                   std::span<const int> steps) const {
    check_batch_args(x_t, cond, steps);
    std::vector<Grid> out;
    out.reserve(x_t.size());
    for (std::size_t b = 0; b < x_t.size(); ++b) {
        require_same_shape(x_t[b], x_star_, "SinglePointOracle");
        check_step(*sched_, steps[b]);
        const double a = sched_->sqrt_alpha_bar[steps[b]];
        const double s = sched_->sqrt_one_minus_alpha_bar[steps[b]];
        Grid eps(x_t[b].rows, x_t[b].cols);
        for (std::size_t i = 0; i < eps.size(); ++i) eps.data[i] = (x_t[b].data[i] - a * x_star_.data[i]) / s;
        out.push_back(std::move(eps));
    }
    return out;
}

std::vector<Grid> GaussianOracle::predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                                std::span<const int> steps) const {
    check_batch_args(x_t, cond, steps);
    std::vector<Grid> out;
    out.reserve(x_t.size());
    for (std::size_t b = 0; b < x_t.size(); ++b) {
        check_step(*sched_, steps[b]);
        Grid eps = x_t[b];
        const double s = sched_->sqrt_one_minus_alpha_bar[steps[b]];
        for (auto& v : eps.data) v *= s;
        out.push_back(std::move(eps));
    }
    return out;
}

std::vector<Grid> ZeroDenoiser::predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                              std::span<const int> steps) const {
    check_batch_args(x_t, cond, steps);
    std::vector<Grid> out;
    out.reserve(x_t.size());
    for (const auto& x : x_t) out.emplace_back(x.rows, x.cols, 0.0);
    return out;
}

void validate(const MapBatch& batch) {
    if (batch.x_hr.empty()) throw std::invalid_argument("MapBatch: empty batch");
    if (batch.x_hr.size() != batch.y_sr.size()) throw std::invalid_argument("MapBatch: unpaired maps");
    for (std::size_t i = 0; i < batch.size(); ++i) {
        require_same_shape(batch.x_hr[i], batch.y_sr[i], "MapBatch");
        require_same_shape(batch.x_hr[i], batch.x_hr[0], "MapBatch");
        for (const Grid* g : {&batch.x_hr[i], &batch.y_sr[i]}) {
            for (double v : g->data) {
                if (!(v >= -1.0 && v <= 1.0)) throw std::invalid_argument("MapBatch: value outside [-1, 1]");
            }
        }
    }
}

Grid standard_normal_grid(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Grid g(rows, cols);
    for (auto& v : g.data) v = gauss(rng);
    return g;
}

Grid forward_sample(const Grid& x0, int t, const Grid& eps, const DiffusionSchedule& sched) {
    require_same_shape(x0, eps, "forward_sample");
    check_step(sched, t);
    const double a = sched.sqrt_alpha_bar[t];
    const double s = sched.sqrt_one_minus_alpha_bar[t];
    Grid out(x0.rows, x0.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * x0.data[i] + s * eps.data[i];
    return out;
}

NoisedBatch draw_noised_batch(const MapBatch& batch, const DiffusionSchedule& sched, std::mt19937_64& rng) {
    validate(batch);
    std::uniform_int_distribution<int> step(0, sched.T - 1);
    NoisedBatch nb;
    nb.steps.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const int t = step(rng);
        Grid eps = standard_normal_grid(batch.x_hr[b].rows, batch.x_hr[b].cols, rng);
        nb.x_t.push_back(forward_sample(batch.x_hr[b], t, eps, sched));
        nb.steps.push_back(t);
        nb.eps.push_back(std::move(eps));
    }
    return nb;
}

double training_loss(const Denoiser& denoiser, const MapBatch& batch, const DiffusionSchedule& sched,
                     std::mt19937_64& rng) {
    const auto nb = draw_noised_batch(batch, sched, rng);
    const auto pred = denoiser.predict_noise(nb.x_t, batch.y_sr, nb.steps);
    if (pred.size() != nb.eps.size()) throw std::runtime_error("training_loss: denoiser returned a wrong batch size");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < pred.size(); ++b) {
        require_same_shape(pred[b], nb.eps[b], "training_loss");
        for (std::size_t i = 0; i < pred[b].size(); ++i) {
            const double d = nb.eps[b].data[i] - pred[b].data[i];
            sum += d * d;
        }
        count += pred[b].size();
    }
    return sum / static_cast<double>(count);
}

namespace {

// x_{t-1} from x_t and the predicted noise; noise drawn from rng when t > 0.
void apply_reverse(Grid& x, const Grid& eps_hat, int t, const DiffusionSchedule& sched, std::mt19937_64& rng) {
    require_same_shape(x, eps_hat, "reverse_step");
    const double coef = sched.beta[t] / sched.sqrt_one_minus_alpha_bar[t];
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = inv_sqrt_alpha * (x.data[i] - coef * eps_hat.data[i]);
    if (t > 0) {
        const double sigma = std::sqrt(sched.posterior_variance[t]);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (auto& v : x.data) v += sigma * gauss(rng);
    }
}

}  // namespace

Grid reverse_step(const Denoiser& denoiser, const Grid& x_t, const Grid& cond, int t, const DiffusionSchedule& sched,
                  std::mt19937_64& rng) {
    check_step(sched, t);
    require_same_shape(x_t, cond, "reverse_step");
    const int steps[1] = {t};
    auto eps_hat = denoiser.predict_noise(std::span<const Grid>(&x_t, 1), std::span<const Grid>(&cond, 1), steps);
    Grid out = x_t;
    apply_reverse(out, eps_hat.at(0), t, sched, rng);
    return out;
}

Grid sample(const Denoiser& denoiser, const Grid& cond, const DiffusionSchedule& sched, std::uint64_t seed,
            const SampleOptions& opts) {
    const std::uint64_t seeds[1] = {seed};
    return std::move(sample_batch(denoiser, std::span<const Grid>(&cond, 1), sched, seeds, opts).front());
}

std::vector<Grid> sample_batch(const Denoiser& denoiser, std::span<const Grid> conds, const DiffusionSchedule& sched,
                               std::span<const std::uint64_t> seeds, const SampleOptions& opts) {
    if (conds.size() != seeds.size()) throw std::invalid_argument("sample_batch: one seed per map required");
    std::vector<std::mt19937_64> rngs;
    std::vector<Grid> x;
    rngs.reserve(conds.size());
    x.reserve(conds.size());
    for (std::size_t b = 0; b < conds.size(); ++b) {
        rngs.emplace_back(seeds[b]);
        x.push_back(standard_normal_grid(conds[b].rows, conds[b].cols, rngs.back()));
    }
    std::vector<int> steps(conds.size());
    for (int t = sched.T - 1; t >= 0; --t) {
        std::fill(steps.begin(), steps.end(), t);
        const auto eps_hat = denoiser.predict_noise(x, conds, steps);
        for (std::size_t b = 0; b < x.size(); ++b) apply_reverse(x[b], eps_hat.at(b), t, sched, rngs[b]);
    }
    if (opts.clip) {
        for (auto& g : x) {
            for (auto& v : g.data) v = std::clamp(v, -1.0, 1.0);
        }
    }
    return x;
}

void validate(const DenoiserSpec& spec) {
    if (spec.kind != "trainable_unet" && spec.kind != "oracle_single_point" && spec.kind != "oracle_gaussian") {
        throw std::invalid_argument("DenoiserSpec: unknown kind '" + spec.kind + "'");
    }
    if (spec.in_channels != 2) throw std::invalid_argument("DenoiserSpec: conditional operation needs in_channels = 2");
    if (spec.channel_mults.empty()) throw std::invalid_argument("DenoiserSpec: channel_mults must be non-empty");
    if (spec.base_channels < 1 || spec.time_embed_dim < 2 || spec.time_embed_dim % 2 != 0) {
        throw std::invalid_argument("DenoiserSpec: bad channel or embedding size");
    }
    for (int m : spec.channel_mults) {
        if (m < 1) throw std::invalid_argument("DenoiserSpec: channel multipliers must be >= 1");
    }
    const int levels = static_cast<int>(spec.channel_mults.size());
    const int stride = 1 << (levels - 1);
    if (spec.rows < 1 || spec.cols < 1 || spec.rows % stride != 0 || spec.cols % stride != 0) {
        throw std::invalid_argument("DenoiserSpec: map size must be divisible by 2^(levels-1)");
    }
}

DenoiserSpec desk_denoiser_spec() { return {}; }

DenoiserSpec full_scale_denoiser_spec() {
    DenoiserSpec spec;
    spec.rows = 128;
    spec.cols = 128;
    spec.base_channels = 64;
    spec.channel_mults = {1, 2, 3, 4};
    spec.time_embed_dim = 64;
    return spec;
}

nlohmann::json to_json(const DenoiserSpec& spec) {
    return {{"kind", spec.kind},
            {"rows", spec.rows},
            {"cols", spec.cols},
            {"base_channels", spec.base_channels},
            {"channel_mults", spec.channel_mults},
            {"in_channels", spec.in_channels},
            {"time_embed_dim", spec.time_embed_dim}};
}

DenoiserSpec denoiser_spec_from_json(const nlohmann::json& j) {
    DenoiserSpec spec;
    for (const auto& [key, value] : j.items()) {
        if (key == "kind") spec.kind = value.get<std::string>();
        else if (key == "rows") spec.rows = value.get<int>();
        else if (key == "cols") spec.cols = value.get<int>();
        else if (key == "base_channels") spec.base_channels = value.get<int>();
        else if (key == "channel_mults") spec.channel_mults = value.get<std::vector<int>>();
        else if (key == "in_channels") spec.in_channels = value.get<int>();
        else if (key == "time_embed_dim") spec.time_embed_dim = value.get<int>();
        else throw std::invalid_argument("DenoiserSpec: unknown field '" + key + "'");
    }
    validate(spec);
    return spec;
}

}  // namespace dsrlab
