#include "dsrlab/unet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dsrlab/seed.hpp"

namespace dsrlab {

namespace {

namespace nn = torch::nn;

constexpr char kMagic[8] = {'D', 'S', 'R', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

int norm_groups(int channels) {
    int g = std::gcd(channels, 32);
    while (g > 1 && channels / g < 4) g /= 2;
    return std::max(g, 1);
}

torch::Tensor timestep_embedding(const torch::Tensor& steps, int dim) {
    const int half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / std::max(half - 1, 1));
    auto args = steps.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
    return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

struct ResBlockImpl : nn::Module {
    ResBlockImpl(int in_ch, int out_ch, int temb_dim)
        : norm1(nn::GroupNormOptions(norm_groups(in_ch), in_ch)),
          conv1(nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)),
          time_proj(temb_dim, out_ch),
          norm2(nn::GroupNormOptions(norm_groups(out_ch), out_ch)),
          conv2(nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)) {
        register_module("norm1", norm1);
        register_module("conv1", conv1);
        register_module("time_proj", time_proj);
        register_module("norm2", norm2);
        register_module("conv2", conv2);
        if (in_ch != out_ch) {
            skip = nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 1));
            register_module("skip", skip);
        }
    }

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb) {
        auto h = conv1(torch::silu(norm1(x)));
        h = h + time_proj(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
        h = conv2(torch::silu(norm2(h)));
        return h + (skip ? skip(x) : x);
    }

    nn::GroupNorm norm1;
    nn::Conv2d conv1;
    nn::Linear time_proj;
    nn::GroupNorm norm2;
    nn::Conv2d conv2;
    nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

struct UNetImpl : nn::Module {
    explicit UNetImpl(const DenoiserSpec& spec) : embed_dim(spec.time_embed_dim) {
        const int temb = 4 * spec.base_channels;
        time_mlp1 = register_module("time_mlp1", nn::Linear(embed_dim, temb));
        time_mlp2 = register_module("time_mlp2", nn::Linear(temb, temb));
        in_conv = register_module("in_conv", nn::Conv2d(nn::Conv2dOptions(spec.in_channels, spec.base_channels, 3).padding(1)));

        const int levels = static_cast<int>(spec.channel_mults.size());
        std::vector<int> skip_ch;
        int ch = spec.base_channels;
        for (int i = 0; i < levels; ++i) {
            const int out = spec.base_channels * spec.channel_mults[i];
            down_blocks->push_back(ResBlock(ch, out, temb));
            ch = out;
            skip_ch.push_back(ch);
            if (i + 1 < levels) {
                downsamplers->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1)));
            }
        }
        register_module("down_blocks", down_blocks);
        register_module("downsamplers", downsamplers);
        mid = register_module("mid", ResBlock(ch, ch, temb));

        for (int i = levels - 1; i >= 0; --i) {
            const int out = spec.base_channels * spec.channel_mults[i];
            up_blocks->push_back(ResBlock(ch + skip_ch[i], out, temb));
            ch = out;
            if (i > 0) upsamplers->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).padding(1)));
        }
        register_module("up_blocks", up_blocks);
        register_module("upsamplers", upsamplers);

        out_norm = register_module("out_norm", nn::GroupNorm(nn::GroupNormOptions(norm_groups(ch), ch)));
        out_conv = register_module("out_conv", nn::Conv2d(nn::Conv2dOptions(ch, 1, 3).padding(1)));
        // Start from a zero predictor.
        torch::NoGradGuard guard;
        out_conv->weight.zero_();
        out_conv->bias.zero_();
    }

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& steps) {
        auto temb = time_mlp2(torch::silu(time_mlp1(timestep_embedding(steps, embed_dim))));
        auto h = in_conv(x);
        std::vector<torch::Tensor> skips;
        const auto levels = down_blocks->size();
        for (std::size_t i = 0; i < levels; ++i) {
            h = down_blocks[i]->as<ResBlock>()->forward(h, temb);
            skips.push_back(h);
            if (i + 1 < levels) h = downsamplers[i]->as<nn::Conv2d>()->forward(h);
        }
        h = mid->forward(h, temb);
        for (std::size_t j = 0; j < levels; ++j) {
            const std::size_t level = levels - 1 - j;
            h = up_blocks[j]->as<ResBlock>()->forward(torch::cat({h, skips[level]}, 1), temb);
            if (level > 0) {
                h = torch::upsample_nearest2d(h, std::vector<int64_t>{h.size(2) * 2, h.size(3) * 2});
                h = upsamplers[j]->as<nn::Conv2d>()->forward(h);
            }
        }
        return out_conv(torch::silu(out_norm(h)));
    }

    int embed_dim;
    nn::Linear time_mlp1{nullptr};
    nn::Linear time_mlp2{nullptr};
    nn::Conv2d in_conv{nullptr};
    nn::ModuleList down_blocks;
    nn::ModuleList downsamplers;
    ResBlock mid{nullptr};
    nn::ModuleList up_blocks;
    nn::ModuleList upsamplers;
    nn::GroupNorm out_norm{nullptr};
    nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(UNet);

torch::Tensor stack_grids(std::span<const Grid> grids, int rows, int cols) {
    auto t = torch::empty({static_cast<int64_t>(grids.size()), 1, rows, cols}, torch::kFloat32);
    float* p = t.data_ptr<float>();
    const auto cells = static_cast<std::size_t>(rows) * cols;
    for (std::size_t b = 0; b < grids.size(); ++b) {
        if (grids[b].rows != static_cast<std::size_t>(rows) || grids[b].cols != static_cast<std::size_t>(cols)) {
            throw std::invalid_argument("UNetDenoiser: map shape differs from the network spec");
        }
        std::transform(grids[b].data.begin(), grids[b].data.end(), p + b * cells,
                       [](double v) { return static_cast<float>(v); });
    }
    return t;
}

std::vector<Grid> unstack(const torch::Tensor& t) {
    auto c = t.contiguous();
    const auto batch = c.size(0);
    const auto rows = static_cast<std::size_t>(c.size(2));
    const auto cols = static_cast<std::size_t>(c.size(3));
    const float* p = c.data_ptr<float>();
    std::vector<Grid> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) {
        Grid g(rows, cols);
        std::copy(p + b * rows * cols, p + (b + 1) * rows * cols, g.data.begin());
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace

struct UNetDenoiser::Impl {
    DenoiserSpec spec;
    UNet net{nullptr};

    torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& cond, const torch::Tensor& steps) {
        return net->forward(torch::cat({x_t, cond}, 1), steps);
    }

    std::vector<std::pair<std::string, torch::Tensor>> named_tensors() const {
        std::vector<std::pair<std::string, torch::Tensor>> out;
        for (const auto& item : net->named_parameters()) out.emplace_back(item.key(), item.value());
        for (const auto& item : net->named_buffers()) out.emplace_back(item.key(), item.value());
        return out;
    }
};

ScheduleConfig schedule_config_of(const DiffusionSchedule& sched) {
    return {sched.T, sched.beta_first, sched.beta_last};
}

UNetDenoiser::UNetDenoiser(const DenoiserSpec& spec, std::uint64_t init_seed) : impl_(std::make_unique<Impl>()) {
    validate(spec);
    if (spec.kind != "trainable_unet") throw std::invalid_argument("UNetDenoiser: spec kind must be trainable_unet");
    impl_->spec = spec;
    torch::manual_seed(init_seed);
    impl_->net = UNet(spec);
    impl_->net->eval();
}

UNetDenoiser::~UNetDenoiser() = default;
UNetDenoiser::UNetDenoiser(UNetDenoiser&&) noexcept = default;
UNetDenoiser& UNetDenoiser::operator=(UNetDenoiser&&) noexcept = default;

const DenoiserSpec& UNetDenoiser::spec() const { return impl_->spec; }

std::size_t UNetDenoiser::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : impl_->net->parameters()) n += static_cast<std::size_t>(p.numel());
    return n;
}

std::vector<Grid> UNetDenoiser::predict_noise(std::span<const Grid> x_t, std::span<const Grid> cond,
                                              std::span<const int> steps) const {
    if (x_t.size() != cond.size() || x_t.size() != steps.size()) {
        throw std::invalid_argument("UNetDenoiser: batch length mismatch");
    }
    if (x_t.empty()) return {};
    torch::NoGradGuard no_grad;
    const auto& s = impl_->spec;
    auto xt = stack_grids(x_t, s.rows, s.cols);
    auto y = stack_grids(cond, s.rows, s.cols);
    std::vector<int64_t> st(steps.begin(), steps.end());
    auto tt = torch::tensor(st, torch::kInt64);
    return unstack(impl_->forward(xt, y, tt));
}

void UNetDenoiser::save(const std::filesystem::path& path, const ScheduleConfig& schedule) const {
    static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian float32");
    nlohmann::json header;
    header["format"] = "dsrlab-checkpoint";
    header["version"] = kFormatVersion;
    header["spec"] = to_json(impl_->spec);
    header["schedule"] = {{"T", schedule.T}, {"beta_1", schedule.beta_1}, {"beta_T", schedule.beta_T}};
    auto table = nlohmann::json::array();
    std::uint64_t offset = 0;
    const auto tensors = impl_->named_tensors();
    for (const auto& [name, t] : tensors) {
        table.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", offset}, {"numel", t.numel()}});
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
    }
    header["tensors"] = table;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kFormatVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) {
        auto c = t.detach().to(torch::kFloat32).contiguous();
        out.write(reinterpret_cast<const char*>(c.data_ptr<float>()), static_cast<std::streamsize>(c.numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

UNetDenoiser UNetDenoiser::load(const std::filesystem::path& path, ScheduleConfig* schedule) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[sizeof(kMagic)];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a dsrlab checkpoint: " + path.string());
    if (version != kFormatVersion) throw std::runtime_error("unsupported checkpoint version");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const auto header = nlohmann::json::parse(text);

    UNetDenoiser model(denoiser_spec_from_json(header.at("spec")), 0);
    if (schedule) {
        const auto& s = header.at("schedule");
        *schedule = {s.at("T").get<int>(), s.at("beta_1").get<double>(), s.at("beta_T").get<double>()};
    }
    const auto blob_start = in.tellg();
    const auto tensors = model.impl_->named_tensors();
    const auto& table = header.at("tensors");
    if (table.size() != tensors.size()) throw std::runtime_error("checkpoint tensor table does not match the network");
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& [name, t] = tensors[i];
        const auto& entry = table[i];
        if (entry.at("name").get<std::string>() != name || entry.at("shape").get<std::vector<int64_t>>() != t.sizes().vec()) {
            throw std::runtime_error("checkpoint tensor mismatch at " + name);
        }
        std::vector<float> buf(static_cast<std::size_t>(t.numel()));
        in.seekg(blob_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
        t.copy_(torch::from_blob(buf.data(), t.sizes(), torch::kFloat32));
    }
    return model;
}

TrainResult train_denoiser(UNetDenoiser& model, const MapBatch& dataset, const DiffusionSchedule& sched,
                           const TrainConfig& cfg, const std::optional<std::filesystem::path>& loss_csv) {
    validate(dataset);
    if (cfg.steps < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
        throw std::invalid_argument("train_denoiser: steps, batch size and learning rate must be positive");
    }
    if (!(cfg.ema_decay >= 0.0 && cfg.ema_decay < 1.0)) throw std::invalid_argument("train_denoiser: ema_decay in [0, 1)");
    const auto& spec = model.spec();
    if (dataset.x_hr.front().rows != static_cast<std::size_t>(spec.rows) ||
        dataset.x_hr.front().cols != static_cast<std::size_t>(spec.cols)) {
        throw std::invalid_argument("train_denoiser: dataset map size differs from the network spec");
    }
    if (cfg.threads > 0) torch::set_num_threads(cfg.threads);

    auto& impl = model.impl();
    impl.net->train();
    torch::optim::Adam opt(impl.net->parameters(), torch::optim::AdamOptions(cfg.learning_rate));

    std::vector<torch::Tensor> ema;
    if (cfg.ema_decay > 0.0) {
        for (const auto& p : impl.net->parameters()) ema.push_back(p.detach().clone());
    }

    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0));
    std::mt19937_64 noise_rng(derive_seed(cfg.seed, 1));
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    std::ofstream csv;
    if (loss_csv) {
        csv.open(*loss_csv, std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + loss_csv->string());
        csv << "step,loss\n";
        csv.precision(9);
    }

    TrainResult result;
    result.loss.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        MapBatch batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), shuffle_rng);
                cursor = 0;
            }
            const auto idx = order[cursor++];
            batch.x_hr.push_back(dataset.x_hr[idx]);
            batch.y_sr.push_back(dataset.y_sr[idx]);
        }
        const auto nb = draw_noised_batch(batch, sched, noise_rng);
        auto xt = stack_grids(nb.x_t, spec.rows, spec.cols);
        auto y = stack_grids(batch.y_sr, spec.rows, spec.cols);
        auto eps = stack_grids(nb.eps, spec.rows, spec.cols);
        std::vector<int64_t> st(nb.steps.begin(), nb.steps.end());
        auto tt = torch::tensor(st, torch::kInt64);

        opt.zero_grad();
        auto loss = torch::mse_loss(impl.forward(xt, y, tt), eps);
        loss.backward();
        if (cfg.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(impl.net->parameters(), cfg.grad_clip);
        opt.step();

        if (!ema.empty()) {
            torch::NoGradGuard no_grad;
            const auto params = impl.net->parameters();
            for (std::size_t i = 0; i < params.size(); ++i) {
                ema[i].mul_(cfg.ema_decay).add_(params[i].detach(), 1.0 - cfg.ema_decay);
            }
        }
        const double value = loss.item<double>();
        result.loss.push_back(value);
        if (csv) csv << step << ',' << value << '\n';
    }

    if (!ema.empty()) {
        torch::NoGradGuard no_grad;
        const auto params = impl.net->parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(ema[i]);
    }
    impl.net->eval();
    return result;
}

}  // namespace dsrlab
