#include <doctest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "dsrlab/diffusion.hpp"

using namespace dsrlab;

namespace {

Grid smooth_map(std::size_t rows, std::size_t cols) {
    Grid g(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            g(r, c) = 0.8 * std::sin(0.3 * static_cast<double>(r)) * std::cos(0.2 * static_cast<double>(c)) - 0.1;
        }
    }
    return g;
}

double rel_l2(const Grid& a, const Grid& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
        den += b.data[i] * b.data[i];
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("schedule by hand") {
    const auto s = make_schedule(2, 0.5, 0.5);
    CHECK(s.alpha_bar[0] == doctest::Approx(0.5));
    CHECK(s.alpha_bar[1] == doctest::Approx(0.25));
    CHECK(s.alpha_bar_prev(0) == 1.0);
    CHECK(s.posterior_variance[0] == 0.0);
    CHECK(s.posterior_variance[1] == doctest::Approx((1 - 0.5) / (1 - 0.25) * 0.5));

    const auto lin = make_schedule(5, 0.1, 0.5);
    for (int t = 0; t < 5; ++t) CHECK(lin.beta[t] == doctest::Approx(0.1 + 0.1 * t));

    CHECK_THROWS(make_schedule(1, 0.1, 0.2));
    CHECK_THROWS(make_schedule(10, 0.0, 0.2));
    CHECK_THROWS(make_schedule(10, 0.3, 0.2));
    CHECK_THROWS(make_schedule(10, 0.1, 1.0));
}

TEST_CASE("full-scale and desk schedules") {
    for (const auto& s : {full_scale_schedule(), desk_schedule()}) {
        double running = 1.0;
        for (int t = 0; t < s.T; ++t) {
            running *= 1.0 - s.beta[t];
            CHECK(s.alpha_bar[t] == doctest::Approx(running).epsilon(1e-12));
            CHECK(s.sqrt_alpha_bar[t] == doctest::Approx(std::sqrt(running)));
            if (t > 0) {
                CHECK(s.beta[t] > s.beta[t - 1]);
                CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            }
        }
    }
    const auto p = full_scale_schedule();
    CHECK(p.T == 2000);
    CHECK(p.beta.front() == 1e-6);
    CHECK(p.beta.back() == doctest::Approx(0.02));
    CHECK(p.alpha_bar.back() < 1e-8);
    CHECK(desk_schedule().T == 200);
    CHECK(desk_schedule().alpha_bar.back() < 1e-8);
}

TEST_CASE("forward sample") {
    const auto s = full_scale_schedule();
    const auto x0 = smooth_map(8, 8);
    const Grid zero(8, 8);
    const auto xt = forward_sample(x0, 500, zero, s);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(xt.data[i] == doctest::Approx(s.sqrt_alpha_bar[500] * x0.data[i]));

    std::mt19937_64 rng(3);
    auto unit = x0;
    double norm = 0.0;
    for (double v : unit.data) norm += v * v;
    for (auto& v : unit.data) v /= std::sqrt(norm);
    const auto eps = standard_normal_grid(8, 8, rng);
    const auto last = forward_sample(unit, s.T - 1, eps, s);
    double diff = 0.0, en = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        diff += (last.data[i] - eps.data[i]) * (last.data[i] - eps.data[i]);
        en += eps.data[i] * eps.data[i];
    }
    CHECK(std::sqrt(diff / en) <= 1e-3);
    CHECK_THROWS(forward_sample(x0, 0, Grid(4, 4), s));
    CHECK_THROWS(forward_sample(x0, s.T, zero, s));
}

TEST_CASE("training loss with oracle and zero denoisers") {
    const auto s = desk_schedule();
    MapBatch batch;
    for (int i = 0; i < 64; ++i) {
        batch.x_hr.push_back(smooth_map(16, 16));
        batch.y_sr.push_back(Grid(16, 16, 0.25));
    }
    std::mt19937_64 rng(4);
    const SinglePointOracle oracle(s, smooth_map(16, 16));
    CHECK(training_loss(oracle, batch, s, rng) <= 1e-12);

    const ZeroDenoiser zero;
    const double loss = training_loss(zero, batch, s, rng);
    CHECK(loss >= 0.0);
    CHECK(loss == doctest::Approx(1.0).epsilon(0.05));

    std::mt19937_64 a(9), b(9);
    CHECK(training_loss(zero, batch, s, a) == training_loss(zero, batch, s, b));

    auto bad = batch;
    bad.x_hr[3](0, 0) = 1.5;
    CHECK_THROWS(validate(bad));
    bad = batch;
    bad.y_sr[0] = Grid(8, 8);
    CHECK_THROWS(validate(bad));
}

TEST_CASE("reverse step") {
    const auto s = desk_schedule();
    const ZeroDenoiser zero;
    const auto x = smooth_map(8, 8);
    std::mt19937_64 a(1), b(2);
    CHECK(reverse_step(zero, x, x, 0, s, a) == reverse_step(zero, x, x, 0, s, b));
    CHECK_THROWS(reverse_step(zero, x, x, s.T, s, a));

    // zero prediction from zero input leaves pure posterior-variance noise
    const Grid z(100, 100);
    const int t = 50;
    const auto out = reverse_step(zero, z, z, t, s, a);
    double m = 0.0, v = 0.0;
    for (double d : out.data) m += d;
    m /= static_cast<double>(out.size());
    for (double d : out.data) v += (d - m) * (d - m);
    v /= static_cast<double>(out.size() - 1);
    CHECK(std::abs(m) < 0.05 * std::sqrt(s.posterior_variance[t]));
    CHECK(v == doctest::Approx(s.posterior_variance[t]).epsilon(0.05));
}

TEST_CASE("reverse step with the single point oracle follows the forward marginal") {
    const auto s = desk_schedule();
    const Grid x_star(100, 100, 0.6);
    const SinglePointOracle oracle(s, x_star);
    std::mt19937_64 rng(17);
    for (int t : {20, 100, 199}) {
        const auto x_t = forward_sample(x_star, t, standard_normal_grid(100, 100, rng), s);
        const auto prev = reverse_step(oracle, x_t, x_star, t, s, rng);
        double m = 0.0, v = 0.0;
        for (double d : prev.data) m += d;
        m /= 1e4;
        for (double d : prev.data) v += (d - m) * (d - m);
        v /= 1e4 - 1;
        const double abar = s.alpha_bar_prev(t);
        CHECK(std::abs(m - std::sqrt(abar) * 0.6) <= 0.05 * std::sqrt(1 - abar));
        CHECK(v == doctest::Approx(1 - abar).epsilon(0.05));
    }
}

TEST_CASE("sampler recovers the single point") {
    const auto s = desk_schedule();
    const auto x_star = smooth_map(32, 32);
    const SinglePointOracle oracle(s, x_star);
    const Grid cond(32, 32, 0.0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(rel_l2(sample(oracle, cond, s, seed), x_star) <= 5e-2);
    CHECK(sample(oracle, cond, s, 3) == sample(oracle, cond, s, 3));
}

TEST_CASE("gaussian oracle keeps unit moments") {
    const auto s = full_scale_schedule();
    const GaussianOracle oracle(s);
    const auto out = sample(oracle, Grid(100, 100), s, 5, SampleOptions{false});
    double m = 0.0, v = 0.0;
    for (double d : out.data) m += d;
    m /= 1e4;
    for (double d : out.data) v += (d - m) * (d - m);
    v /= 1e4 - 1;
    CHECK(std::abs(m) < 0.05);
    CHECK(v == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("batched sampling equals per-map sampling") {
    const auto s = make_schedule(20, 1e-3, 0.3);
    const SinglePointOracle oracle(s, smooth_map(8, 8));
    const std::vector<Grid> conds{Grid(8, 8), Grid(8, 8, 0.5), Grid(8, 8, -0.5)};
    const std::vector<std::uint64_t> seeds{11, 12, 13};
    const auto batch = sample_batch(oracle, conds, s, seeds);
    REQUIRE(batch.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(batch[i] == sample(oracle, conds[i], s, seeds[i]));
    for (const auto& g : batch) {
        for (double v : g.data) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("denoiser spec json") {
    const auto p = full_scale_denoiser_spec();
    CHECK(p.base_channels == 64);
    CHECK(p.channel_mults == std::vector<int>{1, 2, 3, 4});
    CHECK(p.rows == 128);
    CHECK(denoiser_spec_from_json(to_json(p)) == p);
    const auto d = desk_denoiser_spec();
    CHECK(d.rows == 32);
    CHECK(d.base_channels == 16);
    CHECK(d.channel_mults == std::vector<int>{1, 2});
    CHECK(d.in_channels == 2);

    auto j = to_json(d);
    j["in_channels"] = 1;
    CHECK_THROWS(denoiser_spec_from_json(j));
    j = to_json(d);
    j["channel_mults"] = nlohmann::json::array();
    CHECK_THROWS(denoiser_spec_from_json(j));
    j = to_json(d);
    j["depth"] = 3;
    CHECK_THROWS(denoiser_spec_from_json(j));
}
