#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "dsrlab/pipeline.hpp"

using namespace dsrlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

Scatterer target(int r, double doppler_bin, int n_doppler = 128, double vel_res = 0.23) {
    return {r, doppler_bin_to_velocity(doppler_bin, n_doppler, vel_res), 1.0, 0.0, ScattererKind::target};
}

DetectionList dets_at(std::initializer_list<std::pair<int, int>> cells) {
    DetectionList d;
    for (auto [r, c] : cells) d.detections.push_back({r, c, 10.0, 1.0});
    return d;
}

}  // namespace

TEST_CASE("dataset record shapes") {
    const auto dir = scratch("dsrlab_ds_shapes");
    DatasetOptions opts;
    opts.n_samples = 1;
    opts.factors = {2};
    const auto m = generate_dataset(ScenarioConfig{}, opts, dir);
    REQUIRE(m.records.size() == 1);
    const auto maps = load_record_maps(m, m.records[0]);
    CHECK(maps.hr.n_range() == 128);
    CHECK(maps.hr.n_doppler() == 128);
    CHECK(maps.lr.n_range() == 128);
    CHECK(maps.lr.n_doppler() == 64);
    CHECK(maps.sr_fft.n_doppler() == 128);
    for (const auto* map : {&maps.hr, &maps.lr, &maps.sr_fft}) {
        CHECK(map->domain == MapDomain::normalized);
        for (double v : map->values.data) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK(maps.hr.norm == m.records[0].hr_norm);
    CHECK(maps.sr_fft.norm == m.records[0].sr_fft_norm);
    fs::remove_all(dir);
}

TEST_CASE("dataset determinism, split and manifest round trip") {
    const auto a = scratch("dsrlab_ds_a");
    const auto b = scratch("dsrlab_ds_b");
    ScenarioConfig tmpl;
    tmpl.n_pulses = 32;
    tmpl.n_range = 32;
    tmpl.max_range = 32 * tmpl.range_res;
    DatasetOptions opts;
    opts.n_samples = 20;
    opts.factors = {2, 4, 8};
    opts.seed = 77;
    const auto ma = generate_dataset(tmpl, opts, a);
    generate_dataset(tmpl, opts, b);
    CHECK(ma.records.size() == 60);
    for (const auto& entry : fs::directory_iterator(a / "maps")) {
        CHECK(slurp(entry.path()) == slurp(b / "maps" / entry.path().filename()));
    }
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

    int test = 0;
    for (const auto& rec : ma.records) {
        test += rec.split == "test" ? 1 : 0;
        CHECK((rec.split == "test") == (rec.sample_index >= 18));
        for (const auto& s : rec.truth) {
            const double bin = velocity_to_doppler_bin(s.velocity, 32, tmpl.vel_res);
            CHECK(bin >= 0.0);
            CHECK(bin < 32.0);
        }
        const auto sim = simulate_datacube(rec.config);
        CHECK(sim.scatterers == rec.truth);
    }
    CHECK(test == 6);

    const auto back = load_manifest(a / "manifest.json");
    REQUIRE(back.records.size() == ma.records.size());
    for (std::size_t i = 0; i < back.records.size(); ++i) CHECK(back.records[i] == ma.records[i]);

    const auto j = nlohmann::json::parse(std::ifstream(a / "manifest.json"));
    CHECK(j.is_array());

    fs::remove(a / ma.records[4].lr_path);
    CHECK_THROWS(load_manifest(a / "manifest.json"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("dataset preconditions") {
    const auto dir = scratch("dsrlab_ds_bad");
    DatasetOptions opts;
    opts.n_samples = 0;
    CHECK_THROWS(generate_dataset(ScenarioConfig{}, opts, dir));
    opts.n_samples = 1;
    opts.factors = {3};
    CHECK_THROWS(generate_dataset(ScenarioConfig{}, opts, dir));
    fs::remove_all(dir);
}

TEST_CASE("matching examples") {
    const std::vector<Scatterer> truth{target(10, 30), target(50, 80), target(90, 100),
                                       {20, 0.01, 3.0, 0.0, ScattererKind::clutter}};
    auto rep = match_detections({}, truth, 128, 0.23);
    CHECK(rep.true_positives == 0);
    CHECK(rep.false_negatives == 3);
    CHECK(rep.false_alarms == 0);
    CHECK(rep.recall() == 0.0);
    CHECK(rep.precision() == 1.0);

    rep = match_detections(dets_at({{10, 30}, {50, 80}, {90, 100}}), truth, 128, 0.23);
    CHECK(rep.true_positives == 3);
    CHECK(rep.false_negatives == 0);
    for (double d : rep.distances) CHECK(d == doctest::Approx(0.0).scale(1e-9));

    rep = match_detections(dets_at({{10, 30}, {50, 80}, {90, 100}, {120, 5}, {20, 64}}), truth, 128, 0.23);
    CHECK(rep.true_positives == 3);
    CHECK(rep.false_alarms == 1);
    CHECK(rep.clutter_hits == 1);
    CHECK(rep.precision() == doctest::Approx(0.75));

    // tolerance box: 1 range bin, 2 Doppler bins
    rep = match_detections(dets_at({{11, 32}, {52, 80}, {90, 103}}), truth, 128, 0.23);
    CHECK(rep.true_positives == 1);
    CHECK(rep.false_alarms == 2);
    CHECK(rep.distances[0] == doctest::Approx(std::hypot(1.0, 2.0)));

    // one detection cannot serve two targets
    const std::vector<Scatterer> pair{target(5, 60), target(5, 61)};
    rep = match_detections(dets_at({{5, 60}}), pair, 128, 0.23);
    CHECK(rep.true_positives == 1);
    CHECK(rep.false_negatives == 1);
    CHECK(rep.true_positives + rep.false_negatives == 2);
}

TEST_CASE("matching is permutation invariant") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> r(0, 40), d(0, 127);
    std::vector<Scatterer> truth;
    for (int i = 0; i < 10; ++i) truth.push_back(target(r(rng), d(rng) + 0.37 * i));
    DetectionList dets;
    for (int i = 0; i < 30; ++i) dets.detections.push_back({r(rng), d(rng), 1.0, 0.5});
    for (const auto& t : truth) dets.detections.push_back({t.range_bin, static_cast<int>(std::lround(velocity_to_doppler_bin(t.velocity, 128, 0.23))) + 1, 1.0, 0.5});
    const auto base = match_detections(dets, truth, 128, 0.23);
    for (int k = 0; k < 10; ++k) {
        std::shuffle(dets.detections.begin(), dets.detections.end(), rng);
        const auto rep = match_detections(dets, truth, 128, 0.23);
        CHECK(rep.true_positives == base.true_positives);
        CHECK(rep.false_alarms == base.false_alarms);
        CHECK(rep.clutter_hits == base.clutter_hits);
    }
    CHECK_THROWS(match_detections(dets, truth, 128, 0.23, MatchTolerance{-1.0, 2.0}));
}

TEST_CASE("psnr") {
    const Grid x(8, 8, 0.3);
    CHECK(psnr(x, x) == 150.0);
    CHECK(psnr(Grid(4, 4, -1.0), Grid(4, 4, 1.0)) == doctest::Approx(0.0));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Grid a(16, 16), b(16, 16);
    for (auto& v : a.data) v = u(rng);
    for (auto& v : b.data) v = u(rng);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    mse /= static_cast<double>(a.size());
    CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(4.0 / mse)) <= 1e-9);
    CHECK_THROWS(psnr(Grid(2, 2), Grid(2, 3)));
    CHECK(mean_drift(Grid(2, 2, 0.5), Grid(2, 2, 0.25)) == doctest::Approx(0.25));
}

TEST_CASE("fft evaluation on undegraded maps finds separated targets") {
    const auto dir = scratch("dsrlab_eval_f1");
    ScenarioConfig tmpl;
    tmpl.snr_db = 30.0;
    tmpl.n_clutter = 1;
    DatasetOptions opts;
    opts.n_samples = 6;
    opts.factors = {1};
    const auto m = generate_dataset(tmpl, opts, dir);
    EvalOptions eo;
    eo.methods = {Method::fft};
    const auto report = evaluate_methods(m, eo);
    REQUIRE(report.rows.size() == 6);
    int checked = 0;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& truth = m.records[i].truth;
        bool separated = true;
        for (const auto& a : truth) {
            for (const auto& b : truth) {
                if (&a == &b) continue;
                const double dd = std::abs(velocity_to_doppler_bin(a.velocity, 128, 0.23) - velocity_to_doppler_bin(b.velocity, 128, 0.23));
                if (std::abs(a.range_bin - b.range_bin) <= 6 && dd <= 8) separated = false;
            }
        }
        if (!separated) continue;
        ++checked;
        CHECK(report.rows[i].match.recall() == 1.0);
    }
    CHECK(checked >= 4);
    fs::remove_all(dir);
}

TEST_CASE("close pair merges after truncation") {
    const auto dir = scratch("dsrlab_eval_pair");
    ScenarioConfig tmpl;
    tmpl.snr_db = 30.0;
    tmpl.n_targets = 2;
    tmpl.n_clutter = 1;
    tmpl.pair_spacing_bins = 1;
    DatasetOptions opts;
    opts.n_samples = 4;
    opts.factors = {4};
    const auto m = generate_dataset(tmpl, opts, dir);
    EvalOptions eo;
    eo.methods = {Method::fft};
    for (const auto& row : evaluate_methods(m, eo).rows) CHECK(row.match.recall() < 1.0);
    fs::remove_all(dir);
}

TEST_CASE("report shape and aggregation") {
    const auto dir = scratch("dsrlab_eval_report");
    ScenarioConfig tmpl;
    tmpl.n_pulses = 32;
    tmpl.n_range = 32;
    tmpl.max_range = 32 * tmpl.range_res;
    tmpl.snr_db = 10.0;
    DatasetOptions opts;
    opts.n_samples = 4;
    opts.factors = {2};
    const auto m = generate_dataset(tmpl, opts, dir);
    EvalOptions eo;
    eo.methods = {Method::fft, Method::music};
    eo.map_dir = dir / "eval_maps";
    const auto report = evaluate_methods(m, eo);
    CHECK(report.rows.size() == 8);
    CHECK(fs::exists(dir / "eval_maps" / (m.records[0].id + "_music.f32")));
    write_report_csv(report, dir / "report.csv");
    std::ifstream csv(dir / "report.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "sample,method,factor,tp,fn,fa,recall,precision");
    int n = 0;
    while (std::getline(csv, line)) ++n;
    CHECK(n == 8);

    const auto summary = report_summary(report);
    for (const auto& g : summary["groups"]) {
        double sum = 0.0;
        int count = 0;
        for (const auto& r : report.rows) {
            if (to_string(r.method) == g["method"] && r.factor == g["factor"]) {
                sum += r.match.recall();
                ++count;
            }
        }
        CHECK(g["samples"] == count);
        CHECK(g["recall"].get<double>() == doctest::Approx(sum / count));
    }
    CHECK(summary["rows"].size() == 8);

    eo.methods = {Method::sr3};
    CHECK_THROWS(evaluate_methods(m, eo));
    eo.methods = {Method::fft};
    eo.split = "validation";
    CHECK_THROWS(evaluate_methods(m, eo));
    CHECK_THROWS(method_from_string("esprit"));
    fs::remove_all(dir);
}
