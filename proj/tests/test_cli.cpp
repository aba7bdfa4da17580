#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsrlab/cli.hpp"
#include "dsrlab/spectral.hpp"

using namespace dsrlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result call(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

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

std::set<std::string> tree(const fs::path& root) {
    std::set<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) out.insert(fs::relative(e.path(), root).string());
    return out;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

const json kSmall = {{"scenario",
                      {{"n_pulses", 16},
                       {"n_range", 16},
                       {"max_range", 12.0},
                       {"n_targets", 2},
                       {"n_clutter", 1},
                       {"snr_db", 10.0}}},
                     {"denoiser", {{"rows", 16}, {"cols", 16}, {"base_channels", 8}, {"channel_mults", {1, 2}}, {"time_embed_dim", 16}}},
                     {"schedule", {{"T", 20}, {"beta_1", 1e-3}, {"beta_T", 0.5}}},
                     {"train", {{"batch_size", 4}, {"steps", 3}}},
                     {"cfar", {{"guard", 1}, {"train", 2}}}};

}  // namespace

TEST_CASE("usage errors exit with 2") {
    auto r = call({"bogus"});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
    r = call({});
    CHECK(r.code == 2);
    r = call({"simulate", "--no-such-flag"});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
    r = call({"--help"});
    CHECK(r.code == 0);
}

TEST_CASE("config errors exit with 2") {
    const auto dir = scratch("dsrlab_cli_cfg");
    {
        std::ofstream(dir / "broken.json") << "{ \"scenario\": ";
    }
    CHECK(call({"simulate", "--config", (dir / "broken.json").string(), "--out", (dir / "o").string()}).code == 2);
    write_json(dir / "unknown.json", {{"scenario", {{"n_pulse", 3}}}});
    CHECK(call({"simulate", "--config", (dir / "unknown.json").string(), "--out", (dir / "o").string()}).code == 2);
    write_json(dir / "unknown2.json", {{"cfar", {{"window", 3}}}});
    CHECK(call({"simulate", "--config", (dir / "unknown2.json").string(), "--out", (dir / "o").string()}).code == 2);
    CHECK(call({"simulate", "--config", (dir / "missing.json").string(), "--out", (dir / "o").string()}).code == 2);
    CHECK(call({"simulate", "--set", "scenario.n_targets=0", "--set", "scenario.n_clutter=0", "--out", (dir / "o").string()}).code == 2);
    fs::remove_all(dir);
}

TEST_CASE("runtime failures exit with 1") {
    const auto dir = scratch("dsrlab_cli_rt");
    const auto r = call({"evaluate", "--manifest", (dir / "nope.json").string(), "--out", (dir / "o").string()});
    CHECK(r.code == 1);
    CHECK_FALSE(r.err.empty());
    fs::remove_all(dir);
}

TEST_CASE("simulate honours the seed and records the run") {
    const auto dir = scratch("dsrlab_cli_sim");
    write_json(dir / "cfg.json", kSmall);
    const auto cfg = (dir / "cfg.json").string();
    REQUIRE(call({"simulate", "--config", cfg, "--seed", "5", "--factor", "2", "--out", (dir / "a").string()}).code == 0);
    REQUIRE(call({"simulate", "--config", cfg, "--seed", "5", "--factor", "2", "--out", (dir / "b").string()}).code == 0);
    REQUIRE(call({"simulate", "--config", cfg, "--seed", "6", "--out", (dir / "c").string()}).code == 0);
    for (const char* f : {"hr.f32", "lr.f32", "sr_fft.f32", "truth.json"}) CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    CHECK(slurp(dir / "a" / "hr.f32") != slurp(dir / "c" / "hr.f32"));
    CHECK(read_raw_map(dir / "a" / "lr.f32").n_doppler() == 8);
    CHECK(read_raw_map(dir / "a" / "sr_fft.f32").n_doppler() == 16);

    const auto run_json = json::parse(std::ifstream(dir / "a" / "run_simulate.json"));
    CHECK(run_json["seed"] == 5);
    CHECK(run_json["subcommand"] == "simulate");
    CHECK(run_json["config_hash"].get<std::string>().size() == 16);
    for (const auto& f : run_json["files"]) CHECK(fs::exists(dir / "a" / f.get<std::string>()));
    CHECK(slurp(dir / "a" / "run_simulate.json") == slurp(dir / "b" / "run_simulate.json"));

    const auto scen = json::parse(std::ifstream(dir / "a" / "scenario.json"));
    CHECK(scen["seed"] == 5);
    CHECK(scen["n_pulses"] == 16);
    fs::remove_all(dir);
}

TEST_CASE("bare scenario config and overrides") {
    const auto dir = scratch("dsrlab_cli_bare");
    write_json(dir / "scen.json", kSmall["scenario"]);
    REQUIRE(call({"simulate", "--config", (dir / "scen.json").string(), "--set", "n_targets=4", "--out", (dir / "o").string()}).code == 0);
    const auto scen = json::parse(std::ifstream(dir / "o" / "scenario.json"));
    CHECK(scen["n_targets"] == 4);
    CHECK(scen["n_range"] == 16);
    fs::remove_all(dir);
}

TEST_CASE("output root defaults to the environment") {
    const auto dir = scratch("dsrlab_cli_env");
    write_json(dir / "cfg.json", kSmall);
    ::setenv("DSRLAB_OUT", (dir / "from_env").string().c_str(), 1);
    const auto r = call({"simulate", "--config", (dir / "cfg.json").string()});
    ::unsetenv("DSRLAB_OUT");
    CHECK(r.code == 0);
    CHECK(fs::exists(dir / "from_env" / "hr.f32"));
    fs::remove_all(dir);
}

TEST_CASE("dataset, evaluation, training, sampling and rendering") {
    const auto dir = scratch("dsrlab_cli_flow");
    write_json(dir / "cfg.json", kSmall);
    const auto cfg = (dir / "cfg.json").string();
    const auto before = tree(dir);

    const auto ds = (dir / "ds").string();
    REQUIRE(call({"make-dataset", "--config", cfg, "--samples", "4", "--factor", "2", "--out", ds}).code == 0);
    const auto manifest = json::parse(std::ifstream(dir / "ds" / "manifest.json"));
    CHECK(manifest.size() == 4);
    CHECK(fs::exists(dir / "ds" / "run_make-dataset.json"));

    const auto ev = (dir / "ev").string();
    REQUIRE(call({"evaluate", "--config", cfg, "--methods", "fft,music", "--manifest", ds + "/manifest.json", "--out", ev}).code == 0);
    std::ifstream csv(dir / "ev" / "report.csv");
    int lines = 0;
    for (std::string l; std::getline(csv, l);) ++lines;
    CHECK(lines == 1 + 8);
    CHECK(fs::exists(dir / "ev" / "summary.json"));

    const auto tr = (dir / "tr").string();
    REQUIRE(call({"train", "--config", cfg, "--manifest", ds + "/manifest.json", "--out", tr}).code == 0);
    CHECK(fs::exists(dir / "tr" / "checkpoint.dsrck"));
    CHECK(fs::exists(dir / "tr" / "loss.csv"));

    const auto sp = (dir / "sp").string();
    REQUIRE(call({"sample", "--checkpoint", tr + "/checkpoint.dsrck", "--manifest", ds + "/manifest.json", "--samples", "2",
                  "--out", sp})
                .code == 0);
    std::size_t produced = 0;
    for (const auto& e : fs::directory_iterator(dir / "sp" / "samples")) produced += e.path().extension() == ".f32" ? 1 : 0;
    CHECK(produced == 2);

    const auto ev3 = (dir / "ev3").string();
    REQUIRE(call({"evaluate", "--config", cfg, "--methods", "fft,sr3", "--checkpoint", tr + "/checkpoint.dsrck", "--manifest",
                  ds + "/manifest.json", "--out", ev3})
                .code == 0);

    const auto ms = (dir / "ms").string();
    REQUIRE(call({"music", "--config", cfg, "--factor", "2", "--out", ms}).code == 0);
    CHECK(read_raw_map(dir / "ms" / "music.f32").n_doppler() == 16);

    const auto cf = (dir / "cf").string();
    REQUIRE(call({"cfar", "--config", cfg, "--map", ms + "/music_linear.f32", "--out", cf}).code == 0);
    CHECK(json::parse(std::ifstream(dir / "cf" / "detections.json")).is_array());

    const auto rd = (dir / "rd").string();
    const auto first = manifest[0];
    REQUIRE(call({"render", "--map", ds + "/" + first["hr"]["path"].get<std::string>(), "--map",
                  ds + "/" + first["lr"]["path"].get<std::string>(), "--db-span", "40", "--out", rd})
                .code == 0);
    std::ifstream ppm(dir / "rd" / "render.ppm", std::ios::binary);
    std::string magic;
    int w = 0, h = 0;
    ppm >> magic >> w >> h;
    CHECK(magic == "P6");
    CHECK(w == 16 + 8 + 4);
    CHECK(h == 16);

    // everything new lives under the requested output directories
    for (const auto& p : tree(dir)) {
        if (before.contains(p)) continue;
        const auto top = fs::path(p).begin()->string();
        CHECK(std::set<std::string>{"ds", "ev", "tr", "sp", "ev3", "ms", "cf", "rd"}.contains(top));
    }
    fs::remove_all(dir);
}
