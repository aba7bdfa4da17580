#include "dsrlab/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dsrlab/cfar.hpp"
#include "dsrlab/diffusion.hpp"
#include "dsrlab/music.hpp"
#include "dsrlab/pipeline.hpp"
#include "dsrlab/radar_sim.hpp"
#include "dsrlab/render.hpp"
#include "dsrlab/seed.hpp"
#include "dsrlab/spectral.hpp"
#include "dsrlab/unet.hpp"

namespace dsrlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Raised for config problems; maps to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    ScenarioConfig scenario;
    double floor_db = kDefaultFloorDb;
    std::vector<int> factors{2, 4, 8};
    int samples = 1;
    CfarConfig cfar;
    MatchTolerance match;
    ScheduleConfig schedule;
    DenoiserSpec denoiser = desk_denoiser_spec();
    TrainConfig train;
    json music_order = 2;  // integer, or "truth"
    json raw = json::object();
};

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& section) {
    if (!j.is_object()) throw ConfigError(section + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) throw ConfigError(section + ": unknown key '" + key + "'");
    }
}

RunConfig parse_run_config(const json& root) {
    static const std::set<std::string> sections{"scenario", "floor_db", "factors", "samples", "cfar", "match",
                                                 "schedule", "denoiser", "train", "music"};
    RunConfig rc;
    rc.raw = root;
    if (root.is_null()) return rc;
    if (!root.is_object()) throw ConfigError("config: expected a JSON object");

    bool sectioned = true;
    for (const auto& [key, value] : root.items()) sectioned = sectioned && sections.contains(key);
    try {
        if (!sectioned) {
            rc.scenario = scenario_from_json(root);  // bare scenario document
            return rc;
        }
        if (root.contains("scenario")) rc.scenario = scenario_from_json(root["scenario"]);
        if (root.contains("floor_db")) rc.floor_db = root["floor_db"].get<double>();
        if (root.contains("factors")) rc.factors = root["factors"].get<std::vector<int>>();
        if (root.contains("samples")) rc.samples = root["samples"].get<int>();
        if (root.contains("cfar")) {
            const auto& c = root["cfar"];
            reject_unknown(c, {"guard", "train", "pfa", "boundary", "group_peaks"}, "cfar");
            if (c.contains("guard")) rc.cfar.guard = c["guard"].get<int>();
            if (c.contains("train")) rc.cfar.train = c["train"].get<int>();
            if (c.contains("pfa")) rc.cfar.pfa = c["pfa"].get<double>();
            if (c.contains("boundary")) rc.cfar.boundary = boundary_from_string(c["boundary"].get<std::string>());
            if (c.contains("group_peaks")) rc.cfar.group_peaks = c["group_peaks"].get<bool>();
            validate(rc.cfar);
        }
        if (root.contains("match")) {
            const auto& m = root["match"];
            reject_unknown(m, {"range_bins", "doppler_bins"}, "match");
            if (m.contains("range_bins")) rc.match.range_bins = m["range_bins"].get<double>();
            if (m.contains("doppler_bins")) rc.match.doppler_bins = m["doppler_bins"].get<double>();
        }
        if (root.contains("schedule")) {
            const auto& s = root["schedule"];
            reject_unknown(s, {"T", "beta_1", "beta_T"}, "schedule");
            if (s.contains("T")) rc.schedule.T = s["T"].get<int>();
            if (s.contains("beta_1")) rc.schedule.beta_1 = s["beta_1"].get<double>();
            if (s.contains("beta_T")) rc.schedule.beta_T = s["beta_T"].get<double>();
            (void)rc.schedule.build();
        }
        if (root.contains("denoiser")) rc.denoiser = denoiser_spec_from_json(root["denoiser"]);
        if (root.contains("train")) {
            const auto& t = root["train"];
            reject_unknown(t, {"steps", "batch_size", "learning_rate", "ema_decay", "grad_clip", "threads"}, "train");
            if (t.contains("steps")) rc.train.steps = t["steps"].get<int>();
            if (t.contains("batch_size")) rc.train.batch_size = t["batch_size"].get<int>();
            if (t.contains("learning_rate")) rc.train.learning_rate = t["learning_rate"].get<double>();
            if (t.contains("ema_decay")) rc.train.ema_decay = t["ema_decay"].get<double>();
            if (t.contains("grad_clip")) rc.train.grad_clip = t["grad_clip"].get<double>();
            if (t.contains("threads")) rc.train.threads = t["threads"].get<int>();
        }
        if (root.contains("music")) {
            const auto& m = root["music"];
            reject_unknown(m, {"order"}, "music");
            if (m.contains("order")) {
                rc.music_order = m["order"];
                if (!(rc.music_order.is_number_integer() || rc.music_order == "truth")) {
                    throw ConfigError("music.order must be an integer or \"truth\"");
                }
            }
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return rc;
}

json parse_override_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return text;
    }
}

void apply_override(json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    std::string pointer;
    std::stringstream path(assignment.substr(0, eq));
    for (std::string part; std::getline(path, part, '.');) pointer += "/" + part;
    if (root.is_null()) root = json::object();
    root[json::json_pointer(pointer)] = parse_override_value(assignment.substr(eq + 1));
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ConfigError("not an integer list: " + text);
        }
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

/// Collects produced files and writes the run manifest.
class RunLog {
public:
    RunLog(fs::path out_dir, std::string command, std::uint64_t seed, std::uint64_t config_hash)
        : out_(std::move(out_dir)), command_(std::move(command)), seed_(seed), hash_(config_hash) {}

    fs::path path(const fs::path& rel) {
        const auto full = out_ / rel;
        fs::create_directories(full.parent_path());
        files_.push_back(rel.generic_string());
        return full;
    }

    void note(const fs::path& rel) { files_.push_back(rel.generic_string()); }

    void finish() const {
        char hash[17];
        std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(hash_));
        const json j{{"subcommand", command_}, {"config_hash", hash}, {"seed", seed_}, {"files", files_}};
        std::ofstream o(out_ / ("run_" + command_ + ".json"), std::ios::trunc);
        o << j.dump(2) << '\n';
    }

private:
    fs::path out_;
    std::string command_;
    std::uint64_t seed_;
    std::uint64_t hash_;
    std::vector<std::string> files_;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream o(path, std::ios::trunc);
    if (!o) throw std::runtime_error("cannot write " + path.string());
    o << j.dump(2) << '\n';
}

RDMap to_linear(const RDMap& map) {
    switch (map.domain) {
        case MapDomain::linear: return map;
        case MapDomain::log_db: return db_to_linear(map);
        case MapDomain::normalized:
            if (!map.norm) throw std::runtime_error("normalized map has no NormParams in its sidecar");
            return db_to_linear(denormalize(map, *map.norm));
    }
    return map;
}

struct Options {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 1;
    bool seed_given = false;
    std::vector<std::string> overrides;
    std::string factor;
    std::string methods = "fft,music";
    int samples = -1;
    std::string checkpoint;
    std::string manifest;
    std::vector<std::string> maps;
    double db_span = 60.0;
    bool axes = false;
    int steps = -1;
    std::string split = "all";
    bool save_maps = false;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"dsrlab: Doppler super-resolution laboratory"};
    app.name("dsrlab");
    app.require_subcommand(1);
    Options o;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON run configuration");
        sub->add_option("--out", o.out_dir, "Output directory (default: $DSRLAB_OUT or ./dsrlab_out)");
        sub->add_option("--seed", o.seed, "Seed for every stochastic stage");
        sub->add_option("--set", o.overrides, "Config override key.path=value (repeatable)");
    };
    auto* simulate = app.add_subcommand("simulate", "Simulate one scenario and write its maps");
    auto* make_dataset = app.add_subcommand("make-dataset", "Generate paired HR/LR/SR-FFT maps");
    auto* train = app.add_subcommand("train", "Train the conditional denoiser");
    auto* sample = app.add_subcommand("sample", "Refine SR-FFT maps with a trained denoiser");
    auto* music = app.add_subcommand("music", "MUSIC range-Doppler map of a simulated scenario");
    auto* cfar = app.add_subcommand("cfar", "CA-CFAR detections on a raw map");
    auto* evaluate = app.add_subcommand("evaluate", "Compare methods by CFAR detections");
    auto* render = app.add_subcommand("render", "Render maps to a P6 heatmap");
    for (auto* sub : {simulate, make_dataset, train, sample, music, cfar, evaluate, render}) common(sub);

    simulate->add_option("--factor", o.factor, "Also write LR and SR-FFT maps for this factor");
    make_dataset->add_option("--samples", o.samples, "Number of scenarios");
    make_dataset->add_option("--factor", o.factor, "Factor list, e.g. 2,4,8");
    train->add_option("--manifest", o.manifest, "Dataset manifest")->required();
    train->add_option("--factor", o.factor, "Train on one factor only");
    train->add_option("--steps", o.steps, "Optimizer steps");
    sample->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
    sample->add_option("--map", o.maps, "Normalized conditioning map (raw .f32)");
    sample->add_option("--manifest", o.manifest, "Refine the SR-FFT maps of a dataset");
    sample->add_option("--samples", o.samples, "Limit on refined maps");
    sample->add_option("--factor", o.factor, "Restrict to one factor");
    sample->add_option("--split", o.split, "all | train | test");
    music->add_option("--factor", o.factor, "Integration-time reduction factor");
    cfar->add_option("--map", o.maps, "Raw map to test")->required();
    evaluate->add_option("--manifest", o.manifest, "Dataset manifest")->required();
    evaluate->add_option("--methods", o.methods, "Comma list of fft, music, sr3");
    evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint (needed for sr3)");
    evaluate->add_option("--samples", o.samples, "Samples per factor");
    evaluate->add_option("--factor", o.factor, "Restrict to one factor");
    evaluate->add_option("--split", o.split, "all | train | test");
    evaluate->add_flag("--save-maps", o.save_maps, "Write every SR map under maps_eval/");
    render->add_option("--map", o.maps, "Raw maps, rendered left to right")->required();
    render->add_option("--db-span", o.db_span, "Colour span below the peak in dB");
    render->add_flag("--axes", o.axes, "Draw tick margins");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "dsrlab: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    CLI::App* cmd = app.get_subcommands().front();
    o.seed_given = cmd->count("--seed") > 0;

    RunConfig rc;
    fs::path out_dir;
    std::uint64_t config_hash = 0;
    try {
        json root;
        if (!o.config_path.empty()) {
            std::ifstream in(o.config_path);
            if (!in) throw ConfigError("cannot read config " + o.config_path);
            try {
                root = json::parse(in);
            } catch (const json::exception& e) {
                throw ConfigError(std::string("config parse error: ") + e.what());
            }
        }
        for (const auto& ov : o.overrides) apply_override(root, ov);
        rc = parse_run_config(root);
        if (o.seed_given) rc.scenario.seed = o.seed;
        o.seed = rc.scenario.seed;
        rc.train.seed = o.seed;
        config_hash = fnv1a(rc.raw.dump());
        if (o.out_dir.empty()) {
            const char* env = std::getenv("DSRLAB_OUT");
            o.out_dir = env && *env ? env : "dsrlab_out";
        }
        out_dir = o.out_dir;
    } catch (const ConfigError& e) {
        err << "dsrlab: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "dsrlab: " << e.what() << '\n';
        return 2;
    }

    try {
        fs::create_directories(out_dir);
        RunLog log(out_dir, cmd->get_name(), o.seed, config_hash);
        const std::string name = cmd->get_name();

        if (name == "simulate") {
            const auto sim = simulate_datacube(rc.scenario);
            const auto n = static_cast<std::size_t>(rc.scenario.n_pulses);
            write_raw_map(to_log_normalized(rd_map_from_cube(sim.cube, n), rc.floor_db).first, log.path("hr.f32"));
            log.note("hr.f32.json");
            json truth = json::array();
            for (const auto& s : sim.scatterers) truth.push_back(to_json(s));
            write_json(log.path("truth.json"), truth);
            write_json(log.path("scenario.json"), to_json(rc.scenario));
            if (!o.factor.empty()) {
                const auto lr_cube = truncate_integration(sim.cube, parse_int_list(o.factor).at(0));
                const auto lr_n = static_cast<std::size_t>(lr_cube.n_pulses);
                write_raw_map(to_log_normalized(rd_map_from_cube(lr_cube, lr_n), rc.floor_db).first, log.path("lr.f32"));
                write_raw_map(to_log_normalized(rd_map_from_cube(lr_cube, n), rc.floor_db).first, log.path("sr_fft.f32"));
                log.note("lr.f32.json");
                log.note("sr_fft.f32.json");
            }
            out << "simulated " << sim.scatterers.size() << " scatterers\n";
        } else if (name == "make-dataset") {
            DatasetOptions opts;
            opts.n_samples = o.samples > 0 ? o.samples : rc.samples;
            opts.factors = o.factor.empty() ? rc.factors : parse_int_list(o.factor);
            opts.floor_db = rc.floor_db;
            opts.seed = o.seed;
            const auto manifest = generate_dataset(rc.scenario, opts, out_dir);
            log.note("manifest.json");
            for (const auto& rec : manifest.records) {
                for (const auto* p : {&rec.lr_path, &rec.sr_fft_path}) log.note(*p);
            }
            out << manifest.records.size() << " records written to " << (out_dir / "manifest.json").string() << '\n';
        } else if (name == "train") {
            const auto manifest = load_manifest(o.manifest);
            std::vector<const DatasetRecord*> picked;
            const auto only = o.factor.empty() ? std::optional<int>() : std::optional<int>(parse_int_list(o.factor).at(0));
            for (const auto& rec : manifest.records) {
                if (rec.split == "train" && (!only || rec.factor == *only)) picked.push_back(&rec);
            }
            if (picked.empty()) throw std::runtime_error("train: no training records selected");
            const auto data = training_pairs(manifest, picked);
            DenoiserSpec spec = rc.denoiser;
            spec.rows = static_cast<int>(data.x_hr.front().rows);
            spec.cols = static_cast<int>(data.x_hr.front().cols);
            UNetDenoiser model(spec, derive_seed(o.seed, 100));
            TrainConfig tc = rc.train;
            if (o.steps > 0) tc.steps = o.steps;
            const auto sched = rc.schedule.build();
            const auto result = train_denoiser(model, data, sched, tc, log.path("loss.csv"));
            model.save(log.path("checkpoint.dsrck"), rc.schedule);
            out << "trained " << tc.steps << " steps, final loss " << result.loss.back() << '\n';
        } else if (name == "sample") {
            ScheduleConfig sc;
            const auto model = UNetDenoiser::load(o.checkpoint, &sc);
            const auto sched = sc.build();
            std::vector<std::pair<std::string, RDMap>> conds;
            for (const auto& p : o.maps) conds.emplace_back(fs::path(p).stem().string(), read_raw_map(p));
            if (!o.manifest.empty()) {
                const auto manifest = load_manifest(o.manifest);
                const auto only = o.factor.empty() ? std::optional<int>() : std::optional<int>(parse_int_list(o.factor).at(0));
                for (const auto& rec : manifest.records) {
                    if (o.samples >= 0 && static_cast<int>(conds.size()) >= o.samples) break;
                    if ((o.split != "all" && rec.split != o.split) || (only && rec.factor != *only)) continue;
                    conds.emplace_back(rec.id, read_raw_map(manifest.root / rec.sr_fft_path));
                }
            }
            if (conds.empty()) throw std::runtime_error("sample: give --map or --manifest");
            std::vector<Grid> grids;
            std::vector<std::uint64_t> seeds;
            for (std::size_t i = 0; i < conds.size(); ++i) {
                if (conds[i].second.domain != MapDomain::normalized) throw std::runtime_error("sample: conditioning maps must be normalized");
                grids.push_back(conds[i].second.values);
                seeds.push_back(derive_seed(o.seed, i));
            }
            const auto outs = sample_batch(model, grids, sched, seeds);
            for (std::size_t i = 0; i < outs.size(); ++i) {
                RDMap m;
                m.values = outs[i];
                m.domain = MapDomain::normalized;
                m.floor_db = conds[i].second.floor_db;
                m.norm = conds[i].second.norm;
                const auto rel = fs::path("samples") / (conds[i].first + "_sr3.f32");
                write_raw_map(m, log.path(rel));
                log.note(rel.string() + ".json");
            }
            out << "refined " << outs.size() << " maps\n";
        } else if (name == "music") {
            const auto sim = simulate_datacube(rc.scenario);
            const int factor = o.factor.empty() ? 1 : parse_int_list(o.factor).at(0);
            const auto lr = truncate_integration(sim.cube, factor);
            MusicOrder order = 2;
            if (rc.music_order == "truth") {
                order = order_from_truth(sim.scatterers, lr.n_range, lr.n_pulses / 2 - 1);
            } else {
                order = rc.music_order.get<int>();
            }
            const auto map = music_rd_map(lr, rc.scenario.n_pulses, order);
            write_raw_map(map, log.path("music_linear.f32"));
            write_raw_map(to_log_normalized(map, rc.floor_db).first, log.path("music.f32"));
            log.note("music_linear.f32.json");
            log.note("music.f32.json");
            out << "music map " << map.n_range() << "x" << map.n_doppler() << '\n';
        } else if (name == "cfar") {
            const auto map = to_linear(read_raw_map(o.maps.at(0)));
            const auto dets = ca_cfar_2d(map, rc.cfar);
            write_json(log.path("detections.json"), to_json(dets));
            out << dets.size() << " detections\n";
        } else if (name == "evaluate") {
            const auto manifest = load_manifest(o.manifest);
            EvalOptions eo;
            eo.methods.clear();
            for (const auto& m : split_list(o.methods)) eo.methods.push_back(method_from_string(m));
            eo.cfar = rc.cfar;
            eo.tolerance = rc.match;
            if (!o.checkpoint.empty()) eo.checkpoint = o.checkpoint;
            eo.max_samples = o.samples;
            eo.split = o.split;
            if (!o.factor.empty()) eo.factor = parse_int_list(o.factor).at(0);
            eo.seed = o.seed;
            if (o.save_maps) eo.map_dir = out_dir / "maps_eval";
            const auto report = evaluate_methods(manifest, eo);
            write_report_csv(report, log.path("report.csv"));
            write_json(log.path("summary.json"), report_summary(report));
            out << report.rows.size() << " report rows\n";
        } else if (name == "render") {
            std::vector<RDMap> maps;
            for (const auto& p : o.maps) {
                for (const auto& part : split_list(p)) maps.push_back(read_raw_map(part));
            }
            RenderOptions ro;
            ro.db_span = o.db_span;
            ro.axes = o.axes;
            render_panels(maps, log.path("render.ppm"), ro);
            out << "rendered " << maps.size() << " panel(s)\n";
        }
        log.finish();
    } catch (const ConfigError& e) {
        err << "dsrlab: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "dsrlab: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace dsrlab
