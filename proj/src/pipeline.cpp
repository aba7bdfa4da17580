#include "dsrlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

#include "dsrlab/music.hpp"
#include "dsrlab/seed.hpp"
#include "dsrlab/unet.hpp"

namespace dsrlab {

namespace fs = std::filesystem;

namespace {

std::string sample_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%06d", index);
    return buf;
}

nlohmann::json norm_json(const NormParams& p) { return {{"peak_db", p.peak_db}, {"floor_db", p.floor_db}}; }

NormParams norm_from_json(const nlohmann::json& j) {
    return {j.at("peak_db").get<double>(), j.at("floor_db").get<double>()};
}

void check_factor(int n_pulses, int factor) {
    if (factor < 1 || n_pulses % factor != 0 || n_pulses / factor < 2) {
        throw std::invalid_argument("dataset: factor " + std::to_string(factor) + " does not divide the pulse train");
    }
}

}  // namespace

Manifest generate_dataset(const ScenarioConfig& tmpl, const DatasetOptions& opts, const fs::path& out_dir) {
    validate(tmpl);
    if (opts.n_samples < 1) throw std::invalid_argument("generate_dataset: n_samples must be >= 1");
    if (opts.factors.empty()) throw std::invalid_argument("generate_dataset: no factors given");
    for (int f : opts.factors) check_factor(tmpl.n_pulses, f);
    const auto n_pad = static_cast<std::size_t>(tmpl.n_pulses);
    if (!is_power_of_two(n_pad)) throw std::invalid_argument("generate_dataset: n_pulses must be a power of two");

    fs::create_directories(out_dir / "maps");
    Manifest manifest;
    manifest.root = out_dir;
    const int n_test = opts.n_samples / 10;
    const int n_train = opts.n_samples - n_test;

    for (int i = 0; i < opts.n_samples; ++i) {
        ScenarioConfig cfg = tmpl;
        cfg.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(i));
        const auto sim = simulate_datacube(cfg);
        const std::string id = sample_id(i);

        const auto [hr, hr_norm] = to_log_normalized(rd_map_from_cube(sim.cube, n_pad), opts.floor_db);
        const std::string hr_path = "maps/" + id + "_hr.f32";
        write_raw_map(hr, out_dir / hr_path);

        for (int f : opts.factors) {
            const auto lr_cube = truncate_integration(sim.cube, f);
            const auto [lr, lr_norm] =
                to_log_normalized(rd_map_from_cube(lr_cube, static_cast<std::size_t>(lr_cube.n_pulses)), opts.floor_db);
            const auto [sr, sr_norm] = to_log_normalized(rd_map_from_cube(lr_cube, n_pad), opts.floor_db);

            DatasetRecord rec;
            rec.id = id + "_f" + std::to_string(f);
            rec.sample_index = i;
            rec.split = i < n_train ? "train" : "test";
            rec.config = cfg;
            rec.truth = sim.scatterers;
            rec.factor = f;
            rec.hr_path = hr_path;
            rec.lr_path = "maps/" + rec.id + "_lr.f32";
            rec.sr_fft_path = "maps/" + rec.id + "_sr_fft.f32";
            rec.hr_norm = hr_norm;
            rec.lr_norm = lr_norm;
            rec.sr_fft_norm = sr_norm;
            write_raw_map(lr, out_dir / rec.lr_path);
            write_raw_map(sr, out_dir / rec.sr_fft_path);
            manifest.records.push_back(std::move(rec));
        }
    }
    write_manifest(manifest);
    return manifest;
}

nlohmann::json to_json(const DatasetRecord& rec) {
    auto truth = nlohmann::json::array();
    for (const auto& s : rec.truth) truth.push_back(to_json(s));
    return {{"id", rec.id},
            {"sample_index", rec.sample_index},
            {"split", rec.split},
            {"config", to_json(rec.config)},
            {"truth", truth},
            {"factor", rec.factor},
            {"domain", rec.domain},
            {"hr", {{"path", rec.hr_path}, {"rows", rec.config.n_range}, {"cols", rec.config.n_pulses}, {"norm", norm_json(rec.hr_norm)}}},
            {"lr",
             {{"path", rec.lr_path},
              {"rows", rec.config.n_range},
              {"cols", rec.config.n_pulses / rec.factor},
              {"norm", norm_json(rec.lr_norm)}}},
            {"sr_fft",
             {{"path", rec.sr_fft_path},
              {"rows", rec.config.n_range},
              {"cols", rec.config.n_pulses},
              {"norm", norm_json(rec.sr_fft_norm)}}}};
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.sample_index = j.at("sample_index").get<int>();
    rec.split = j.at("split").get<std::string>();
    rec.config = scenario_from_json(j.at("config"));
    for (const auto& s : j.at("truth")) rec.truth.push_back(scatterer_from_json(s));
    rec.factor = j.at("factor").get<int>();
    rec.domain = j.at("domain").get<std::string>();
    rec.hr_path = j.at("hr").at("path").get<std::string>();
    rec.lr_path = j.at("lr").at("path").get<std::string>();
    rec.sr_fft_path = j.at("sr_fft").at("path").get<std::string>();
    rec.hr_norm = norm_from_json(j.at("hr").at("norm"));
    rec.lr_norm = norm_from_json(j.at("lr").at("norm"));
    rec.sr_fft_norm = norm_from_json(j.at("sr_fft").at("norm"));
    check_factor(rec.config.n_pulses, rec.factor);
    return rec;
}

void write_manifest(const Manifest& manifest) {
    auto arr = nlohmann::json::array();
    for (const auto& rec : manifest.records) arr.push_back(to_json(rec));
    std::ofstream out(manifest.root / "manifest.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest in " + manifest.root.string());
    out << arr.dump(1) << '\n';
}

Manifest load_manifest(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest " + manifest_path.string());
    const auto arr = nlohmann::json::parse(in);
    if (!arr.is_array()) throw std::runtime_error("manifest must be a JSON array");
    Manifest m;
    m.root = manifest_path.parent_path();
    for (const auto& j : arr) {
        auto rec = record_from_json(j);
        const auto check = [&](const std::string& key, const std::string& rel) {
            const auto path = m.root / rel;
            const auto rows = j.at(key).at("rows").get<std::uintmax_t>();
            const auto cols = j.at(key).at("cols").get<std::uintmax_t>();
            if (!fs::exists(path)) throw std::runtime_error("manifest references a missing file: " + path.string());
            if (fs::file_size(path) != rows * cols * sizeof(float)) {
                throw std::runtime_error("map size does not match the manifest: " + path.string());
            }
        };
        check("hr", rec.hr_path);
        check("lr", rec.lr_path);
        check("sr_fft", rec.sr_fft_path);
        m.records.push_back(std::move(rec));
    }
    return m;
}

RecordMaps load_record_maps(const Manifest& manifest, const DatasetRecord& rec) {
    return {read_raw_map(manifest.root / rec.hr_path), read_raw_map(manifest.root / rec.lr_path),
            read_raw_map(manifest.root / rec.sr_fft_path)};
}

MapBatch training_pairs(const Manifest& manifest, std::span<const DatasetRecord* const> records) {
    MapBatch batch;
    for (const auto* rec : records) {
        auto maps = load_record_maps(manifest, *rec);
        batch.x_hr.push_back(std::move(maps.hr.values));
        batch.y_sr.push_back(std::move(maps.sr_fft.values));
    }
    return batch;
}

double MatchReport::recall() const {
    const int n = true_positives + false_negatives;
    return n == 0 ? 1.0 : static_cast<double>(true_positives) / n;
}

double MatchReport::precision() const {
    const int claimed = true_positives + false_alarms;
    return claimed == 0 ? 1.0 : static_cast<double>(true_positives) / claimed;
}

MatchReport match_detections(const DetectionList& dets, std::span<const Scatterer> truth, int n_doppler,
                             double vel_res_effective, const MatchTolerance& tol) {
    if (tol.range_bins < 0.0 || tol.doppler_bins < 0.0) throw std::invalid_argument("match_detections: negative tolerance");
    struct Pos {
        double r;
        double d;
    };
    std::vector<Pos> targets;
    std::vector<Pos> clutter;
    for (const auto& s : truth) {
        const Pos p{static_cast<double>(s.range_bin), velocity_to_doppler_bin(s.velocity, n_doppler, vel_res_effective)};
        (s.kind == ScattererKind::target ? targets : clutter).push_back(p);
    }
    const auto within = [&](const Detection& det, const Pos& p) {
        return std::abs(det.range - p.r) <= tol.range_bins && std::abs(det.doppler - p.d) <= tol.doppler_bins;
    };

    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;  // distance, target, detection
    for (std::size_t t = 0; t < targets.size(); ++t) {
        for (std::size_t k = 0; k < dets.detections.size(); ++k) {
            const auto& det = dets.detections[k];
            if (!within(det, targets[t])) continue;
            pairs.emplace_back(std::hypot(det.range - targets[t].r, det.doppler - targets[t].d), t, k);
        }
    }
    std::sort(pairs.begin(), pairs.end());

    MatchReport rep;
    std::vector<char> target_used(targets.size(), 0);
    std::vector<char> det_used(dets.detections.size(), 0);
    for (const auto& [dist, t, k] : pairs) {
        if (target_used[t] || det_used[k]) continue;
        target_used[t] = det_used[k] = 1;
        ++rep.true_positives;
        rep.distances.push_back(dist);
    }
    rep.false_negatives = static_cast<int>(targets.size()) - rep.true_positives;
    for (std::size_t k = 0; k < dets.detections.size(); ++k) {
        if (det_used[k]) continue;
        const bool near_clutter =
            std::any_of(clutter.begin(), clutter.end(), [&](const Pos& p) { return within(dets.detections[k], p); });
        ++(near_clutter ? rep.clutter_hits : rep.false_alarms);
    }
    return rep;
}

double psnr(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "psnr");
    if (a.size() == 0) throw std::invalid_argument("psnr: empty maps");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.size());
    if (mse < 1e-15) return 150.0;
    return 10.0 * std::log10(4.0 / mse);
}

double mean_drift(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "mean_drift");
    if (a.size() == 0) return 0.0;
    const double ma = std::accumulate(a.data.begin(), a.data.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.data.begin(), b.data.end(), 0.0) / static_cast<double>(b.size());
    return std::abs(ma - mb);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::fft: return "fft";
        case Method::music: return "music";
        case Method::sr3: return "sr3";
    }
    return "fft";
}

Method method_from_string(const std::string& name) {
    if (name == "fft") return Method::fft;
    if (name == "music") return Method::music;
    if (name == "sr3") return Method::sr3;
    throw std::invalid_argument("unknown method '" + name + "'");
}

namespace {

RDMap music_map_for(const DatasetRecord& rec) {
    const auto sim = simulate_datacube(rec.config);
    const auto lr = truncate_integration(sim.cube, rec.factor);
    const int l = lr.n_pulses / 2;
    const auto order = order_from_truth(rec.truth, lr.n_range, l - 1);
    return music_rd_map(lr, rec.config.n_pulses, order);
}

EvalRow score(const DatasetRecord& rec, Method method, const RDMap& normalized,
              const NormParams& norm, const RDMap& hr, const EvalOptions& opts) {
    const auto linear = db_to_linear(denormalize(normalized, norm));
    EvalRow row;
    row.sample = rec.id;
    row.sample_index = rec.sample_index;
    row.method = method;
    row.factor = rec.factor;
    row.detections = ca_cfar_2d(linear, opts.cfar);
    const int n_doppler = static_cast<int>(normalized.n_doppler());
    const double vel_res_eff = rec.config.n_pulses * rec.config.vel_res / n_doppler;
    row.match = match_detections(row.detections, rec.truth, n_doppler, vel_res_eff, opts.tolerance);
    row.psnr_db = psnr(normalized.values, hr.values);
    row.mean_drift = mean_drift(normalized.values, hr.values);
    return row;
}

}  // namespace

EvalReport evaluate_methods(const Manifest& manifest, const EvalOptions& opts) {
    if (opts.methods.empty()) throw std::invalid_argument("evaluate_methods: no methods requested");
    const bool want_sr3 = std::find(opts.methods.begin(), opts.methods.end(), Method::sr3) != opts.methods.end();
    if (want_sr3 && !opts.checkpoint) throw std::invalid_argument("evaluate_methods: sr3 requires a checkpoint");
    if (opts.split != "all" && opts.split != "train" && opts.split != "test") {
        throw std::invalid_argument("evaluate_methods: split must be all, train or test");
    }

    std::vector<const DatasetRecord*> selected;
    std::map<int, int> per_factor;
    for (const auto& rec : manifest.records) {
        if (opts.split != "all" && rec.split != opts.split) continue;
        if (opts.factor && rec.factor != *opts.factor) continue;
        if (opts.max_samples >= 0 && per_factor[rec.factor] >= opts.max_samples) continue;
        ++per_factor[rec.factor];
        selected.push_back(&rec);
    }

    std::optional<UNetDenoiser> model;
    std::optional<DiffusionSchedule> sched;
    if (want_sr3) {
        ScheduleConfig sc;
        model.emplace(UNetDenoiser::load(*opts.checkpoint, &sc));
        sched = sc.build();
    }
    if (opts.map_dir) fs::create_directories(*opts.map_dir);

    // Outputs per (record, method), filled method by method.
    std::vector<std::vector<std::optional<EvalRow>>> rows(selected.size(), std::vector<std::optional<EvalRow>>(opts.methods.size()));
    std::vector<RecordMaps> maps;
    maps.reserve(selected.size());
    for (const auto* rec : selected) maps.push_back(load_record_maps(manifest, *rec));

    const auto save = [&](const DatasetRecord& rec, Method m, const RDMap& map) {
        if (opts.map_dir) write_raw_map(map, *opts.map_dir / (rec.id + "_" + to_string(m) + ".f32"));
    };

    for (std::size_t mi = 0; mi < opts.methods.size(); ++mi) {
        const Method method = opts.methods[mi];
        if (method == Method::fft) {
            for (std::size_t i = 0; i < selected.size(); ++i) {
                const auto& rec = *selected[i];
                save(rec, method, maps[i].sr_fft);
                rows[i][mi] = score(rec, method, maps[i].sr_fft, rec.sr_fft_norm, maps[i].hr, opts);
            }
        } else if (method == Method::music) {
            for (std::size_t i = 0; i < selected.size(); ++i) {
                const auto& rec = *selected[i];
                const auto [norm_map, norm] = to_log_normalized(music_map_for(rec));
                save(rec, method, norm_map);
                rows[i][mi] = score(rec, method, norm_map, norm, maps[i].hr, opts);
            }
        } else {
            const std::size_t chunk = static_cast<std::size_t>(std::max(1, opts.sr3_batch));
            for (std::size_t start = 0; start < selected.size(); start += chunk) {
                const std::size_t end = std::min(selected.size(), start + chunk);
                std::vector<Grid> conds;
                std::vector<std::uint64_t> seeds;
                for (std::size_t i = start; i < end; ++i) {
                    conds.push_back(maps[i].sr_fft.values);
                    seeds.push_back(derive_seed(opts.seed, static_cast<std::uint64_t>(selected[i]->sample_index) * 16 +
                                                               static_cast<std::uint64_t>(selected[i]->factor)));
                }
                auto outs = sample_batch(*model, conds, *sched, seeds);
                for (std::size_t i = start; i < end; ++i) {
                    const auto& rec = *selected[i];
                    RDMap sr3;
                    sr3.values = std::move(outs[i - start]);
                    sr3.domain = MapDomain::normalized;
                    sr3.floor_db = maps[i].sr_fft.floor_db;
                    sr3.norm = rec.sr_fft_norm;
                    save(rec, method, sr3);
                    rows[i][mi] = score(rec, method, sr3, rec.sr_fft_norm, maps[i].hr, opts);
                }
            }
        }
    }

    EvalReport report;
    for (auto& per_record : rows) {
        for (auto& row : per_record) report.rows.push_back(std::move(*row));
    }
    return report;
}

void write_report_csv(const EvalReport& report, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "sample,method,factor,tp,fn,fa,recall,precision\n";
    out.precision(6);
    for (const auto& r : report.rows) {
        out << r.sample << ',' << to_string(r.method) << ',' << r.factor << ',' << r.match.true_positives << ','
            << r.match.false_negatives << ',' << r.match.false_alarms << ',' << r.match.recall() << ','
            << r.match.precision() << '\n';
    }
}

nlohmann::json report_summary(const EvalReport& report) {
    struct Acc {
        int n = 0;
        double recall = 0.0;
        double precision = 0.0;
        int tp = 0;
        int fn = 0;
        int fa = 0;
        int clutter = 0;
        int samples_with_fa = 0;
        double psnr = 0.0;
        double drift = 0.0;
    };
    std::map<std::pair<std::string, int>, Acc> acc;
    auto rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        auto& a = acc[{to_string(r.method), r.factor}];
        ++a.n;
        a.recall += r.match.recall();
        a.precision += r.match.precision();
        a.tp += r.match.true_positives;
        a.fn += r.match.false_negatives;
        a.fa += r.match.false_alarms;
        a.clutter += r.match.clutter_hits;
        a.samples_with_fa += r.match.false_alarms > 0 ? 1 : 0;
        a.psnr += r.psnr_db;
        a.drift += r.mean_drift;
        rows.push_back({{"sample", r.sample},
                        {"method", to_string(r.method)},
                        {"factor", r.factor},
                        {"tp", r.match.true_positives},
                        {"fn", r.match.false_negatives},
                        {"fa", r.match.false_alarms},
                        {"clutter_hits", r.match.clutter_hits},
                        {"recall", r.match.recall()},
                        {"precision", r.match.precision()},
                        {"psnr_db", r.psnr_db},
                        {"mean_drift", r.mean_drift},
                        {"distances", r.match.distances},
                        {"detections", to_json(r.detections)}});
    }
    auto groups = nlohmann::json::array();
    for (const auto& [key, a] : acc) {
        groups.push_back({{"method", key.first},
                          {"factor", key.second},
                          {"samples", a.n},
                          {"recall", a.recall / a.n},
                          {"precision", a.precision / a.n},
                          {"false_alarms_per_sample", static_cast<double>(a.fa) / a.n},
                          {"samples_with_false_alarms", a.samples_with_fa},
                          {"tp", a.tp},
                          {"fn", a.fn},
                          {"fa", a.fa},
                          {"clutter_hits", a.clutter},
                          {"mean_psnr_db", a.psnr / a.n},
                          {"mean_drift", a.drift / a.n}});
    }
    return {{"groups", groups}, {"rows", rows}};
}

}  // namespace dsrlab
