#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dsrlab/cfar.hpp"
#include "dsrlab/diffusion.hpp"
#include "dsrlab/radar_sim.hpp"
#include "dsrlab/spectral.hpp"

namespace dsrlab {

/// One (sample, factor) entry of a dataset. Paths are relative to the
/// manifest's directory. `config.seed` is the per-sample seed, so
/// simulate_datacube(config) reproduces the sample's cube.
struct DatasetRecord {
    std::string id;
    int sample_index = 0;
    std::string split = "train";  // train | test
    ScenarioConfig config;
    std::vector<Scatterer> truth;
    int factor = 2;
    std::string domain = "normalized";
    std::string hr_path;
    std::string lr_path;
    std::string sr_fft_path;
    NormParams hr_norm;
    NormParams lr_norm;
    NormParams sr_fft_norm;

    friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

struct Manifest {
    std::filesystem::path root;  // directory holding manifest.json
    std::vector<DatasetRecord> records;
};

struct DatasetOptions {
    int n_samples = 1;
    std::vector<int> factors{2, 4, 8};
    double floor_db = kDefaultFloorDb;
    std::uint64_t seed = 1;
};

/// Sample i (seed derive_seed(seed, i)): HR map on n_pulses Doppler bins,
/// per factor an LR map on n_pulses / f bins and the LR pulses zero-padded to
/// n_pulses (SR-FFT). All maps Blackman-windowed and log-normalized. The last
/// 10% of sample indices form the test split.
Manifest generate_dataset(const ScenarioConfig& tmpl, const DatasetOptions& opts, const std::filesystem::path& out_dir);

void write_manifest(const Manifest& manifest);
/// Loads and checks that every referenced map exists with the declared shape.
Manifest load_manifest(const std::filesystem::path& manifest_path);

nlohmann::json to_json(const DatasetRecord& rec);
DatasetRecord record_from_json(const nlohmann::json& j);

/// Normalized maps of one record.
struct RecordMaps {
    RDMap hr;
    RDMap lr;
    RDMap sr_fft;
};
RecordMaps load_record_maps(const Manifest& manifest, const DatasetRecord& rec);

/// (hr, sr_fft) pairs of the selected records, for training.
MapBatch training_pairs(const Manifest& manifest, std::span<const DatasetRecord* const> records);

struct MatchTolerance {
    double range_bins = 1.0;
    double doppler_bins = 2.0;
};

struct MatchReport {
    int true_positives = 0;
    int false_negatives = 0;
    int false_alarms = 0;    // detections near neither a target nor clutter
    int clutter_hits = 0;    // unmatched detections within tolerance of clutter
    std::vector<double> distances;  // per matched target, in bins

    double recall() const;
    double precision() const;  // 1 when nothing was claimed
};

/// Truth positions: (range_bin, velocity_to_doppler_bin(v, n_doppler, vel_res_effective)).
/// Greedy nearest-neighbour assignment within the tolerance box.
MatchReport match_detections(const DetectionList& dets, std::span<const Scatterer> truth, int n_doppler,
                             double vel_res_effective, const MatchTolerance& tol = {});

/// 10 log10(4 / MSE) for maps in [-1, 1]; 150 dB when MSE < 1e-15.
double psnr(const Grid& a, const Grid& b);

/// |mean(a) - mean(b)|, logged as a colour-shift diagnostic.
double mean_drift(const Grid& a, const Grid& b);

enum class Method { fft, music, sr3 };
std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct EvalOptions {
    std::vector<Method> methods{Method::fft, Method::music};
    CfarConfig cfar;
    MatchTolerance tolerance;
    std::optional<std::filesystem::path> checkpoint;  // required for sr3
    std::string split = "all";                        // all | train | test
    int max_samples = -1;                             // per factor, -1 = no limit
    std::optional<int> factor;                        // restrict to one factor
    std::uint64_t seed = 1;                           // sr3 sampling streams
    int sr3_batch = 20;
    std::optional<std::filesystem::path> map_dir;     // write SR maps (normalized) here
};

struct EvalRow {
    std::string sample;
    int sample_index = 0;
    Method method = Method::fft;
    int factor = 0;
    MatchReport match;
    double psnr_db = 0.0;
    double mean_drift = 0.0;
    DetectionList detections;
};

struct EvalReport {
    std::vector<EvalRow> rows;
};

/// Per record and method: SR map -> linear power -> CA-CFAR -> matching.
EvalReport evaluate_methods(const Manifest& manifest, const EvalOptions& opts);

/// Columns: sample,method,factor,tp,fn,fa,recall,precision.
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
/// Per (method, factor): mean recall, mean precision, mean false alarms per
/// sample, totals, and per-row details.
nlohmann::json report_summary(const EvalReport& report);

}  // namespace dsrlab
