#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "saelab/config.hpp"
#include "saelab/datagen.hpp"
#include "saelab/metrics.hpp"
#include "saelab/sae.hpp"
#include "saelab/trainer.hpp"

namespace saelab {

struct RunSummary {
  Arch arch = Arch::TopK;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::optional<double> final_gt_mcc;  // smoothed over the last records
  double final_recon_loss = 0.0;
  double final_mean_l0 = 0.0;
  std::filesystem::path dir;
};

struct CurvePoint {
  std::size_t step = 0;
  std::optional<double> gt_mcc;  // mean over runs
  std::optional<double> pw_mcc;  // mean over run pairs
  std::optional<double> intersection_ratio;
};

struct ArchReport {
  Arch arch = Arch::TopK;
  std::vector<RunSummary> runs;
  ConsistencyReport consistency;
  std::vector<CurvePoint> curves;
  std::optional<double> mean_gt_mcc;
  /// Mean intersection ratio over curve records in the first / last quarter of training.
  std::optional<double> intersection_first_quartile;
  std::optional<double> intersection_last_quartile;
  /// Spearman(min_freq, similarity) averaged over run pairs.
  std::optional<double> freq_similarity_spearman;
  /// Spearman(per-cluster GT-MCC, cluster probability).
  std::optional<double> cluster_mcc_spearman;
  std::vector<double> betas;             // per run
  std::vector<double> mean_allocation;   // per cluster, averaged over runs
  std::vector<std::string> spark;        // per-run JSON
};

struct PointReport {
  std::string label;        // empty without a sweep
  std::string sweep_value;
  std::filesystem::path dir;
  std::vector<ArchReport> archs;

  const ArchReport* find(Arch arch) const;
};

struct FileEntry {
  std::string path;  // relative to the experiment directory, '/'-separated
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct Timing {
  std::string label;
  double seconds = 0.0;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RunManifest {
  std::string experiment;
  std::string config_ini;
  std::string version;
  std::vector<std::uint64_t> seeds;
  std::vector<FileEntry> files;
  std::vector<Timing> timings;
  std::vector<std::string> failures;
  std::vector<CheckResult> checks;
};

struct ExperimentResult {
  std::filesystem::path dir;
  RunManifest manifest;
  std::vector<PointReport> points;

  bool ok() const;
};

/// Everything analyze_runs may use; unset members disable the analyses that need them.
struct AnalysisInputs {
  Arch arch = Arch::TopK;
  std::vector<SaeModel> models;
  std::vector<TrainTrace> traces;  // empty or aligned with models
  const Dataset* data = nullptr;
  const Dictionary* ground_truth = nullptr;
  std::vector<double> cluster_probabilities;
  std::size_t cluster_size = 0;
  std::size_t total_steps = 0;
  std::size_t eval_interval = 200;
  std::size_t workers = 1;
};

ArchReport analyze_runs(const AnalysisInputs& in, const AnalysisToggles& toggles);

/// Generates data once per distinct data spec, trains every (arch, seed) run,
/// runs the enabled analyses and writes reports, plot data and manifest.json
/// under output_dir/name. Failed runs are recorded, not fatal.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Threshold checks tied to a named preset; empty for custom or forced configs.
std::vector<CheckResult> preset_checks(const ExperimentConfig& cfg, const std::vector<PointReport>& points);

enum class PlotKind { MccCurves, FreqSimilarity, Contribution, Capacity };
std::string to_string(PlotKind kind);
/// Writes <dir>/<kind>.csv. Throws std::runtime_error naming the missing series.
std::filesystem::path emit_plot_data(const PointReport& report, PlotKind kind, const std::filesystem::path& dir);

/// Loads the dictionary of a SAEC dictionary or model file (W_dec for models).
Dictionary load_dictionary_any(const std::filesystem::path& path);
/// MCC between two stored dictionaries; optionally dumps i,j,similarity rows.
MatchResult compare_dictionaries(const std::filesystem::path& a, const std::filesystem::path& b,
                                 const std::filesystem::path& pairs_csv = {});

std::string sha256_file(const std::filesystem::path& path);
/// Sorted inventory of every regular file under dir except manifest.json.
std::vector<FileEntry> inventory(const std::filesystem::path& dir);
/// True when the directory's current contents hash to the stored manifest.
bool verify_manifest(const std::filesystem::path& dir, std::string* problem = nullptr);

std::string to_json(const ArchReport& report, int indent = 2);
std::string to_json(const RunManifest& manifest, int indent = 2);

const char* version();

}  // namespace saelab
