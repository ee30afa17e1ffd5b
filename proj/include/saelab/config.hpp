#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "saelab/datagen.hpp"
#include "saelab/metrics.hpp"
#include "saelab/sae.hpp"
#include "saelab/trainer.hpp"

namespace saelab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AnalysisToggles {
  bool pw_mcc = true;
  bool gt_mcc = true;
  bool intersection_ratio = false;
  bool capacity_allocation = false;
  bool binned_similarity = false;
  bool spark_check = false;
  std::size_t bins = 10;
  BinMode bin_mode = BinMode::Log;
  /// Evenly spaced trace records used for PW-MCC and intersection curves; 0 = all.
  std::size_t curve_points = 0;
};

/// Frequency law as flat settings; resolved into a FrequencyLaw on demand.
struct LawSettings {
  std::string kind = "uniform";  // uniform | zipf | two_phase
  double alpha = 1.0;
  TwoPhaseLaw two_phase;
  FrequencyLaw resolve() const;
};

struct ExperimentConfig {
  std::string name = "custom";
  GroundTruthSpec data;
  LawSettings law;
  std::vector<Arch> archs{Arch::TopK};
  ArchParams arch_params;
  std::size_t d_sae = 16;
  TrainConfig train;
  std::filesystem::path output_dir = "out";
  AnalysisToggles analysis;
  /// Optional grid: one sub-experiment per value of `sweep_key`.
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  /// Raw f32 activation file used instead of synthetic data (no ground truth).
  std::filesystem::path activations;
  std::size_t activation_dim = 0;
  std::size_t workers = 0;  // 0 = default_workers()

  /// Ground-truth spec with the law resolved.
  GroundTruthSpec ground_truth_spec() const;
  bool synthetic() const { return activations.empty(); }
  void validate() const;
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Names accepted by preset(); "two_phase" aliases "two_phase_desk".
const std::vector<std::string>& preset_names();
ExperimentConfig preset(const std::string& name);

/// Every known key as section.key.
std::vector<std::string> config_keys();
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);
/// Keys a named preset fixes; overriding them needs force.
const std::vector<std::string>& pinned_keys();

/// Flat INI: [section] then key = value lines.
ConfigEntries read_ini(const std::filesystem::path& path);
std::string to_ini(const ExperimentConfig& cfg);
/// Parses "section.key=value".
std::pair<std::string, std::string> parse_override(const std::string& text);

/// Starts from the named preset (or the file's experiment.name, else custom),
/// applies file entries then CLI overrides, and rejects changes to pinned
/// preset keys unless `force`.
ExperimentConfig resolve_config(const std::optional<std::string>& preset_name, const ConfigEntries& file_entries,
                                const ConfigEntries& overrides, bool force);

}  // namespace saelab
