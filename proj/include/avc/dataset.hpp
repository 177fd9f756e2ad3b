#pragma once

// Dataset orchestration behind the command-line tool: generation of labeled
// segments (audio, features, manifest), manifest validation, feature
// extraction for existing datasets and scoring of prediction files.
//
// On-disk layout of a dataset directory:
//   dataset.json      summary (config echo, totals, formats)
//   manifest.jsonl    one JSON record per segment, in segment-index order
//   audio/seg_NNNNNN.wav       4-channel float32 WAV at 16 kHz
//   features/seg_NNNNNN.avcf   GCC-PHAT + spectrogram container

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avc/evaluation.hpp"
#include "avc/features.hpp"
#include "avc/traffic.hpp"

namespace avc::dataset {

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kSummaryName = "dataset.json";

struct FeatureSettings {
  bool enabled = true;
  features::Framing framing;
  std::size_t max_lag = features::kDefaultMaxLag;
};

struct GenerationConfig {
  traffic::TrafficProfile profile;
  std::string profile_source = "inline";
  traffic::RenderSettings render;
  double hours = 1.0;
  double segment_length = traffic::kSegmentLength;
  std::uint64_t seed = 1;
  int start_hour = 0;
  std::filesystem::path output_dir = "dataset";
  FeatureSettings features;
  /// Labels and manifest only; no audio is rendered.
  bool labels_only = false;
  /// Recorded in the summary. Rendering is reduced in a fixed order, so
  /// output is reproducible with or without it.
  bool deterministic = false;
  unsigned workers = 0;  // 0: hardware concurrency

  std::size_t segment_count() const;
  /// hours > 0, whole number of segments, valid profile and render settings.
  void validate() const;

  /// JSON config. Relative paths ("profile", "output_dir") are resolved
  /// against `base_dir`.
  static GenerationConfig parse(std::string_view json_text, const std::filesystem::path& base_dir);
  static GenerationConfig load(const std::filesystem::path& path);
};

/// Progress callback: (segments done, segments total).
using Progress = std::function<void(std::size_t, std::size_t)>;

struct GenerationResult {
  std::filesystem::path manifest_path;
  std::size_t segments = 0;
  std::size_t events = 0;
  std::array<std::uint64_t, kCategoryCount> totals{};
};

/// Throws IoError on filesystem failures after removing the files written by
/// this run.
GenerationResult cmd_generate(const GenerationConfig& config, const Progress& progress = {});

struct ValidationReport {
  std::size_t segments = 0;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Structural, file and label checks. Throws IoError if the manifest or its
/// summary cannot be read.
ValidationReport cmd_validate(const std::filesystem::path& manifest_path);

/// Recomputes feature files for every segment with audio and rewrites the
/// manifest and summary to reference them.
std::size_t cmd_features(const std::filesystem::path& manifest_path, const FeatureSettings& settings,
                         const Progress& progress = {});

struct ManifestRecord {
  std::size_t segment_index = 0;
  std::optional<std::string> audio;
  std::optional<std::string> features;
  eval::CountVector counts{};
  std::vector<VehicleEvent> events;
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest_path);

/// CSV with header segment_index,car_l2r,car_r2l,cv_l2r,cv_r2l.
std::vector<std::pair<std::size_t, eval::CountPrediction>> read_predictions(
    const std::filesystem::path& path);

/// One report per prediction file (fold), joined on segment_index. Missing,
/// duplicate or unknown segment ids throw DomainError listing them. Returns
/// the JSON report, also written to `report_path` when given.
std::string cmd_score(const std::vector<std::filesystem::path>& prediction_paths,
                      const std::filesystem::path& manifest_path,
                      const std::optional<std::filesystem::path>& report_path,
                      eval::MergeMode mode = eval::MergeMode::MeanOfDirections);

}  // namespace avc::dataset
