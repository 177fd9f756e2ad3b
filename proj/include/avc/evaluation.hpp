#pragma once

// Segment-count scoring: rounding of regression outputs, per-category
// exact-match accuracy, mean absolute error on misclassified segments,
// direction merging and aggregation over training folds.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avc/core.hpp"

namespace avc::eval {

/// Raw network output ordered (car-l2r, car-r2l, CV-l2r, CV-r2l).
using CountPrediction = std::array<double, kCategoryCount>;
using CountVector = std::array<std::uint32_t, kCategoryCount>;
using PerCategory = std::array<double, kCategoryCount>;
using PerClass = std::array<double, 2>;  // (car, CV)

/// Nearest integer with halves away from zero; negatives clamp to 0.
/// Non-finite input throws DomainError.
CountVector round_predictions(const CountPrediction& pred);

/// Fraction of segments whose rounded prediction equals the label, per
/// category.
PerCategory accuracy(std::span<const CountPrediction> preds, std::span<const CountVector> labels);

/// Mean |rounded - label| over segments where they differ; nullopt when none
/// differ.
std::array<std::optional<double>, kCategoryCount> mae_misclassified(
    std::span<const CountPrediction> preds, std::span<const CountVector> labels);

enum class MergeMode {
  MeanOfDirections,  // mean of the two per-direction accuracies
  SummedCounts,      // exact match of l2r + r2l counts
};

std::string_view to_string(MergeMode mode);
MergeMode parse_merge_mode(std::string_view text);

PerClass merge_directions(const PerCategory& per_direction_accuracy);
PerClass merged_accuracy_summed(std::span<const CountPrediction> preds,
                                std::span<const CountVector> labels);

struct EvalReport {
  PerCategory accuracy{};
  std::array<std::optional<double>, kCategoryCount> mae_mis{};
  std::size_t n_segments = 0;
  PerClass merged_accuracy{};
  MergeMode merge_mode = MergeMode::MeanOfDirections;
};

EvalReport evaluate(std::span<const CountPrediction> preds, std::span<const CountVector> labels,
                    MergeMode mode = MergeMode::MeanOfDirections);

struct MetricSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t folds = 0;  // folds contributing a defined value
};

/// Summary of a list of values; empty input yields nullopt.
std::optional<MetricSummary> summarize(std::span<const double> values);

struct FoldAggregate {
  std::array<MetricSummary, kCategoryCount> accuracy{};
  /// Over the folds where the metric is defined; nullopt if defined in none.
  std::array<std::optional<MetricSummary>, kCategoryCount> mae_mis{};
  std::array<MetricSummary, 2> merged_accuracy{};
  std::size_t folds = 0;
};

FoldAggregate aggregate_folds(std::span<const EvalReport> reports);

/// {"folds": [...], "aggregate": {...}} with stable field names; undefined
/// metrics are written as null.
std::string report_to_json(std::span<const EvalReport> folds);

}  // namespace avc::eval
