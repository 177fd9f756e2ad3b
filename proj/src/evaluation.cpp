#include "avc/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace avc::eval {

namespace {

using json = nlohmann::json;

void check_lengths(std::span<const CountPrediction> preds, std::span<const CountVector> labels) {
  if (preds.size() != labels.size())
    throw DomainError("predictions and labels differ in length (" + std::to_string(preds.size()) +
                      " vs " + std::to_string(labels.size()) + ")");
  if (preds.empty()) throw DomainError("at least one segment is required");
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json summary_json(const MetricSummary& s) {
  return {{"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"folds", s.folds}};
}

}  // namespace

CountVector round_predictions(const CountPrediction& pred) {
  CountVector out{};
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    if (!std::isfinite(pred[c])) throw DomainError("prediction is not finite");
    const double r = std::round(pred[c]);  // halves away from zero
    out[c] = r <= 0.0 ? 0u : static_cast<std::uint32_t>(std::min(r, 4294967295.0));
  }
  return out;
}

PerCategory accuracy(std::span<const CountPrediction> preds, std::span<const CountVector> labels) {
  check_lengths(preds, labels);
  std::array<std::size_t, kCategoryCount> hits{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const CountVector r = round_predictions(preds[i]);
    for (std::size_t c = 0; c < kCategoryCount; ++c)
      if (r[c] == labels[i][c]) ++hits[c];
  }
  PerCategory acc{};
  for (std::size_t c = 0; c < kCategoryCount; ++c)
    acc[c] = static_cast<double>(hits[c]) / static_cast<double>(preds.size());
  return acc;
}

std::array<std::optional<double>, kCategoryCount> mae_misclassified(
    std::span<const CountPrediction> preds, std::span<const CountVector> labels) {
  check_lengths(preds, labels);
  std::array<double, kCategoryCount> total{};
  std::array<std::size_t, kCategoryCount> wrong{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const CountVector r = round_predictions(preds[i]);
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      if (r[c] == labels[i][c]) continue;
      total[c] += std::abs(static_cast<double>(r[c]) - static_cast<double>(labels[i][c]));
      ++wrong[c];
    }
  }
  std::array<std::optional<double>, kCategoryCount> mae{};
  for (std::size_t c = 0; c < kCategoryCount; ++c)
    if (wrong[c] > 0) mae[c] = total[c] / static_cast<double>(wrong[c]);
  return mae;
}

std::string_view to_string(MergeMode mode) {
  return mode == MergeMode::MeanOfDirections ? "mean" : "summed_counts";
}

MergeMode parse_merge_mode(std::string_view text) {
  if (text == "mean") return MergeMode::MeanOfDirections;
  if (text == "summed_counts") return MergeMode::SummedCounts;
  throw ConfigError("unknown merge mode '" + std::string(text) + "' (expected mean or summed_counts)");
}

PerClass merge_directions(const PerCategory& acc) {
  return {(acc[0] + acc[1]) / 2.0, (acc[2] + acc[3]) / 2.0};
}

PerClass merged_accuracy_summed(std::span<const CountPrediction> preds,
                                std::span<const CountVector> labels) {
  check_lengths(preds, labels);
  std::array<std::size_t, 2> hits{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const CountVector r = round_predictions(preds[i]);
    for (std::size_t k = 0; k < 2; ++k)
      if (r[2 * k] + r[2 * k + 1] == labels[i][2 * k] + labels[i][2 * k + 1]) ++hits[k];
  }
  const auto n = static_cast<double>(preds.size());
  return {static_cast<double>(hits[0]) / n, static_cast<double>(hits[1]) / n};
}

EvalReport evaluate(std::span<const CountPrediction> preds, std::span<const CountVector> labels,
                    MergeMode mode) {
  EvalReport r;
  r.accuracy = accuracy(preds, labels);
  r.mae_mis = mae_misclassified(preds, labels);
  r.n_segments = preds.size();
  r.merge_mode = mode;
  r.merged_accuracy = mode == MergeMode::MeanOfDirections ? merge_directions(r.accuracy)
                                                          : merged_accuracy_summed(preds, labels);
  return r;
}

std::optional<MetricSummary> summarize(std::span<const double> values) {
  if (values.empty()) return std::nullopt;
  MetricSummary s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = std::clamp(sum / static_cast<double>(values.size()), s.min, s.max);
  s.folds = values.size();
  return s;
}

FoldAggregate aggregate_folds(std::span<const EvalReport> reports) {
  if (reports.empty()) throw DomainError("aggregate_folds: at least one report is required");
  FoldAggregate agg;
  agg.folds = reports.size();
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    std::vector<double> acc, mae;
    for (const EvalReport& r : reports) {
      acc.push_back(r.accuracy[c]);
      if (r.mae_mis[c]) mae.push_back(*r.mae_mis[c]);
    }
    agg.accuracy[c] = *summarize(acc);
    agg.mae_mis[c] = summarize(mae);
  }
  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<double> merged;
    for (const EvalReport& r : reports) merged.push_back(r.merged_accuracy[k]);
    agg.merged_accuracy[k] = *summarize(merged);
  }
  return agg;
}

std::string report_to_json(std::span<const EvalReport> folds) {
  static constexpr std::array<const char*, 2> kClassNames{"car", "cv"};
  json doc;
  json fold_list = json::array();
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const EvalReport& r = folds[f];
    json acc, mae, merged;
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      acc[std::string(kCategoryNames[c])] = r.accuracy[c];
      mae[std::string(kCategoryNames[c])] = optional_number(r.mae_mis[c]);
    }
    for (std::size_t k = 0; k < 2; ++k) merged[kClassNames[k]] = r.merged_accuracy[k];
    fold_list.push_back({{"fold", f},
                         {"n_segments", r.n_segments},
                         {"accuracy", acc},
                         {"mae_mis", mae},
                         {"merged_accuracy", merged},
                         {"merge_mode", std::string(to_string(r.merge_mode))}});
  }
  doc["folds"] = fold_list;
  if (!folds.empty()) {
    const FoldAggregate agg = aggregate_folds(folds);
    json acc, mae, merged;
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      acc[std::string(kCategoryNames[c])] = summary_json(agg.accuracy[c]);
      mae[std::string(kCategoryNames[c])] =
          agg.mae_mis[c] ? summary_json(*agg.mae_mis[c]) : json(nullptr);
    }
    for (std::size_t k = 0; k < 2; ++k) merged[kClassNames[k]] = summary_json(agg.merged_accuracy[k]);
    doc["aggregate"] = {{"folds", agg.folds}, {"accuracy", acc}, {"mae_mis", mae},
                        {"merged_accuracy", merged}};
  }
  return doc.dump(2);
}

}  // namespace avc::eval
