// Command-line front end: generate, validate, features, score.
//
// Exit codes: 0 success, 1 validation failure, 2 configuration error,
// 3 I/O error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

#include "avc/dataset.hpp"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

avc::dataset::Progress make_progress(bool quiet, const char* what) {
  if (quiet) return {};
  return [what, start = std::chrono::steady_clock::now()](std::size_t done, std::size_t total) {
    if (done != total && done % 10 != 0) return;
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "%s %zu/%zu segments (%.1f s)\n", what, done, total, elapsed);
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic traffic-noise dataset toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<double> hours;
  std::optional<std::uint64_t> seed;
  std::optional<int> start_hour;
  std::optional<unsigned> workers;
  std::string output_dir;
  bool deterministic = false;
  bool labels_only = false;
  bool quiet = false;
  auto* gen = app.add_subcommand("generate", "Render a labeled dataset from a generation config");
  gen->add_option("--config", config_path, "Generation config (JSON)")->required();
  gen->add_option("--hours", hours, "Override total hours");
  gen->add_option("--seed", seed, "Override seed");
  gen->add_option("--start-hour", start_hour, "Hour of day at the timeline start");
  gen->add_option("--output", output_dir, "Override output directory");
  gen->add_option("--workers", workers, "Rendering threads (0: all cores)");
  gen->add_flag("--deterministic", deterministic, "Record bit-reproducible mode in the summary");
  gen->add_flag("--labels-only", labels_only, "Write manifest and labels without audio");
  gen->add_flag("-q,--quiet", quiet, "No progress output");

  std::string validate_manifest;
  auto* val = app.add_subcommand("validate", "Check a dataset manifest and the files it references");
  val->add_option("manifest", validate_manifest, "manifest.jsonl")->required();

  std::vector<std::string> pred_paths;
  std::string score_manifest;
  std::string report_path;
  std::string merge = "mean";
  auto* score = app.add_subcommand("score", "Score prediction files against manifest labels");
  score->add_option("--pred", pred_paths, "Prediction CSV, one per fold")->required();
  score->add_option("--manifest", score_manifest, "manifest.jsonl")->required();
  score->add_option("--out", report_path, "Report path (default: stdout only)");
  score->add_option("--merge", merge, "Direction merging: mean or summed_counts")
      ->check(CLI::IsMember({"mean", "summed_counts"}));

  std::string feat_manifest;
  avc::dataset::FeatureSettings feat;
  auto* fcmd = app.add_subcommand("features", "Recompute feature files of an existing dataset");
  fcmd->add_option("--manifest", feat_manifest, "manifest.jsonl")->required();
  fcmd->add_option("--frame", feat.framing.frame_len, "Frame length (power of two)");
  fcmd->add_option("--hop", feat.framing.hop, "Hop size");
  fcmd->add_option("--max-lag", feat.max_lag, "Retained GCC lags on each side");
  fcmd->add_flag("-q,--quiet", quiet, "No progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) {
      auto cfg = avc::dataset::GenerationConfig::load(config_path);
      if (hours) cfg.hours = *hours;
      if (seed) cfg.seed = *seed;
      if (start_hour) cfg.start_hour = *start_hour;
      if (workers) cfg.workers = *workers;
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      cfg.deterministic = cfg.deterministic || deterministic;
      cfg.labels_only = cfg.labels_only || labels_only;
      const auto res = avc::dataset::cmd_generate(cfg, make_progress(quiet, "generated"));
      std::printf("%s: %zu segments, %zu events (car_l2r %llu, car_r2l %llu, cv_l2r %llu, cv_r2l %llu)\n",
                  res.manifest_path.string().c_str(), res.segments, res.events,
                  static_cast<unsigned long long>(res.totals[0]),
                  static_cast<unsigned long long>(res.totals[1]),
                  static_cast<unsigned long long>(res.totals[2]),
                  static_cast<unsigned long long>(res.totals[3]));
      return 0;
    }
    if (*val) {
      const auto report = avc::dataset::cmd_validate(validate_manifest);
      for (const auto& p : report.problems) std::printf("FAIL %s\n", p.c_str());
      if (!report.ok()) {
        std::printf("%zu problem(s) in %zu segments\n", report.problems.size(), report.segments);
        return kExitValidation;
      }
      std::printf("OK %zu segments\n", report.segments);
      return 0;
    }
    if (*score) {
      std::vector<std::filesystem::path> paths(pred_paths.begin(), pred_paths.end());
      std::optional<std::filesystem::path> out;
      if (!report_path.empty()) out = report_path;
      std::cout << avc::dataset::cmd_score(paths, score_manifest, out,
                                           avc::eval::parse_merge_mode(merge));
      return 0;
    }
    if (*fcmd) {
      const std::size_t n = avc::dataset::cmd_features(feat_manifest, feat, make_progress(quiet, "features"));
      std::printf("wrote features for %zu segments\n", n);
      return 0;
    }
  } catch (const avc::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const avc::IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const avc::DomainError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return 0;
}
