#include "avc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "avc/wav.hpp"

namespace avc::dataset {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kAudioFormat = "wav_float32";

std::string segment_stem(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seg_%06zu", k);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

void rename_or_throw(const fs::path& from, const fs::path& to) {
  std::error_code ec;
  fs::rename(from, to, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(from, ignored);
    throw IoError("cannot rename " + from.string() + " to " + to.string() + ": " + ec.message());
  }
}

fs::path tmp_path(const fs::path& p) { return fs::path(p).concat(".part"); }

json counts_json(const eval::CountVector& counts) {
  json j = json::object();
  for (std::size_t c = 0; c < kCategoryCount; ++c) j[std::string(kCategoryNames[c])] = counts[c];
  return j;
}

eval::CountVector counts_from_json(const json& j) {
  eval::CountVector counts{};
  for (std::size_t c = 0; c < kCategoryCount; ++c)
    counts[c] = j.at(std::string(kCategoryNames[c])).get<std::uint32_t>();
  return counts;
}

json event_json(const VehicleEvent& ev) {
  return {{"id", ev.id},
          {"class", std::string(to_string(ev.vehicle_class))},
          {"direction", std::string(to_string(ev.direction))},
          {"speed_kmh", ev.speed_kmh},
          {"cpa_time_s", ev.cpa_time}};
}

VehicleEvent event_from_json(const json& j) {
  VehicleEvent ev;
  ev.id = j.at("id").get<std::uint32_t>();
  ev.vehicle_class = parse_vehicle_class(j.at("class").get<std::string>());
  ev.direction = parse_direction(j.at("direction").get<std::string>());
  ev.speed_kmh = j.at("speed_kmh").get<double>();
  ev.cpa_time = j.at("cpa_time_s").get<double>();
  return ev;
}

json features_json(const FeatureSettings& f, std::size_t channels) {
  json pairs = json::array();
  for (auto [i, j] : features::channel_pairs(channels)) pairs.push_back({i, j});
  return {{"enabled", f.enabled},
          {"frame_len", f.framing.frame_len},
          {"hop", f.framing.hop},
          {"max_lag", f.max_lag},
          {"lag_convention", std::string(features::kLagConvention)},
          {"pair_order", pairs}};
}

void validate_feature_settings(const FeatureSettings& f) {
  if (!dsp::is_power_of_two(f.framing.frame_len))
    throw ConfigError("feature frame length must be a power of two");
  if (f.framing.hop == 0) throw ConfigError("feature hop must be positive");
  if (f.max_lag >= f.framing.frame_len / 2) throw ConfigError("max_lag must be below frame_len / 2");
}

// Removes files created by a failed run, newest first.
class CleanupList {
 public:
  void add(const fs::path& p) { paths_.push_back(p); }
  void commit() { paths_.clear(); }
  ~CleanupList() {
    for (auto it = paths_.rbegin(); it != paths_.rend(); ++it) {
      std::error_code ec;
      fs::remove(*it, ec);
    }
  }

 private:
  std::vector<fs::path> paths_;
};

double get_number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("'" + key + "' must be a number");
  return j.get<double>();
}

prop::Environment parse_environment(const json& j) {
  prop::Environment env;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "speed_of_sound_mps")
      env.speed_of_sound = get_number(*it, k);
    else if (k == "temperature_c")
      env.temperature = get_number(*it, k);
    else if (k == "relative_humidity_pct")
      env.relative_humidity = get_number(*it, k);
    else if (k == "pressure_kpa")
      env.pressure_kpa = get_number(*it, k);
    else if (k == "ground_reflection_coeff")
      env.ground_reflection_coeff = get_number(*it, k);
    else if (k == "air_absorption")
      env.air_absorption = it->get<bool>();
    else
      throw ConfigError("unknown environment key '" + k + "'");
  }
  return env;
}

prop::ArrayGeometry parse_array(const json& j) {
  if (j.contains("positions")) {
    if (j.size() != 1) throw ConfigError("array: 'positions' excludes the other keys");
    prop::ArrayGeometry a;
    for (const json& p : j.at("positions")) {
      if (!p.is_array() || p.size() != 3) throw ConfigError("array positions are [x, y, z] triples");
      a.mic_positions.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    }
    return a;
  }
  std::size_t mics = 4;
  double aperture = 0.24, height = 2.7, center_x = 0.0;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "mics")
      mics = it->get<std::size_t>();
    else if (k == "aperture_m")
      aperture = get_number(*it, k);
    else if (k == "height_m")
      height = get_number(*it, k);
    else if (k == "center_x_m")
      center_x = get_number(*it, k);
    else
      throw ConfigError("unknown array key '" + k + "'");
  }
  return prop::ArrayGeometry::uniform_linear(mics, aperture, height, center_x);
}

FeatureSettings parse_features(const json& j) {
  FeatureSettings f;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "enabled")
      f.enabled = it->get<bool>();
    else if (k == "frame_len")
      f.framing.frame_len = it->get<std::size_t>();
    else if (k == "hop")
      f.framing.hop = it->get<std::size_t>();
    else if (k == "max_lag")
      f.max_lag = it->get<std::size_t>();
    else
      throw ConfigError("unknown features key '" + k + "'");
  }
  return f;
}

json environment_json(const prop::Environment& env) {
  return {{"speed_of_sound_mps", env.speed_of_sound},
          {"temperature_c", env.temperature},
          {"relative_humidity_pct", env.relative_humidity},
          {"pressure_kpa", env.pressure_kpa},
          {"ground_reflection_coeff", env.ground_reflection_coeff},
          {"air_absorption", env.air_absorption}};
}

json array_json(const prop::ArrayGeometry& a) {
  json pos = json::array();
  for (const Vec3& p : a.mic_positions) pos.push_back({p.x, p.y, p.z});
  return {{"positions", pos}};
}

struct Summary {
  json doc;
  fs::path dir;

  std::size_t segment_count() const { return doc.at("segment_count").get<std::size_t>(); }
  double segment_length() const { return doc.at("segment_length_s").get<double>(); }
  std::size_t channels() const { return doc.at("channels").get<std::size_t>(); }
  bool has_audio() const { return !doc.at("audio_format").is_null(); }
};

Summary load_summary(const fs::path& manifest_path) {
  Summary s;
  s.dir = manifest_path.parent_path();
  const fs::path path = s.dir / kSummaryName;
  try {
    s.doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw IoError("malformed " + path.string() + ": " + e.what());
  }
  return s;
}

std::vector<json> read_manifest_lines(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  std::vector<json> lines;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      lines.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw IoError("manifest line " + std::to_string(n) + " is not valid JSON: " + e.what());
    }
  }
  if (in.bad()) throw IoError("read failed for " + manifest_path.string());
  return lines;
}

void write_manifest_lines(const fs::path& manifest_path, const std::vector<json>& lines) {
  std::string text;
  for (const json& j : lines) text += j.dump() + "\n";
  const fs::path tmp = tmp_path(manifest_path);
  write_text(tmp, text);
  rename_or_throw(tmp, manifest_path);
}

void write_features_atomic(const fs::path& path, const features::FeatureFile& f) {
  const fs::path tmp = tmp_path(path);
  try {
    features::write_feature_file(tmp, f);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  rename_or_throw(tmp, path);
}

void write_audio_atomic(const fs::path& path, const MultichannelAudio& audio) {
  const fs::path tmp = tmp_path(path);
  try {
    wav::write_float32(tmp, audio);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  rename_or_throw(tmp, path);
}

void check_feature_header(const std::string& header_text, const json& feat, std::size_t channels,
                          std::size_t samples, const std::string& where,
                          std::vector<std::string>& problems) {
  json h;
  try {
    h = json::parse(header_text);
  } catch (const json::exception&) {
    problems.push_back(where + ": feature header is not valid JSON");
    return;
  }
  const auto frame_len = feat.at("frame_len").get<std::size_t>();
  const auto hop = feat.at("hop").get<std::size_t>();
  const auto max_lag = feat.at("max_lag").get<std::size_t>();
  const std::size_t frames = features::frame_count(samples, {frame_len, hop});
  const std::size_t pairs = channels * (channels - 1) / 2;
  try {
    if (h.at("frame_len").get<std::size_t>() != frame_len || h.at("hop").get<std::size_t>() != hop ||
        h.at("max_lag").get<std::size_t>() != max_lag)
      problems.push_back(where + ": feature framing differs from dataset summary");
    if (h.at("lag_convention").get<std::string>() != features::kLagConvention)
      problems.push_back(where + ": unexpected lag convention");
    const auto& t = h.at("tensors");
    const auto g = t.at(0).at("shape").get<std::vector<std::size_t>>();
    const auto s = t.at(1).at("shape").get<std::vector<std::size_t>>();
    const std::vector<std::size_t> g_want{pairs, frames, 2 * max_lag + 1};
    const std::vector<std::size_t> s_want{channels, frames, frame_len / 2 + 1};
    if (g != g_want) problems.push_back(where + ": gcc_phat shape mismatch");
    if (s != s_want) problems.push_back(where + ": spectrogram shape mismatch");
  } catch (const json::exception& e) {
    problems.push_back(where + ": incomplete feature header (" + e.what() + ")");
  }
}

}  // namespace

std::size_t GenerationConfig::segment_count() const {
  return static_cast<std::size_t>(std::llround(hours * traffic::kSecondsPerHour / segment_length));
}

void GenerationConfig::validate() const {
  if (!(hours > 0.0) || !std::isfinite(hours)) throw ConfigError("hours must be positive");
  if (!(segment_length > 0.0)) throw ConfigError("segment length must be positive");
  const double total = hours * traffic::kSecondsPerHour;
  for (double unit : {segment_length, traffic::kSegmentLength}) {
    const double k = total / unit;
    if (std::abs(k - std::round(k)) > 1e-9)
      throw ConfigError("total duration must be a whole number of " + std::to_string(unit) + " s segments");
  }
  if (start_hour < 0 || start_hour >= traffic::kHoursPerDay)
    throw ConfigError("start_hour must lie in [0, 24)");
  try {
    profile.validate();
    render.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (render.array.size() < 2) throw ConfigError("array needs at least two microphones");
  if (features.enabled) validate_feature_settings(features);
}

GenerationConfig GenerationConfig::parse(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("generation config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("generation config must be a JSON object");

  GenerationConfig c;
  bool have_profile = false;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "profile") {
        if (it->is_string()) {
          fs::path p = it->get<std::string>();
          if (p.is_relative()) p = base_dir / p;
          c.profile = traffic::TrafficProfile::load(p);
          c.profile_source = it->get<std::string>();
        } else {
          c.profile = traffic::TrafficProfile::parse(it->dump());
          c.profile_source = "inline";
        }
        have_profile = true;
      } else if (k == "hours") {
        c.hours = get_number(*it, k);
      } else if (k == "segment_length_s") {
        c.segment_length = get_number(*it, k);
      } else if (k == "seed") {
        c.seed = it->get<std::uint64_t>();
      } else if (k == "start_hour") {
        c.start_hour = it->get<int>();
      } else if (k == "output_dir") {
        fs::path p = it->get<std::string>();
        c.output_dir = p.is_relative() ? base_dir / p : p;
      } else if (k == "simulation_rate_hz") {
        c.render.simulation_rate = get_number(*it, k);
      } else if (k == "environment") {
        c.render.environment = parse_environment(*it);
      } else if (k == "array") {
        c.render.array = parse_array(*it);
      } else if (k == "features") {
        c.features = parse_features(*it);
      } else if (k == "labels_only") {
        c.labels_only = it->get<bool>();
      } else if (k == "deterministic") {
        c.deterministic = it->get<bool>();
      } else if (k == "workers") {
        c.workers = it->get<unsigned>();
      } else if (k == "description") {
      } else {
        throw ConfigError("unknown generation config key '" + k + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("generation config field '" + k + "': " + e.what());
    } catch (const DomainError& e) {
      throw ConfigError("generation config field '" + k + "': " + e.what());
    }
  }
  if (!have_profile) throw ConfigError("generation config needs a 'profile'");
  c.render.lanes = c.profile.lanes;
  return c;
}

GenerationConfig GenerationConfig::load(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read generation config " + path.string());
  }
  return parse(text, path.parent_path());
}

GenerationResult cmd_generate(const GenerationConfig& config, const Progress& progress) {
  config.validate();
  const fs::path out = config.output_dir;
  const std::size_t segments = config.segment_count();
  const double total = config.hours * traffic::kSecondsPerHour;
  const std::size_t channels = config.render.array.size();

  CleanupList cleanup;
  std::error_code ec;
  const fs::path manifest = out / kManifestName;
  const fs::path summary = out / kSummaryName;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  // An old manifest must not survive a failed rerun that overwrites its files.
  fs::remove(manifest, ec);
  fs::remove(summary, ec);
  const bool with_audio = !config.labels_only;
  const bool with_features = with_audio && config.features.enabled;
  for (const char* sub : {"audio", "features"}) {
    if ((sub == std::string("audio") && !with_audio) || (sub == std::string("features") && !with_features))
      continue;
    fs::create_directories(out / sub, ec);
    if (ec) throw IoError("cannot create " + (out / sub).string() + ": " + ec.message());
  }

  const std::vector<VehicleEvent> schedule =
      traffic::sample_schedule(config.profile, total, config.seed, config.start_hour);

  GenerationResult result;
  result.manifest_path = manifest;
  result.segments = segments;
  result.events = schedule.size();
  for (const VehicleEvent& ev : schedule) ++result.totals[ev.category()];

  const fs::path manifest_tmp = tmp_path(manifest);
  cleanup.add(manifest_tmp);
  std::ofstream mf(manifest_tmp, std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot open " + manifest_tmp.string() + " for writing");

  const unsigned workers =
      config.workers ? config.workers : std::max(1u, std::thread::hardware_concurrency());
  std::optional<traffic::SegmentRenderer> renderer;
  std::vector<traffic::SegmentLabel> labels;
  std::vector<std::vector<std::uint32_t>> members(segments);
  if (with_audio) {
    renderer.emplace(schedule, config.render, total, config.seed, workers, config.segment_length);
    labels = renderer->labels();
  } else {
    labels = traffic::segment_labels(schedule, segments, config.segment_length);
  }
  for (const VehicleEvent& ev : schedule)
    members[traffic::segment_of(ev.cpa_time, config.segment_length)].push_back(ev.id);

  for (std::size_t k = 0; k < segments; ++k) {
    json rec;
    rec["segment_index"] = k;
    rec["start_time_s"] = static_cast<double>(k) * config.segment_length;
    rec["duration_s"] = config.segment_length;
    rec["sample_rate"] = features::kDatasetRate;
    rec["channels"] = channels;
    rec["audio"] = nullptr;
    rec["features"] = nullptr;
    if (with_audio) {
      traffic::LabeledSegment seg = renderer->render(k);
      const std::string stem = segment_stem(k);
      const std::string audio_rel = "audio/" + stem + ".wav";
      write_audio_atomic(out / audio_rel, seg.audio);
      cleanup.add(out / audio_rel);
      rec["audio"] = audio_rel;
      if (with_features) {
        const std::string feat_rel = "features/" + stem + ".avcf";
        write_features_atomic(out / feat_rel, features::compute_features(seg.audio, config.features.framing,
                                                                         config.features.max_lag));
        cleanup.add(out / feat_rel);
        rec["features"] = feat_rel;
      }
      rec["audible_event_ids"] = renderer->audible_events(k);
    }
    eval::CountVector counts{};
    std::copy(labels[k].counts.begin(), labels[k].counts.end(), counts.begin());
    rec["counts"] = counts_json(counts);
    json evs = json::array();
    for (std::uint32_t id : members[k]) evs.push_back(event_json(schedule[id]));
    rec["events"] = evs;
    mf << rec.dump() << '\n';
    if (!mf) throw IoError("write failed for " + manifest_tmp.string());
    if (progress) progress(k + 1, segments);
  }
  mf.close();
  if (!mf) throw IoError("write failed for " + manifest_tmp.string());

  json totals = json::object();
  for (std::size_t c = 0; c < kCategoryCount; ++c) totals[std::string(kCategoryNames[c])] = result.totals[c];
  json categories = json::array();
  for (auto name : kCategoryNames) categories.push_back(std::string(name));
  json doc = {{"format_version", kFormatVersion},
              {"segment_count", segments},
              {"segment_length_s", config.segment_length},
              {"hours", config.hours},
              {"sample_rate", features::kDatasetRate},
              {"channels", channels},
              {"audio_format", with_audio ? json(kAudioFormat) : json(nullptr)},
              {"audio_units", "Pa"},
              {"labels_only", config.labels_only},
              {"seed", config.seed},
              {"start_hour", config.start_hour},
              {"deterministic", config.deterministic},
              {"simulation_rate_hz", config.render.simulation_rate},
              {"event_count", schedule.size()},
              {"schedule_totals", totals},
              {"category_order", categories},
              {"profile_source", config.profile_source},
              {"profile", json::parse(config.profile.to_json())},
              {"environment", environment_json(config.render.environment)},
              {"array", array_json(config.render.array)},
              {"features", features_json(FeatureSettings{with_features, config.features.framing,
                                                         config.features.max_lag},
                                         channels)}};
  const fs::path summary_tmp = tmp_path(summary);
  cleanup.add(summary_tmp);
  cleanup.add(summary);
  write_text(summary_tmp, doc.dump(2) + "\n");
  rename_or_throw(summary_tmp, summary);
  rename_or_throw(manifest_tmp, manifest);
  cleanup.commit();
  return result;
}

std::vector<ManifestRecord> read_manifest(const fs::path& manifest_path) {
  std::vector<ManifestRecord> out;
  std::size_t n = 0;
  for (const json& j : read_manifest_lines(manifest_path)) {
    ++n;
    try {
      ManifestRecord r;
      r.segment_index = j.at("segment_index").get<std::size_t>();
      if (j.contains("audio") && !j["audio"].is_null()) r.audio = j["audio"].get<std::string>();
      if (j.contains("features") && !j["features"].is_null()) r.features = j["features"].get<std::string>();
      r.counts = counts_from_json(j.at("counts"));
      for (const json& e : j.at("events")) r.events.push_back(event_from_json(e));
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError("manifest record " + std::to_string(n) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw IoError("manifest record " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

ValidationReport cmd_validate(const fs::path& manifest_path) {
  const Summary summary = load_summary(manifest_path);
  const std::vector<json> lines = read_manifest_lines(manifest_path);
  ValidationReport report;
  report.segments = lines.size();
  auto& problems = report.problems;

  std::size_t expected = 0, channels = 0;
  double seg_len = 0.0;
  bool has_audio = false;
  json feat;
  std::array<std::uint64_t, kCategoryCount> schedule_totals{};
  std::size_t event_count = 0;
  try {
    expected = summary.segment_count();
    seg_len = summary.segment_length();
    channels = summary.channels();
    has_audio = summary.has_audio();
    feat = summary.doc.at("features");
    for (std::size_t c = 0; c < kCategoryCount; ++c)
      schedule_totals[c] = summary.doc.at("schedule_totals").at(std::string(kCategoryNames[c])).get<std::uint64_t>();
    event_count = summary.doc.at("event_count").get<std::size_t>();
    const double hours = summary.doc.at("hours").get<double>();
    const auto from_hours = static_cast<std::size_t>(std::llround(hours * traffic::kSecondsPerHour / seg_len));
    if (from_hours != expected)
      problems.push_back("summary: " + std::to_string(hours) + " h does not give " +
                         std::to_string(expected) + " segments");
  } catch (const json::exception& e) {
    throw IoError(std::string("incomplete dataset summary: ") + e.what());
  }
  const bool has_features = has_audio && feat.value("enabled", false);
  const auto samples = static_cast<std::size_t>(std::llround(seg_len * features::kDatasetRate));

  if (lines.size() != expected)
    problems.push_back("manifest lists " + std::to_string(lines.size()) + " segments, expected " +
                       std::to_string(expected));

  std::array<std::uint64_t, kCategoryCount> totals{};
  std::set<std::uint32_t> ids;
  std::size_t events_seen = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const json& rec = lines[i];
    const std::string where = "segment " + std::to_string(i);
    try {
      const auto k = rec.at("segment_index").get<std::size_t>();
      if (k != i) problems.push_back(where + ": segment_index " + std::to_string(k) + " out of order");
      if (rec.at("channels").get<std::size_t>() != channels)
        problems.push_back(where + ": channel count differs from summary");
      if (std::abs(rec.at("duration_s").get<double>() - seg_len) > 1e-12)
        problems.push_back(where + ": duration is not " + std::to_string(seg_len) + " s");

      if (has_audio) {
        if (rec.at("audio").is_null()) {
          problems.push_back(where + ": no audio path");
        } else {
          const fs::path audio = summary.dir / rec["audio"].get<std::string>();
          if (!fs::exists(audio)) {
            problems.push_back(where + ": missing audio file " + audio.string());
          } else {
            try {
              const wav::WavInfo info = wav::read_info(audio);
              if (info.channels != channels)
                problems.push_back(where + ": " + audio.string() + " has " + std::to_string(info.channels) +
                                   " channels, expected " + std::to_string(channels));
              if (info.sample_rate != static_cast<std::uint32_t>(features::kDatasetRate))
                problems.push_back(where + ": " + audio.string() + " is not 16 kHz");
              if (info.frames != samples)
                problems.push_back(where + ": " + audio.string() + " has " + std::to_string(info.frames) +
                                   " frames, expected " + std::to_string(samples));
            } catch (const IoError& e) {
              problems.push_back(where + ": " + e.what());
            }
          }
        }
      }
      if (has_features) {
        if (rec.at("features").is_null()) {
          problems.push_back(where + ": no features path");
        } else {
          const fs::path fpath = summary.dir / rec["features"].get<std::string>();
          if (!fs::exists(fpath)) {
            problems.push_back(where + ": missing feature file " + fpath.string());
          } else {
            try {
              check_feature_header(features::read_feature_header(fpath), feat, channels, samples, where,
                                   problems);
            } catch (const std::exception& e) {
              problems.push_back(where + ": " + e.what());
            }
          }
        }
      }

      const eval::CountVector counts = counts_from_json(rec.at("counts"));
      eval::CountVector recount{};
      for (const json& e : rec.at("events")) {
        const VehicleEvent ev = event_from_json(e);
        ++events_seen;
        if (!ids.insert(ev.id).second) problems.push_back(where + ": event " + std::to_string(ev.id) + " listed twice");
        if (!(ev.cpa_time >= 0.0) || traffic::segment_of(ev.cpa_time, seg_len) != i)
          problems.push_back(where + ": event " + std::to_string(ev.id) + " cpa " + std::to_string(ev.cpa_time) +
                             " s lies outside the segment");
        ++recount[ev.category()];
      }
      for (std::size_t c = 0; c < kCategoryCount; ++c) {
        totals[c] += counts[c];
        if (counts[c] != recount[c]) {
          const long delta = static_cast<long>(counts[c]) - static_cast<long>(recount[c]);
          problems.push_back(where + ": label " + std::string(kCategoryNames[c]) + "=" + std::to_string(counts[c]) +
                             " but provenance gives " + std::to_string(recount[c]) + " (delta " +
                             (delta > 0 ? "+" : "") + std::to_string(delta) + ")");
        }
      }
    } catch (const json::exception& e) {
      problems.push_back(where + ": malformed record (" + e.what() + ")");
    } catch (const ConfigError& e) {
      problems.push_back(where + ": " + e.what());
    }
  }
  for (std::size_t c = 0; c < kCategoryCount; ++c)
    if (totals[c] != schedule_totals[c]) {
      const long long delta = static_cast<long long>(totals[c]) - static_cast<long long>(schedule_totals[c]);
      problems.push_back("total " + std::string(kCategoryNames[c]) + ": labels sum to " + std::to_string(totals[c]) +
                         ", schedule has " + std::to_string(schedule_totals[c]) + " (delta " +
                         (delta > 0 ? "+" : "") + std::to_string(delta) + ")");
    }
  if (events_seen != event_count)
    problems.push_back("manifest lists " + std::to_string(events_seen) + " events, summary has " +
                       std::to_string(event_count));
  return report;
}

std::size_t cmd_features(const fs::path& manifest_path, const FeatureSettings& settings,
                         const Progress& progress) {
  validate_feature_settings(settings);
  Summary summary = load_summary(manifest_path);
  std::vector<json> lines = read_manifest_lines(manifest_path);
  const std::size_t channels = summary.channels();
  fs::create_directories(summary.dir / "features");
  std::size_t written = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    json& rec = lines[i];
    if (!rec.contains("audio") || rec["audio"].is_null()) continue;
    const MultichannelAudio audio = wav::read(summary.dir / rec["audio"].get<std::string>());
    const std::string rel = "features/" + segment_stem(rec.at("segment_index").get<std::size_t>()) + ".avcf";
    write_features_atomic(summary.dir / rel,
                          features::compute_features(audio, settings.framing, settings.max_lag));
    rec["features"] = rel;
    ++written;
    if (progress) progress(i + 1, lines.size());
  }
  FeatureSettings recorded = settings;
  recorded.enabled = written > 0;
  summary.doc["features"] = features_json(recorded, channels);
  const fs::path spath = summary.dir / kSummaryName;
  write_text(tmp_path(spath), summary.doc.dump(2) + "\n");
  rename_or_throw(tmp_path(spath), spath);
  write_manifest_lines(manifest_path, lines);
  return written;
}

std::vector<std::pair<std::size_t, eval::CountPrediction>> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions " + path.string());
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  auto split = [&](const std::string& s) {
    std::vector<std::string> f;
    std::stringstream ss(s);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(trim(field));
    return f;
  };
  if (!std::getline(in, line)) throw DomainError("predictions file " + path.string() + " is empty");
  const std::vector<std::string> header = split(line);
  std::vector<std::string> want{"segment_index"};
  for (auto name : kCategoryNames) want.emplace_back(name);
  if (header != want)
    throw DomainError("predictions header must be segment_index,car_l2r,car_r2l,cv_l2r,cv_r2l in " + path.string());

  std::vector<std::pair<std::size_t, eval::CountPrediction>> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split(line);
    const std::string where = path.string() + ":" + std::to_string(n);
    if (f.size() != 1 + kCategoryCount) throw DomainError(where + ": expected 5 fields");
    try {
      std::size_t pos = 0;
      const unsigned long long idx = std::stoull(f[0], &pos);
      if (pos != f[0].size()) throw std::invalid_argument("segment_index");
      eval::CountPrediction p{};
      for (std::size_t c = 0; c < kCategoryCount; ++c) {
        p[c] = std::stod(f[c + 1], &pos);
        if (pos != f[c + 1].size()) throw std::invalid_argument("value");
      }
      rows.emplace_back(static_cast<std::size_t>(idx), p);
    } catch (const std::logic_error&) {
      throw DomainError(where + ": unparsable field");
    }
  }
  return rows;
}

std::string cmd_score(const std::vector<fs::path>& prediction_paths, const fs::path& manifest_path,
                      const std::optional<fs::path>& report_path, eval::MergeMode mode) {
  if (prediction_paths.empty()) throw DomainError("no prediction files given");
  const std::vector<ManifestRecord> records = read_manifest(manifest_path);
  if (records.empty()) throw DomainError("manifest has no segments");
  std::map<std::size_t, eval::CountVector> labels;
  for (const ManifestRecord& r : records) labels[r.segment_index] = r.counts;

  auto list = [](const std::vector<std::size_t>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? "," : "") + std::to_string(ids[i]);
    if (ids.size() > 20) s += ",... (" + std::to_string(ids.size()) + " total)";
    return s;
  };

  std::vector<eval::EvalReport> folds;
  for (const fs::path& path : prediction_paths) {
    std::map<std::size_t, eval::CountPrediction> preds;
    std::vector<std::size_t> duplicates, unknown, missing;
    for (const auto& [idx, p] : read_predictions(path)) {
      if (!labels.contains(idx)) unknown.push_back(idx);
      if (!preds.emplace(idx, p).second) duplicates.push_back(idx);
    }
    for (const auto& [idx, _] : labels)
      if (!preds.contains(idx)) missing.push_back(idx);
    std::string err;
    if (!missing.empty()) err += " missing segment ids: " + list(missing) + ";";
    if (!duplicates.empty()) err += " duplicate segment ids: " + list(duplicates) + ";";
    if (!unknown.empty()) err += " unknown segment ids: " + list(unknown) + ";";
    if (!err.empty()) throw DomainError(path.string() + ":" + err);

    std::vector<eval::CountPrediction> p;
    std::vector<eval::CountVector> l;
    for (const auto& [idx, counts] : labels) {
      p.push_back(preds.at(idx));
      l.push_back(counts);
    }
    folds.push_back(eval::evaluate(p, l, mode));
  }
  const std::string text = eval::report_to_json(folds) + "\n";
  if (report_path) {
    write_text(tmp_path(*report_path), text);
    rename_or_throw(tmp_path(*report_path), *report_path);
  }
  return text;
}

}  // namespace avc::dataset
