#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "phonodec/error.hpp"
#include "phonodec/eval.hpp"
#include "phonodec/gbt.hpp"
#include "phonodec/hierarchy.hpp"
#include "phonodec/nets.hpp"
#include "phonodec/phonology.hpp"
#include "phonodec/rng.hpp"
#include "phonodec/signal.hpp"

namespace phonodec {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kManifestVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Dataset container: manifest.json plus one raw little-endian float32 file per
// trial, channel-major (C rows of T samples).

struct TrialRecord {
  std::string id;
  std::string subject_id;
  std::string token;
  std::string file;  // relative to the manifest directory

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct Dataset {
  std::size_t channels = 0;
  std::size_t samples = 0;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> subjects;  // declared subjects (may include ones without trials)
  std::vector<TrialRecord> records;
  std::vector<EegTrial> trials;  // parallel to records
};

namespace detail {

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline json parse_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// Rejects keys outside `allowed` so that typos in configs surface immediately.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError(where + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": key '" + key + "' has the wrong type");
  }
}

template <class T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing key '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

}  // namespace detail

inline std::vector<double> read_f32_file(const fs::path& path, std::size_t expected) {
  if (!fs::exists(path)) throw ValidationError("missing sample file " + path.string());
  const std::string bytes = detail::read_file(path);
  if (bytes.size() != expected * 4) {
    throw ValidationError(path.string() + ": holds " + std::to_string(bytes.size() / 4) + " float32 values" +
                          (bytes.size() % 4 ? " (plus trailing bytes)" : "") + ", expected " +
                          std::to_string(expected));
  }
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t u = 0;
    for (std::size_t b = 0; b < 4; ++b) u |= std::uint32_t{static_cast<unsigned char>(bytes[4 * i + b])} << (8 * b);
    out[i] = static_cast<double>(std::bit_cast<float>(u));
  }
  return out;
}

inline void write_f32_file(const fs::path& path, std::span<const double> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (std::size_t b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
  write_text_file(path, bytes);
}

inline fs::path manifest_path(const fs::path& path) {
  return fs::is_directory(path) ? path / "manifest.json" : path;
}

inline json manifest_json(const Dataset& d) {
  json j;
  j["format_version"] = kManifestVersion;
  j["channels"] = d.channels;
  j["samples"] = d.samples;
  j["sampling_rate_hz"] = d.sampling_rate_hz;
  j["subjects"] = d.subjects;
  json trials = json::array();
  for (const auto& r : d.records) {
    trials.push_back({{"id", r.id}, {"subject", r.subject_id}, {"token", r.token}, {"file", r.file}});
  }
  j["trials"] = std::move(trials);
  return j;
}

// Reads the manifest only.
inline Dataset read_manifest(const fs::path& path) {
  const fs::path mpath = manifest_path(path);
  if (!fs::exists(mpath)) throw ValidationError("no dataset manifest at " + mpath.string());
  const json j = detail::parse_json_file(mpath);
  const std::string where = mpath.string();
  detail::check_keys(j, {"format_version", "channels", "samples", "sampling_rate_hz", "subjects", "trials"}, where);
  const int version = detail::require<int>(j, "format_version", where);
  if (version != kManifestVersion) {
    throw ValidationError(where + ": unsupported format_version " + std::to_string(version));
  }
  Dataset d;
  d.channels = detail::require<std::size_t>(j, "channels", where);
  d.samples = detail::require<std::size_t>(j, "samples", where);
  d.sampling_rate_hz = detail::get_or<double>(j, "sampling_rate_hz", 0.0, where);
  d.subjects = detail::get_or<std::vector<std::string>>(j, "subjects", {}, where);
  if (d.channels < 2 || d.samples < 2) throw ValidationError(where + ": channels and samples must be >= 2");
  const json& trials = j.contains("trials") ? j.at("trials") : json::array();
  if (!trials.is_array()) throw ValidationError(where + ": 'trials' must be an array");
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const std::string tw = where + " trial #" + std::to_string(i);
    detail::check_keys(trials[i], {"id", "subject", "token", "file"}, tw);
    TrialRecord r;
    r.file = detail::require<std::string>(trials[i], "file", tw);
    r.id = detail::get_or<std::string>(trials[i], "id", fs::path(r.file).stem().string(), tw);
    r.subject_id = detail::require<std::string>(trials[i], "subject", tw);
    r.token = detail::require<std::string>(trials[i], "token", tw);
    d.records.push_back(std::move(r));
  }
  return d;
}

// Manifest plus every sample file, validated.
inline Dataset load_dataset(const fs::path& path) {
  Dataset d = read_manifest(path);
  const fs::path base = manifest_path(path).parent_path();
  for (const auto& r : d.records) {
    const auto token = parse_token(r.token);
    if (!token) throw ValidationError("trial " + r.id + ": unknown token '" + r.token + "'");
    EegTrial t;
    t.subject_id = r.subject_id;
    t.token = *token;
    t.channels = d.channels;
    t.samples = d.samples;
    try {
      t.data = read_f32_file(base / r.file, d.channels * d.samples);
      t.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("trial " + r.id + ": " + e.what());
    }
    d.trials.push_back(std::move(t));
  }
  return d;
}

inline void write_dataset(const fs::path& dir, const Dataset& d) {
  if (d.records.size() != d.trials.size()) throw ValidationError("write_dataset: records and trials differ");
  for (std::size_t i = 0; i < d.trials.size(); ++i) {
    if (d.trials[i].data.size() != d.channels * d.samples) {
      throw ValidationError("write_dataset: trial " + d.records[i].id + " has the wrong shape");
    }
    write_f32_file(dir / d.records[i].file, d.trials[i].data);
  }
  write_text_file(dir / "manifest.json", manifest_json(d).dump(2) + "\n");
}

// Order-sensitive hash of the trial list; used to check that a checkpoint's
// stored split is applied to the same dataset.
inline std::string dataset_fingerprint(const Dataset& d) {
  std::string s = std::to_string(d.channels) + "x" + std::to_string(d.samples);
  for (const auto& r : d.records) s += "|" + r.id + "," + r.subject_id + "," + r.token;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(Rng::hash(s)));
  return buf;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark: trial = G_subject (A_token z + noise), z ~ N(0, I_k) white
// latent sources. A_token has one column per phonological category (present only
// when the token has it) and one token-specific column, so every dichotomy and
// every token has its own expected covariance.

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t channels = 8;
  std::size_t samples = 256;
  std::size_t trials_per_token = 30;
  std::size_t subjects = 2;
  double noise = 0.5;
  double category_strength = 1.0;
  double token_strength = 0.7;
  double subject_gain_spread = 0.1;
  double sampling_rate_hz = 1000.0;
  // Tokens in one group share the first member's mixing matrix.
  std::vector<std::vector<Token>> merge_groups;
  // Explicit C x k mixing matrices (row-major) replacing the planted ones.
  std::map<Token, std::vector<std::vector<double>>> mixing;

  void validate() const {
    if (channels < 2) throw ValidationError("synth: channels must be >= 2");
    if (samples < 2) throw ValidationError("synth: samples must be >= 2");
    if (trials_per_token < 2) throw ValidationError("synth: trials_per_token must be >= 2");
    if (subjects < 1) throw ValidationError("synth: subjects must be >= 1");
    if (!(noise >= 0.0)) throw ValidationError("synth: noise must be >= 0");
    if (!(subject_gain_spread >= 0.0)) throw ValidationError("synth: subject_gain_spread must be >= 0");
    std::set<Token> seen;
    for (const auto& g : merge_groups) {
      if (g.size() < 2) throw ValidationError("synth: merge groups need at least 2 tokens");
      for (Token t : g) {
        if (!seen.insert(t).second) {
          throw ValidationError("synth: token " + std::string(token_name(t)) + " appears in two merge groups");
        }
      }
    }
    for (const auto& [t, a] : mixing) {
      if (a.size() != channels) {
        throw ValidationError("synth: mixing matrix for " + std::string(token_name(t)) + " needs " +
                              std::to_string(channels) + " rows");
      }
      for (const auto& row : a) {
        if (row.empty() || row.size() != a.front().size()) {
          throw ValidationError("synth: mixing matrix for " + std::string(token_name(t)) + " is ragged");
        }
      }
    }
  }
};

inline std::string subject_name(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%02zu", s + 1);
  return buf;
}

namespace detail {

inline std::vector<double> unit_pattern(Rng rng, std::size_t c) {
  std::vector<double> v(c);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace detail

// Planted C x 7 mixing matrix (6 category columns + 1 token column).
inline std::vector<std::vector<double>> planted_mixing(const SynthSpec& spec, Token token) {
  const Rng root(spec.seed);
  std::vector<std::vector<double>> a(spec.channels, std::vector<double>(kNumCategories + 1, 0.0));
  for (PhonCategory c : kAllCategories) {
    if (!has_category(token, c)) continue;
    const auto u = detail::unit_pattern(root.fork("category/" + std::string(category_name(c))), spec.channels);
    for (std::size_t i = 0; i < spec.channels; ++i) a[i][index_of(c)] = spec.category_strength * u[i];
  }
  const auto v = detail::unit_pattern(root.fork("token/" + std::string(token_name(token))), spec.channels);
  for (std::size_t i = 0; i < spec.channels; ++i) a[i][kNumCategories] = spec.token_strength * v[i];
  return a;
}

inline std::vector<std::vector<double>> mixing_for(const SynthSpec& spec, Token token) {
  Token source = token;
  for (const auto& g : spec.merge_groups) {
    if (std::find(g.begin(), g.end(), token) != g.end()) source = g.front();
  }
  if (auto it = spec.mixing.find(source); it != spec.mixing.end()) return it->second;
  return planted_mixing(spec, source);
}

inline Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  Dataset d;
  d.channels = spec.channels;
  d.samples = spec.samples;
  d.sampling_rate_hz = spec.sampling_rate_hz;
  std::vector<std::vector<double>> gains;
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    d.subjects.push_back(subject_name(s));
    Rng g = root.fork("subject/" + subject_name(s));
    std::vector<double> gain(spec.channels);
    for (auto& x : gain) x = std::max(0.05, 1.0 + spec.subject_gain_spread * g.normal());
    gains.push_back(std::move(gain));
  }
  for (Token token : kAllTokens) {
    const auto a = mixing_for(spec, token);
    const std::size_t k = a.front().size();
    for (std::size_t i = 0; i < spec.trials_per_token; ++i) {
      const std::size_t subject = i % spec.subjects;
      char id[48];
      std::snprintf(id, sizeof id, "%s_%03zu", std::string(token_name(token)).c_str(), i);
      Rng rng = root.fork(std::string("trial/") + id);
      EegTrial t;
      t.subject_id = subject_name(subject);
      t.token = token;
      t.channels = spec.channels;
      t.samples = spec.samples;
      t.data.assign(spec.channels * spec.samples, 0.0);
      std::vector<double> z(k);
      for (std::size_t s = 0; s < spec.samples; ++s) {
        for (auto& v : z) v = rng.normal();
        for (std::size_t c = 0; c < spec.channels; ++c) {
          double x = 0.0;
          for (std::size_t j = 0; j < k; ++j) x += a[c][j] * z[j];
          x += spec.noise * rng.normal();
          // Stored as float32, so keep exactly what a reload would produce.
          t.at(c, s) = static_cast<double>(static_cast<float>(gains[subject][c] * x));
        }
      }
      d.records.push_back({id, t.subject_id, std::string(token_name(token)), std::string("trials/") + id + ".f32"});
      d.trials.push_back(std::move(t));
    }
  }
  return d;
}

namespace detail {

inline Token token_or_throw(const std::string& s, const std::string& where) {
  const auto t = parse_token(s);
  if (!t) throw ValidationError(where + ": unknown token '" + s + "'");
  return *t;
}

}  // namespace detail

inline SynthSpec synth_spec_from_json(const json& j, const std::string& where = "synth spec") {
  detail::check_keys(j,
                     {"seed", "channels", "samples", "trials_per_token", "subjects", "noise", "category_strength",
                      "token_strength", "subject_gain_spread", "sampling_rate_hz", "merge_groups", "mixing"},
                     where);
  SynthSpec s;
  s.seed = detail::get_or<std::uint64_t>(j, "seed", s.seed, where);
  s.channels = detail::get_or<std::size_t>(j, "channels", s.channels, where);
  s.samples = detail::get_or<std::size_t>(j, "samples", s.samples, where);
  s.trials_per_token = detail::get_or<std::size_t>(j, "trials_per_token", s.trials_per_token, where);
  s.subjects = detail::get_or<std::size_t>(j, "subjects", s.subjects, where);
  s.noise = detail::get_or<double>(j, "noise", s.noise, where);
  s.category_strength = detail::get_or<double>(j, "category_strength", s.category_strength, where);
  s.token_strength = detail::get_or<double>(j, "token_strength", s.token_strength, where);
  s.subject_gain_spread = detail::get_or<double>(j, "subject_gain_spread", s.subject_gain_spread, where);
  s.sampling_rate_hz = detail::get_or<double>(j, "sampling_rate_hz", s.sampling_rate_hz, where);
  for (const auto& g : detail::get_or<std::vector<std::vector<std::string>>>(j, "merge_groups", {}, where)) {
    std::vector<Token> group;
    for (const auto& name : g) group.push_back(detail::token_or_throw(name, where));
    s.merge_groups.push_back(std::move(group));
  }
  if (j.contains("mixing")) {
    if (!j.at("mixing").is_object()) throw ValidationError(where + ": 'mixing' must map tokens to matrices");
    for (const auto& [name, m] : j.at("mixing").items()) {
      try {
        s.mixing[detail::token_or_throw(name, where)] = m.get<std::vector<std::vector<double>>>();
      } catch (const json::exception&) {
        throw ValidationError(where + ": mixing matrix for '" + name + "' must be a list of rows");
      }
    }
  }
  s.validate();
  return s;
}

inline SynthSpec load_synth_spec(const fs::path& path) {
  return synth_spec_from_json(detail::parse_json_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Pipeline configuration files. Every key is optional; missing keys keep the
// defaults of PipelineConfig.

inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["lag"] = c.lag;
  j["batch_size"] = c.batch_size;
  j["split"] = c.split;
  j["threads"] = c.threads;
  std::vector<std::string> tasks;
  for (PhonCategory t : c.tasks) tasks.emplace_back(category_name(t));
  j["tasks"] = tasks;
  j["phase2_layout"] = phase2_layout_name(c.phase2_layout);
  j["cnn"] = {{"filters", {c.cnn.conv1, c.cnn.conv2}},
              {"kernel", c.cnn.kernel},
              {"feature_width", c.cnn.feature_width},
              {"dense", {c.cnn.dense1, c.cnn.dense2}},
              {"dropout", {c.cnn.dropout_conv, c.cnn.dropout_dense}},
              {"epochs", c.cnn.epochs},
              {"learning_rate", c.cnn.learning_rate}};
  j["tcnn"] = {{"layers", c.tcnn.layers},
               {"kernel", c.tcnn.kernel},
               {"dilation_base", c.tcnn.dilation_base},
               {"hidden_channels", c.tcnn.hidden_channels},
               {"dropout", {c.tcnn.dropout_mid, c.tcnn.dropout_head}},
               {"head", temporal_head_name(c.tcnn.head)},
               {"epochs", c.tcnn.epochs},
               {"learning_rate", c.tcnn.learning_rate}};
  j["dae"] = {{"hidden", {c.dae.hidden1, c.dae.hidden2}},
              {"bottleneck", c.dae.bottleneck},
              {"dropout", c.dae.dropout},
              {"epochs", c.dae.epochs},
              {"learning_rate", c.dae.learning_rate}};
  j["gbt"] = {{"max_depth", c.gbt.max_depth},
              {"rounds", c.gbt.rounds},
              {"learning_rate", c.gbt.learning_rate},
              {"lambda", c.gbt.lambda},
              {"subsample", c.gbt.row_subsample},
              {"colsample", c.gbt.column_subsample},
              {"min_child_weight", c.gbt.min_child_weight}};
  return j;
}

namespace detail {

template <class T>
void read_pair(const json& j, const char* key, T& first, T& second, const std::string& where) {
  if (!j.contains(key)) return;
  const auto v = get_or<std::vector<T>>(j, key, {}, where);
  if (v.size() != 2) throw ValidationError(where + ": '" + key + "' needs exactly 2 values");
  first = v[0];
  second = v[1];
}

}  // namespace detail

inline PipelineConfig config_from_json(const json& j, const std::string& where = "config") {
  detail::check_keys(j,
                     {"seed", "lag", "batch_size", "split", "threads", "tasks", "phase2_layout", "cnn", "tcnn", "dae",
                      "gbt"},
                     where);
  PipelineConfig c;
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed, where);
  c.lag = detail::get_or<int>(j, "lag", c.lag, where);
  c.batch_size = detail::get_or<std::size_t>(j, "batch_size", c.batch_size, where);
  c.threads = detail::get_or<std::size_t>(j, "threads", c.threads, where);
  if (j.contains("split")) {
    const auto v = detail::get_or<std::vector<double>>(j, "split", {}, where);
    if (v.size() != 3) throw ValidationError(where + ": 'split' needs train, dev and test ratios");
    c.split = {v[0], v[1], v[2]};
  }
  if (j.contains("tasks")) {
    c.tasks.clear();
    for (const auto& name : detail::get_or<std::vector<std::string>>(j, "tasks", {}, where)) {
      const auto cat = parse_category(name);
      if (!cat) throw ValidationError(where + ": unknown task '" + name + "'");
      c.tasks.push_back(*cat);
    }
  }
  if (j.contains("phase2_layout")) {
    const auto s = detail::get_or<std::string>(j, "phase2_layout", "", where);
    if (s == "image") {
      c.phase2_layout = Phase2Layout::Image;
    } else if (s == "channels") {
      c.phase2_layout = Phase2Layout::Channels;
    } else {
      throw ValidationError(where + ": phase2_layout must be 'image' or 'channels'");
    }
  }
  if (j.contains("cnn")) {
    const json& s = j.at("cnn");
    const std::string w = where + ".cnn";
    detail::check_keys(s, {"filters", "kernel", "feature_width", "dense", "dropout", "epochs", "learning_rate"}, w);
    detail::read_pair(s, "filters", c.cnn.conv1, c.cnn.conv2, w);
    c.cnn.kernel = detail::get_or<std::size_t>(s, "kernel", c.cnn.kernel, w);
    c.cnn.feature_width = detail::get_or<std::size_t>(s, "feature_width", c.cnn.feature_width, w);
    detail::read_pair(s, "dense", c.cnn.dense1, c.cnn.dense2, w);
    detail::read_pair(s, "dropout", c.cnn.dropout_conv, c.cnn.dropout_dense, w);
    c.cnn.epochs = detail::get_or<std::size_t>(s, "epochs", c.cnn.epochs, w);
    c.cnn.learning_rate = detail::get_or<double>(s, "learning_rate", c.cnn.learning_rate, w);
  }
  if (j.contains("tcnn")) {
    const json& s = j.at("tcnn");
    const std::string w = where + ".tcnn";
    detail::check_keys(s,
                       {"layers", "kernel", "dilation_base", "hidden_channels", "dropout", "head", "epochs",
                        "learning_rate"},
                       w);
    c.tcnn.layers = detail::get_or<std::size_t>(s, "layers", c.tcnn.layers, w);
    c.tcnn.kernel = detail::get_or<std::size_t>(s, "kernel", c.tcnn.kernel, w);
    c.tcnn.dilation_base = detail::get_or<std::size_t>(s, "dilation_base", c.tcnn.dilation_base, w);
    c.tcnn.hidden_channels = detail::get_or<std::size_t>(s, "hidden_channels", c.tcnn.hidden_channels, w);
    detail::read_pair(s, "dropout", c.tcnn.dropout_mid, c.tcnn.dropout_head, w);
    if (s.contains("head")) {
      const auto h = detail::get_or<std::string>(s, "head", "", w);
      if (h == "dense") {
        c.tcnn.head = TemporalHead::Dense;
      } else if (h == "global_average") {
        c.tcnn.head = TemporalHead::GlobalAverage;
      } else {
        throw ValidationError(w + ": head must be 'dense' or 'global_average'");
      }
    }
    c.tcnn.epochs = detail::get_or<std::size_t>(s, "epochs", c.tcnn.epochs, w);
    c.tcnn.learning_rate = detail::get_or<double>(s, "learning_rate", c.tcnn.learning_rate, w);
  }
  if (j.contains("dae")) {
    const json& s = j.at("dae");
    const std::string w = where + ".dae";
    detail::check_keys(s, {"hidden", "bottleneck", "dropout", "epochs", "learning_rate"}, w);
    detail::read_pair(s, "hidden", c.dae.hidden1, c.dae.hidden2, w);
    c.dae.bottleneck = detail::get_or<std::size_t>(s, "bottleneck", c.dae.bottleneck, w);
    c.dae.dropout = detail::get_or<double>(s, "dropout", c.dae.dropout, w);
    c.dae.epochs = detail::get_or<std::size_t>(s, "epochs", c.dae.epochs, w);
    c.dae.learning_rate = detail::get_or<double>(s, "learning_rate", c.dae.learning_rate, w);
  }
  if (j.contains("gbt")) {
    const json& s = j.at("gbt");
    const std::string w = where + ".gbt";
    detail::check_keys(s, {"max_depth", "rounds", "learning_rate", "lambda", "subsample", "colsample",
                           "min_child_weight"},
                       w);
    c.gbt.max_depth = detail::get_or<int>(s, "max_depth", c.gbt.max_depth, w);
    c.gbt.rounds = detail::get_or<int>(s, "rounds", c.gbt.rounds, w);
    c.gbt.learning_rate = detail::get_or<double>(s, "learning_rate", c.gbt.learning_rate, w);
    c.gbt.lambda = detail::get_or<double>(s, "lambda", c.gbt.lambda, w);
    c.gbt.row_subsample = detail::get_or<double>(s, "subsample", c.gbt.row_subsample, w);
    c.gbt.column_subsample = detail::get_or<double>(s, "colsample", c.gbt.column_subsample, w);
    c.gbt.min_child_weight = detail::get_or<double>(s, "min_child_weight", c.gbt.min_child_weight, w);
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  return config_from_json(detail::parse_json_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Checkpoints: "PHONODEC" magic, u32 version, u64 payload length, payload, u64
// FNV-1a checksum of the payload. All integers little-endian.

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void shape(const Shape& s) {
    u64(s.size());
    for (std::size_t d : s) u64(d);
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void f32s(std::span<const float> v) {
    u64(v.size());
    for (float x : v) put(std::bit_cast<std::uint32_t>(x));
  }
  void i32s(std::span<const int> v) {
    u64(v.size());
    for (int x : v) i32(x);
  }
  const std::string& bytes() const { return buf_; }

 private:
  template <class U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() {
    const std::uint64_t n = count(1);
    return std::string(take(n));
  }
  Shape shape() {
    Shape s(count(8));
    for (auto& d : s) d = u64();
    return s;
  }
  std::vector<double> f64s() {
    std::vector<double> v(count(8));
    for (auto& x : v) x = f64();
    return v;
  }
  std::vector<float> f32s() {
    std::vector<float> v(count(4));
    for (auto& x : v) x = std::bit_cast<float>(get<std::uint32_t>());
    return v;
  }
  std::vector<int> i32s() {
    std::vector<int> v(count(4));
    for (auto& x : v) x = i32();
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  // Element count prefix, bounded by the bytes that remain.
  std::uint64_t count(std::size_t element_size) {
    const std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / element_size) throw ValidationError("checkpoint is truncated or corrupted");
    return n;
  }
  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw ValidationError("checkpoint is truncated or corrupted");
    const auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <class U>
  U get() {
    const auto s = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

template <class Net>
void write_params(ByteWriter& w, const Net& net) {
  const auto ps = net.parameters();
  w.u64(ps.size());
  for (const auto* p : ps) {
    w.str(p->name);
    w.shape(p->value.shape());
    w.f32s(p->value.values());
  }
}

template <class Net>
void read_params(ByteReader& r, Net& net, const std::string& owner) {
  auto ps = net.parameters();
  if (r.u64() != ps.size()) throw ValidationError("checkpoint: parameter count mismatch in " + owner);
  for (auto* p : ps) {
    const std::string name = r.str();
    const Shape shape = r.shape();
    auto values = r.f32s();
    if (name != p->name || shape != p->value.shape() || values.size() != p->value.size()) {
      throw ValidationError("checkpoint: blob " + owner + "/" + name + " does not match declared shape " +
                            shape_string(p->value.shape()));
    }
    p->value = Tensor<float>(shape, std::move(values));
    p->grad = Tensor<float>(shape);
  }
}

inline void write_gbt(ByteWriter& w, const gbt::GbtModel& m) {
  w.u64(m.num_classes);
  w.u64(m.num_features);
  w.u8(m.softmax ? 1 : 0);
  w.f64s(m.base_score);
  w.u64(m.rounds.size());
  for (const auto& round : m.rounds) {
    w.u64(round.size());
    for (const auto& tree : round) {
      w.u64(tree.nodes.size());
      for (const auto& n : tree.nodes) {
        w.i32(n.feature);
        w.f64(n.threshold);
        w.i32(n.left);
        w.i32(n.right);
        w.f64(n.value);
      }
    }
  }
  w.f64s(m.train_logloss);
}

inline gbt::GbtModel read_gbt(ByteReader& r) {
  gbt::GbtModel m;
  m.num_classes = r.u64();
  m.num_features = r.u64();
  m.softmax = r.u8() != 0;
  m.base_score = r.f64s();
  if (m.base_score.size() != m.groups()) throw ValidationError("checkpoint: boosted-tree base score is malformed");
  const std::uint64_t rounds = r.u64();
  for (std::uint64_t i = 0; i < rounds; ++i) {
    std::vector<gbt::Tree> trees(r.u64());
    if (trees.size() != m.groups()) throw ValidationError("checkpoint: boosted-tree round is malformed");
    for (auto& tree : trees) {
      tree.nodes.resize(r.u64());
      for (auto& n : tree.nodes) {
        n.feature = r.i32();
        n.threshold = r.f64();
        n.left = r.i32();
        n.right = r.i32();
        n.value = r.f64();
        const auto size = static_cast<std::int64_t>(tree.nodes.size());
        if (n.feature >= static_cast<std::int64_t>(m.num_features) ||
            (n.feature >= 0 && (n.left < 0 || n.right < 0 || n.left >= size || n.right >= size))) {
          throw ValidationError("checkpoint: boosted-tree node is malformed");
        }
      }
      if (tree.nodes.empty()) throw ValidationError("checkpoint: empty tree");
    }
    m.rounds.push_back(std::move(trees));
  }
  m.train_logloss = r.f64s();
  return m;
}

inline void write_task(ByteWriter& w, const TaskModel& m) {
  w.str(m.name);
  w.shape(m.image_shape);
  w.i32s(m.classes);
  w.f64s(m.image_scaler.mean());
  w.f64s(m.image_scaler.scale());
  w.f64s(m.sequence_scaler.mean());
  w.f64s(m.sequence_scaler.scale());
  w.f64s(m.fused_scaler.minimum());
  w.f64s(m.fused_scaler.range());

  const auto& cc = m.cnn.config();
  for (std::size_t v : {cc.height, cc.width, cc.in_channels, cc.conv1, cc.conv2, cc.kernel, cc.feature_width,
                        cc.dense1, cc.dense2, cc.classes}) {
    w.u64(v);
  }
  w.f64(cc.dropout_conv);
  w.f64(cc.dropout_dense);
  write_params(w, m.cnn);

  const auto& tc = m.tcnn.config();
  for (std::size_t v : {tc.length, tc.in_channels, tc.hidden_channels, tc.layers, tc.kernel, tc.dilation_base,
                        tc.classes}) {
    w.u64(v);
  }
  w.f64(tc.dropout_mid);
  w.f64(tc.dropout_head);
  w.u8(tc.head == TemporalHead::Dense ? 0 : 1);
  write_params(w, m.tcnn);

  const auto& dc = m.dae.config();
  for (std::size_t v : {dc.input_width, dc.hidden1, dc.hidden2, dc.bottleneck}) w.u64(v);
  w.f64(dc.dropout);
  write_params(w, m.dae);

  write_gbt(w, m.head);
}

inline TaskModel read_task(ByteReader& r) {
  TaskModel m;
  m.name = r.str();
  m.image_shape = r.shape();
  m.classes = r.i32s();
  {
    auto mean = r.f64s();
    auto scale = r.f64s();
    m.image_scaler = Standardizer(std::move(mean), std::move(scale));
  }
  {
    auto mean = r.f64s();
    auto scale = r.f64s();
    m.sequence_scaler = Standardizer(std::move(mean), std::move(scale));
  }
  {
    auto lo = r.f64s();
    auto range = r.f64s();
    m.fused_scaler = MinMaxScaler(std::move(lo), std::move(range));
  }
  Rng unused(0);

  SpatialCnnConfig cc;
  for (std::size_t* v : {&cc.height, &cc.width, &cc.in_channels, &cc.conv1, &cc.conv2, &cc.kernel, &cc.feature_width,
                         &cc.dense1, &cc.dense2, &cc.classes}) {
    *v = r.u64();
  }
  cc.dropout_conv = r.f64();
  cc.dropout_dense = r.f64();
  m.cnn = SpatialCnn<float>(cc, unused);
  read_params(r, m.cnn, m.name + "/cnn");

  TemporalCnnConfig tc;
  for (std::size_t* v : {&tc.length, &tc.in_channels, &tc.hidden_channels, &tc.layers, &tc.kernel,
                         &tc.dilation_base, &tc.classes}) {
    *v = r.u64();
  }
  tc.dropout_mid = r.f64();
  tc.dropout_head = r.f64();
  tc.head = r.u8() == 0 ? TemporalHead::Dense : TemporalHead::GlobalAverage;
  m.tcnn = TemporalCnn<float>(tc, unused);
  read_params(r, m.tcnn, m.name + "/tcnn");

  DaeConfig dc;
  for (std::size_t* v : {&dc.input_width, &dc.hidden1, &dc.hidden2, &dc.bottleneck}) *v = r.u64();
  dc.dropout = r.f64();
  m.dae = DeepAutoencoder<float>(dc, unused);
  read_params(r, m.dae, m.name + "/dae");

  m.head = read_gbt(r);
  if (m.head.num_features != dc.bottleneck || m.classes.size() != m.head.num_classes ||
      m.image_scaler.width() != shape_size(m.image_shape) || m.sequence_scaler.width() != tc.length ||
      m.fused_scaler.width() != dc.input_width) {
    throw ValidationError("checkpoint: task " + m.name + " has inconsistent component widths");
  }
  return m;
}

}  // namespace detail

struct Checkpoint {
  PipelineModel model;
  json meta;  // free-form provenance: dataset fingerprint, split, ...
};

inline std::string serialize_checkpoint(const PipelineModel& model, const json& meta = json::object()) {
  detail::ByteWriter payload;
  json header;
  header["config"] = config_to_json(model.config);
  header["channels"] = model.channels;
  header["bottleneck"] = model.bottleneck();
  std::vector<std::string> rows;
  for (PhonCategory c : model.config.tasks) rows.emplace_back(category_name(c));
  header["latent_row_order"] = rows;
  header["token_order"] = token_names();
  header["meta"] = meta;
  payload.str(header.dump());
  payload.u64(model.phase1.size());
  for (const auto& m : model.phase1) detail::write_task(payload, m);
  detail::write_task(payload, model.phase2);

  detail::ByteWriter file;
  for (char c : std::string_view("PHONODEC")) file.u8(static_cast<std::uint8_t>(c));
  file.u32(kCheckpointVersion);
  file.u64(payload.bytes().size());
  std::string out = file.bytes() + payload.bytes();
  detail::ByteWriter tail;
  tail.u64(Rng::hash(payload.bytes()));
  return out + tail.bytes();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 20 || bytes.substr(0, 8) != "PHONODEC") throw ValidationError("not a phonodec checkpoint");
  detail::ByteReader head(bytes.substr(8, 12));
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t len = head.u64();
  if (bytes.size() != 20 + len + 8) throw ValidationError("checkpoint is truncated or corrupted");
  const std::string_view payload = bytes.substr(20, len);
  detail::ByteReader tail(bytes.substr(20 + len, 8));
  if (tail.u64() != Rng::hash(payload)) throw ValidationError("checkpoint checksum mismatch");

  detail::ByteReader r(payload);
  json header;
  try {
    header = json::parse(r.str());
  } catch (const json::exception&) {
    throw ValidationError("checkpoint header is corrupted");
  }
  Checkpoint ck;
  ck.model.config = config_from_json(header.at("config"), "checkpoint config");
  ck.model.channels = header.at("channels").get<std::size_t>();
  ck.meta = header.value("meta", json::object());
  const std::uint64_t n = r.u64();
  if (n != ck.model.config.tasks.size()) throw ValidationError("checkpoint: task count does not match config");
  for (std::uint64_t i = 0; i < n; ++i) ck.model.phase1.push_back(detail::read_task(r));
  ck.model.phase2 = detail::read_task(r);
  if (!r.done()) throw ValidationError("checkpoint has trailing bytes");
  for (std::size_t i = 0; i < n; ++i) {
    if (ck.model.phase1[i].name != category_name(ck.model.config.tasks[i])) {
      throw ValidationError("checkpoint: latent row order does not match config tasks");
    }
  }
  return ck;
}

inline void save_checkpoint(const PipelineModel& model, const fs::path& path, const json& meta = json::object()) {
  write_text_file(path, serialize_checkpoint(model, meta));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("checkpoint " + path.string() + " does not exist");
  return deserialize_checkpoint(detail::read_file(path));
}

}  // namespace phonodec
