#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "phonodec/error.hpp"
#include "phonodec/gbt.hpp"
#include "phonodec/nets.hpp"
#include "phonodec/phonology.hpp"
#include "phonodec/rng.hpp"
#include "phonodec/signal.hpp"

namespace phonodec {

enum class Phase2Layout { Image, Channels };

inline const char* phase2_layout_name(Phase2Layout l) { return l == Phase2Layout::Image ? "image" : "channels"; }

struct CnnSettings {
  std::size_t conv1 = 32;
  std::size_t conv2 = 64;
  std::size_t kernel = 3;
  std::size_t feature_width = 1024;
  std::size_t dense1 = 64;
  std::size_t dense2 = 128;
  double dropout_conv = 0.25;
  double dropout_dense = 0.50;
  std::size_t epochs = 50;
  double learning_rate = 1e-3;

  friend bool operator==(const CnnSettings&, const CnnSettings&) = default;
};

struct TcnnSettings {
  std::size_t layers = 6;
  std::size_t kernel = 5;
  std::size_t dilation_base = 2;
  std::size_t hidden_channels = 16;
  double dropout_mid = 0.25;
  double dropout_head = 0.50;
  TemporalHead head = TemporalHead::Dense;
  std::size_t epochs = 50;
  double learning_rate = 2e-3;

  friend bool operator==(const TcnnSettings&, const TcnnSettings&) = default;
};

struct DaeSettings {
  std::size_t hidden1 = 1024;
  std::size_t hidden2 = 512;
  std::size_t bottleneck = 256;
  double dropout = 0.25;
  std::size_t epochs = 200;
  double learning_rate = 1e-3;

  friend bool operator==(const DaeSettings&, const DaeSettings&) = default;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  int lag = 0;
  std::size_t batch_size = 32;
  CnnSettings cnn;
  TcnnSettings tcnn;
  DaeSettings dae;
  gbt::GbtParams gbt;
  std::vector<PhonCategory> tasks{kAllCategories.begin(), kAllCategories.end()};
  Phase2Layout phase2_layout = Phase2Layout::Image;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  // Phase-1 tasks trained concurrently. Results do not depend on it.
  std::size_t threads = 1;

  void validate() const {
    if (tasks.empty()) throw ValidationError("config: at least one phonological task is required");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      for (std::size_t j = i + 1; j < tasks.size(); ++j) {
        if (tasks[i] == tasks[j]) {
          throw ValidationError("config: task " + std::string(category_name(tasks[i])) + " listed twice");
        }
      }
    }
    if (dae.bottleneck == 0) throw ValidationError("config: bottleneck must be positive");
    if (batch_size == 0) throw ValidationError("config: batch_size must be positive");
    if (threads == 0) throw ValidationError("config: threads must be positive");
    if (cnn.kernel == 0 || tcnn.kernel == 0) throw ValidationError("config: kernel sizes must be positive");
    if (tcnn.layers == 0) throw ValidationError("config: tcnn layers must be positive");
    for (double r : {cnn.dropout_conv, cnn.dropout_dense, tcnn.dropout_mid, tcnn.dropout_head, dae.dropout}) {
      if (!(r >= 0.0 && r < 1.0)) throw ValidationError("config: dropout rates must lie in [0, 1)");
    }
    for (double lr : {cnn.learning_rate, tcnn.learning_rate, dae.learning_rate}) {
      if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("config: learning rates must be >= 0");
    }
    double total = 0.0;
    for (double r : split) {
      if (!(r >= 0.0)) throw ValidationError("config: split ratios must be non-negative");
      total += r;
    }
    if (!(split[0] > 0.0) || total > 1.0 + 1e-9) {
      throw ValidationError("config: split needs a positive train ratio and ratios summing to at most 1");
    }
    gbt.validate();
  }
};

// One network input: a CNN image (row-major H x W x Cin) and a TCNN sequence.
struct TaskExample {
  std::vector<float> image;
  std::vector<float> sequence;
};

// CNN + TCNN + DAE + boosted trees for one classification task.
struct TaskModel {
  std::string name;
  Shape image_shape;
  std::vector<int> classes;  // class index -> external label
  Standardizer image_scaler;
  Standardizer sequence_scaler;
  SpatialCnn<float> cnn;
  TemporalCnn<float> tcnn;
  MinMaxScaler fused_scaler;
  DeepAutoencoder<float> dae;
  gbt::GbtModel head;

  std::size_t bottleneck() const { return dae.bottleneck(); }
};

struct TaskTrainLog {
  TrainHistory cnn;
  TrainHistory tcnn;
  TrainHistory dae;
};

namespace detail {

inline std::vector<float> to_float(std::span<const double> v) { return {v.begin(), v.end()}; }

inline Tensor<float> image_tensor(const TaskModel& m, const TaskExample& ex) {
  return Tensor<float>(m.image_shape, m.image_scaler.transform(ex.image));
}

inline Tensor<float> sequence_tensor(const TaskModel& m, const TaskExample& ex) {
  return Tensor<float>(Shape{ex.sequence.size()}, m.sequence_scaler.transform(ex.sequence));
}

inline std::vector<float> fused_feature(TaskModel& m, const TaskExample& ex) {
  return fuse(extract_penultimate(m.cnn, image_tensor(m, ex)), extract_penultimate(m.tcnn, sequence_tensor(m, ex)));
}

}  // namespace detail

inline TaskExample ccv_example(const EegTrial& trial, int lag) {
  const CovMatrix m = channel_cross_covariance(trial, lag);
  return {detail::to_float(m.values), detail::to_float(lower_triangular_flatten(m))};
}

// Bottleneck code of one example.
inline std::vector<float> task_code(TaskModel& m, const TaskExample& ex) {
  return encode(m.dae, Tensor<float>::vector(m.fused_scaler.transform(detail::fused_feature(m, ex))));
}

// Boosted-tree distribution over the model's classes.
inline std::vector<double> task_proba(TaskModel& m, const TaskExample& ex) {
  const auto code = task_code(m, ex);
  return gbt::predict_proba(m.head, std::vector<double>(code.begin(), code.end()));
}

inline int task_predict(TaskModel& m, const TaskExample& ex) {
  const auto p = task_proba(m, ex);
  return m.classes[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
}

// Trains the full stack for one task. `labels` are external labels; the distinct
// values present become the model's classes in ascending order.
inline TaskModel train_task(std::string name, const Shape& image_shape, const std::vector<TaskExample>& examples,
                            const std::vector<int>& labels, const PipelineConfig& cfg, Rng rng,
                            TaskTrainLog* log = nullptr) {
  if (examples.empty()) throw ValidationError("task " + name + ": empty training set");
  if (examples.size() != labels.size()) throw ValidationError("task " + name + ": example/label count mismatch");
  TaskModel m;
  m.name = std::move(name);
  m.image_shape = image_shape;
  m.classes = labels;
  std::sort(m.classes.begin(), m.classes.end());
  m.classes.erase(std::unique(m.classes.begin(), m.classes.end()), m.classes.end());
  if (m.classes.size() < 2) throw ValidationError("task " + m.name + " has a single class in the training split");
  std::vector<int> y;
  for (int l : labels) {
    y.push_back(static_cast<int>(std::lower_bound(m.classes.begin(), m.classes.end(), l) - m.classes.begin()));
  }
  const std::size_t k = m.classes.size();

  std::vector<std::vector<float>> images, sequences;
  for (const auto& ex : examples) {
    if (ex.image.size() != shape_size(image_shape)) {
      throw ValidationError("task " + m.name + ": image width " + std::to_string(ex.image.size()) +
                            " does not match " + shape_string(image_shape));
    }
    if (ex.sequence.size() != examples.front().sequence.size()) {
      throw ValidationError("task " + m.name + ": sequences differ in length");
    }
    images.push_back(ex.image);
    sequences.push_back(ex.sequence);
  }
  m.image_scaler = Standardizer::fit(images);
  m.sequence_scaler = Standardizer::fit(sequences);
  std::vector<Tensor<float>> image_in, sequence_in;
  for (const auto& ex : examples) {
    image_in.push_back(detail::image_tensor(m, ex));
    sequence_in.push_back(detail::sequence_tensor(m, ex));
  }

  SpatialCnnConfig cc;
  cc.height = image_shape.at(0);
  cc.width = image_shape.at(1);
  cc.in_channels = image_shape.at(2);
  cc.conv1 = cfg.cnn.conv1;
  cc.conv2 = cfg.cnn.conv2;
  cc.kernel = cfg.cnn.kernel;
  cc.feature_width = cfg.cnn.feature_width;
  cc.dense1 = cfg.cnn.dense1;
  cc.dense2 = cfg.cnn.dense2;
  cc.classes = k;
  cc.dropout_conv = cfg.cnn.dropout_conv;
  cc.dropout_dense = cfg.cnn.dropout_dense;
  Rng cnn_init = rng.fork("cnn.init");
  m.cnn = SpatialCnn<float>(cc, cnn_init);

  TemporalCnnConfig tc;
  tc.length = examples.front().sequence.size();
  tc.hidden_channels = cfg.tcnn.hidden_channels;
  tc.layers = cfg.tcnn.layers;
  tc.kernel = cfg.tcnn.kernel;
  tc.dilation_base = cfg.tcnn.dilation_base;
  tc.classes = k;
  tc.dropout_mid = cfg.tcnn.dropout_mid;
  tc.dropout_head = cfg.tcnn.dropout_head;
  tc.head = cfg.tcnn.head;
  Rng tcnn_init = rng.fork("tcnn.init");
  m.tcnn = TemporalCnn<float>(tc, tcnn_init);

  TrainConfig cnn_train{cfg.cnn.epochs, cfg.cnn.learning_rate, cfg.batch_size, rng.fork("cnn.train").next_u64()};
  TrainConfig tcnn_train{cfg.tcnn.epochs, cfg.tcnn.learning_rate, cfg.batch_size,
                         rng.fork("tcnn.train").next_u64()};
  auto cnn_hist = train_supervised(m.cnn, image_in, y, cnn_train);
  auto tcnn_hist = train_supervised(m.tcnn, sequence_in, y, tcnn_train);

  std::vector<std::vector<float>> fused;
  for (const auto& ex : examples) fused.push_back(detail::fused_feature(m, ex));
  m.fused_scaler = MinMaxScaler::fit(fused);
  std::vector<Tensor<float>> dae_in;
  for (const auto& f : fused) dae_in.push_back(Tensor<float>::vector(m.fused_scaler.transform(f)));

  DaeConfig dc = DaeConfig::for_input(fused.front().size(), cfg.dae.bottleneck, cfg.dae.hidden1, cfg.dae.hidden2);
  dc.dropout = cfg.dae.dropout;
  Rng dae_init = rng.fork("dae.init");
  m.dae = DeepAutoencoder<float>(dc, dae_init);
  TrainConfig dae_train{cfg.dae.epochs, cfg.dae.learning_rate, cfg.batch_size, rng.fork("dae.train").next_u64()};
  auto dae_hist = train_autoencoder(m.dae, dae_in, dae_train);

  gbt::FeatureMatrix codes(examples.size(), dc.bottleneck);
  for (std::size_t i = 0; i < dae_in.size(); ++i) {
    const auto c = encode(m.dae, dae_in[i]);
    for (std::size_t j = 0; j < c.size(); ++j) codes.at(i, j) = c[j];
  }
  gbt::GbtParams gp = cfg.gbt;
  gp.seed = rng.fork("gbt").next_u64();
  m.head = gbt::fit(codes, y, gp);

  if (log) *log = {std::move(cnn_hist), std::move(tcnn_hist), std::move(dae_hist)};
  return m;
}

// ---------------------------------------------------------------------------
// Phase 1

inline std::vector<int> category_labels(std::span<const EegTrial> trials, PhonCategory c) {
  std::vector<int> y;
  y.reserve(trials.size());
  for (const auto& t : trials) y.push_back(has_category(t.token, c) ? 1 : 0);
  return y;
}

inline double accuracy_of(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

struct Phase1Result {
  std::vector<PhonCategory> tasks;
  std::vector<TaskModel> models;
  std::vector<double> dev_accuracy;
};

namespace detail {

inline void check_trials(std::span<const EegTrial> trials, const char* what) {
  if (trials.empty()) throw ValidationError(std::string(what) + " is empty");
  for (const auto& t : trials) {
    t.validate();
    if (t.channels != trials.front().channels) {
      throw ValidationError(std::string(what) + ": trials differ in channel count");
    }
  }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception wins.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::exception_ptr error;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n || error) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline Phase1Result train_phase1(std::span<const EegTrial> train, std::span<const EegTrial> dev,
                                 const PipelineConfig& cfg) {
  cfg.validate();
  detail::check_trials(train, "phase-1 training split");
  const std::size_t c = train.front().channels;
  for (PhonCategory cat : cfg.tasks) {
    const auto y = category_labels(train, cat);
    if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); })) {
      throw ValidationError("task " + std::string(category_name(cat)) + " has a single class in the training split");
    }
  }
  std::vector<TaskExample> train_ex, dev_ex;
  for (const auto& t : train) train_ex.push_back(ccv_example(t, cfg.lag));
  for (const auto& t : dev) {
    if (t.channels != c) throw ValidationError("dev split channel count differs from training");
    dev_ex.push_back(ccv_example(t, cfg.lag));
  }

  Phase1Result out;
  out.tasks = cfg.tasks;
  out.models.resize(cfg.tasks.size());
  out.dev_accuracy.resize(cfg.tasks.size());
  const Rng root = Rng(cfg.seed).fork("phase1");
  detail::parallel_for(cfg.tasks.size(), cfg.threads, [&](std::size_t i) {
    const PhonCategory cat = cfg.tasks[i];
    const std::string name(category_name(cat));
    out.models[i] = train_task(name, Shape{c, c, 1}, train_ex, category_labels(train, cat), cfg, root.fork(name));
    std::vector<int> pred;
    for (const auto& ex : dev_ex) pred.push_back(task_predict(out.models[i], ex));
    out.dev_accuracy[i] = accuracy_of(category_labels(dev, cat), pred);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Latent stacking

// rows x width matrix of bottleneck codes, one row per phase-1 task.
struct LatentStack {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t r) const { return {values.data() + r * width, width}; }
};

inline LatentStack stack_latents(const EegTrial& trial, std::span<TaskModel> phase1, int lag) {
  if (phase1.empty()) throw ValidationError("stack_latents: no phase-1 models");
  const std::size_t b = phase1.front().bottleneck();
  for (const auto& m : phase1) {
    if (m.bottleneck() != b) {
      throw ValidationError("stack_latents: task " + m.name + " has bottleneck " + std::to_string(m.bottleneck()) +
                            ", expected " + std::to_string(b));
    }
  }
  const TaskExample ex = ccv_example(trial, lag);
  LatentStack s{phase1.size(), b, {}};
  s.values.reserve(s.rows * b);
  for (auto& m : phase1) {
    const auto code = task_code(m, ex);
    s.values.insert(s.values.end(), code.begin(), code.end());
  }
  return s;
}

inline Shape phase2_image_shape(std::size_t rows, std::size_t width, Phase2Layout layout) {
  return layout == Phase2Layout::Image ? Shape{rows, width, 1} : Shape{1, width, rows};
}

inline TaskExample phase2_example(const LatentStack& s, Phase2Layout layout) {
  TaskExample ex;
  ex.sequence = s.values;
  if (layout == Phase2Layout::Image) {
    ex.image = s.values;
  } else {
    ex.image.resize(s.values.size());
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t w = 0; w < s.width; ++w) ex.image[w * s.rows + r] = s.values[r * s.width + w];
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Phase 2 and the full pipeline

inline TaskModel train_phase2(const std::vector<LatentStack>& stacks, const std::vector<Token>& tokens,
                              const PipelineConfig& cfg) {
  if (stacks.empty()) throw ValidationError("phase 2: no latent stacks");
  if (stacks.size() != tokens.size()) throw ValidationError("phase 2: stack/token count mismatch");
  const std::size_t rows = stacks.front().rows, width = stacks.front().width;
  std::vector<TaskExample> ex;
  std::vector<int> y;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    if (stacks[i].rows != rows || stacks[i].width != width) {
      throw ValidationError("phase 2: latent stacks differ in shape");
    }
    ex.push_back(phase2_example(stacks[i], cfg.phase2_layout));
    y.push_back(static_cast<int>(index_of(tokens[i])));
  }
  return train_task("token", phase2_image_shape(rows, width, cfg.phase2_layout), ex, y, cfg,
                    Rng(cfg.seed).fork("phase2"));
}

struct PipelineModel {
  PipelineConfig config;
  std::size_t channels = 0;
  std::vector<TaskModel> phase1;  // cfg.tasks order
  TaskModel phase2;

  std::size_t bottleneck() const { return phase1.empty() ? 0 : phase1.front().bottleneck(); }
};

struct TrainSummary {
  std::vector<PhonCategory> tasks;
  std::vector<double> phase1_dev_accuracy;
  double phase2_dev_accuracy = 0.0;

  double phase1_mean() const {
    double s = 0.0;
    for (double a : phase1_dev_accuracy) s += a;
    return phase1_dev_accuracy.empty() ? 0.0 : s / static_cast<double>(phase1_dev_accuracy.size());
  }
};

struct TokenPrediction {
  Token token = Token::IY;
  std::array<double, kNumTokens> distribution{};
  std::vector<PhonCategory> tasks;
  std::vector<double> phonological;  // P(category present), tasks order
};

inline TokenPrediction predict_token(PipelineModel& model, const EegTrial& trial) {
  if (trial.channels != model.channels) {
    throw ValidationError("predict_token: trial has " + std::to_string(trial.channels) +
                          " channels, model was trained on " + std::to_string(model.channels));
  }
  trial.validate();
  TokenPrediction out;
  out.tasks = model.config.tasks;
  const TaskExample ex = ccv_example(trial, model.config.lag);
  LatentStack s{model.phase1.size(), model.bottleneck(), {}};
  for (auto& m : model.phase1) {
    const auto code = task_code(m, ex);
    s.values.insert(s.values.end(), code.begin(), code.end());
    const auto p = gbt::predict_proba(m.head, std::vector<double>(code.begin(), code.end()));
    // classes are {0, 1} by construction
    out.phonological.push_back(p[1]);
  }
  const auto p2 = task_proba(model.phase2, phase2_example(s, model.config.phase2_layout));
  for (std::size_t k = 0; k < p2.size(); ++k) {
    out.distribution[static_cast<std::size_t>(model.phase2.classes[k])] = p2[k];
  }
  out.token = token_from_index(static_cast<std::size_t>(
      std::max_element(out.distribution.begin(), out.distribution.end()) - out.distribution.begin()));
  return out;
}

struct TrainedPipeline {
  PipelineModel model;
  TrainSummary summary;
};

// Phase-1 models see only `train`; phase-2 stacks for both splits come from those
// frozen models.
inline TrainedPipeline train_pipeline(std::span<const EegTrial> train, std::span<const EegTrial> dev,
                                      const PipelineConfig& cfg) {
  if (dev.empty()) throw ValidationError("dev split is empty");
  auto p1 = train_phase1(train, dev, cfg);
  TrainedPipeline out;
  out.model.config = cfg;
  out.model.channels = train.front().channels;
  out.model.phase1 = std::move(p1.models);
  out.summary.tasks = cfg.tasks;
  out.summary.phase1_dev_accuracy = p1.dev_accuracy;

  std::vector<LatentStack> stacks(train.size());
  detail::parallel_for(train.size(), cfg.threads, [&](std::size_t i) {
    stacks[i] = stack_latents(train[i], out.model.phase1, cfg.lag);
  });
  std::vector<Token> tokens;
  for (const auto& t : train) tokens.push_back(t.token);
  out.model.phase2 = train_phase2(stacks, tokens, cfg);

  std::size_t hit = 0;
  for (const auto& t : dev) hit += predict_token(out.model, t).token == t.token;
  out.summary.phase2_dev_accuracy = static_cast<double>(hit) / static_cast<double>(dev.size());
  return out;
}

// Comparison arm: 11-way classification straight from the covariance embedding.
inline TaskModel train_direct(std::span<const EegTrial> train, const PipelineConfig& cfg) {
  cfg.validate();
  detail::check_trials(train, "direct training split");
  const std::size_t c = train.front().channels;
  std::vector<TaskExample> ex;
  std::vector<int> y;
  for (const auto& t : train) {
    ex.push_back(ccv_example(t, cfg.lag));
    y.push_back(static_cast<int>(index_of(t.token)));
  }
  return train_task("direct", Shape{c, c, 1}, ex, y, cfg, Rng(cfg.seed).fork("direct"));
}

inline Token predict_direct(TaskModel& model, const EegTrial& trial, int lag) {
  return token_from_index(static_cast<std::size_t>(task_predict(model, ccv_example(trial, lag))));
}

}  // namespace phonodec
