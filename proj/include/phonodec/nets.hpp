#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "phonodec/adam.hpp"
#include "phonodec/autodiff.hpp"
#include "phonodec/error.hpp"
#include "phonodec/rng.hpp"
#include "phonodec/tensor.hpp"

namespace phonodec {

namespace detail {

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <class T>
Parameter<T> init_weights(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<T> w(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  return Parameter<T>(std::move(name), std::move(w));
}

template <class T>
Parameter<T> init_bias(std::string name, std::size_t n) {
  return Parameter<T>(std::move(name), Tensor<T>(Shape{n}));
}

inline std::size_t ceil_half(std::size_t n) { return (n + 1) / 2; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Spatial CNN: conv(32,3x3)+pool -> conv(64,3x3)+pool -> feature layer -> dense 64
// -> dense 128 -> softmax. The feature layer activations are the CNN features.
// Convolutions use valid padding unless the input is too small for two valid
// conv+pool blocks, in which case they fall back to same padding.

struct SpatialCnnConfig {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t in_channels = 1;
  std::size_t conv1 = 32;
  std::size_t conv2 = 64;
  std::size_t kernel = 3;
  std::size_t feature_width = 1024;
  std::size_t dense1 = 64;
  std::size_t dense2 = 128;
  std::size_t classes = 2;
  double dropout_conv = 0.25;
  double dropout_dense = 0.50;

  friend bool operator==(const SpatialCnnConfig&, const SpatialCnnConfig&) = default;
};

struct SpatialGeometry {
  Padding padding = Padding::Valid;
  std::size_t out_h = 0, out_w = 0;
};

inline SpatialGeometry spatial_geometry(std::size_t height, std::size_t width, std::size_t kernel) {
  auto blocks = [&](Padding p) -> std::optional<SpatialGeometry> {
    std::size_t h = height, w = width;
    for (int b = 0; b < 2; ++b) {
      if (p == Padding::Valid && (h < kernel || w < kernel)) return std::nullopt;
      const auto g = ops::conv2d_geometry(h, w, kernel, 1, p);
      h = detail::ceil_half(g.out_h);
      w = detail::ceil_half(g.out_w);
    }
    return SpatialGeometry{p, h, w};
  };
  if (auto g = blocks(Padding::Valid)) return *g;
  return *blocks(Padding::Same);
}

template <class T>
class SpatialCnn {
 public:
  struct Output {
    Var feature;
    Var probs;
  };

  SpatialCnn() = default;

  SpatialCnn(const SpatialCnnConfig& config, Rng& rng) : config_(config) {
    if (config.height == 0 || config.width == 0 || config.in_channels == 0) {
      throw ValidationError("SpatialCnn: input dimensions must be positive");
    }
    if (config.classes < 2) throw ValidationError("SpatialCnn: need at least 2 classes");
    const std::size_t k = config.kernel;
    geometry_ = spatial_geometry(config.height, config.width, k);
    conv1_w_ = detail::init_weights<T>("conv1.w", {k, k, config.in_channels, config.conv1},
                                       k * k * config.in_channels, k * k * config.conv1, rng);
    conv1_b_ = detail::init_bias<T>("conv1.b", config.conv1);
    conv2_w_ = detail::init_weights<T>("conv2.w", {k, k, config.conv1, config.conv2}, k * k * config.conv1,
                                       k * k * config.conv2, rng);
    conv2_b_ = detail::init_bias<T>("conv2.b", config.conv2);
    const std::size_t flat = flattened_width();
    feature_w_ = detail::init_weights<T>("feature.w", {flat, config.feature_width}, flat, config.feature_width, rng);
    feature_b_ = detail::init_bias<T>("feature.b", config.feature_width);
    dense1_w_ = detail::init_weights<T>("dense1.w", {config.feature_width, config.dense1}, config.feature_width,
                                        config.dense1, rng);
    dense1_b_ = detail::init_bias<T>("dense1.b", config.dense1);
    dense2_w_ = detail::init_weights<T>("dense2.w", {config.dense1, config.dense2}, config.dense1, config.dense2, rng);
    dense2_b_ = detail::init_bias<T>("dense2.b", config.dense2);
    head_w_ = detail::init_weights<T>("head.w", {config.dense2, config.classes}, config.dense2, config.classes, rng);
    head_b_ = detail::init_bias<T>("head.b", config.classes);
  }

  const SpatialCnnConfig& config() const { return config_; }
  Shape input_shape() const { return {config_.height, config_.width, config_.in_channels}; }
  std::size_t feature_width() const { return config_.feature_width; }
  std::size_t classes() const { return config_.classes; }

  Padding padding() const { return geometry_.padding; }

  // Conv output after two conv blocks and two ceil-mode 2x2 pools, flattened.
  std::size_t flattened_width() const { return geometry_.out_h * geometry_.out_w * config_.conv2; }

  Output forward(Tape<T>& tape, const Tensor<T>& input, Mode mode, Rng& rng) {
    if (input.shape() != input_shape()) {
      throw ValidationError("SpatialCnn: expected input " + shape_string(input_shape()) + ", got " +
                            shape_string(input.shape()));
    }
    using namespace ops;
    Var x = tape.constant(input);
    x = relu(tape, conv2d(tape, x, tape.parameter(conv1_w_), tape.parameter(conv1_b_), 1, geometry_.padding));
    x = dropout(tape, max_pool2d(tape, x, 2), config_.dropout_conv, mode, rng);
    x = relu(tape, conv2d(tape, x, tape.parameter(conv2_w_), tape.parameter(conv2_b_), 1, geometry_.padding));
    x = dropout(tape, max_pool2d(tape, x, 2), config_.dropout_conv, mode, rng);
    Var feature = relu(tape, dense(tape, x, tape.parameter(feature_w_), tape.parameter(feature_b_)));
    Var h = relu(tape, dense(tape, feature, tape.parameter(dense1_w_), tape.parameter(dense1_b_)));
    h = dropout(tape, h, config_.dropout_dense, mode, rng);
    h = relu(tape, dense(tape, h, tape.parameter(dense2_w_), tape.parameter(dense2_b_)));
    h = dropout(tape, h, config_.dropout_dense, mode, rng);
    Var probs = softmax(tape, dense(tape, h, tape.parameter(head_w_), tape.parameter(head_b_)));
    return {feature, probs};
  }

  std::vector<Parameter<T>*> parameters() {
    return {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_, &feature_w_, &feature_b_, &dense1_w_,
            &dense1_b_, &dense2_w_, &dense2_b_, &head_w_,    &head_b_};
  }
  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<SpatialCnn*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

 private:
  SpatialCnnConfig config_;
  SpatialGeometry geometry_;
  Parameter<T> conv1_w_, conv1_b_, conv2_w_, conv2_b_, feature_w_, feature_b_;
  Parameter<T> dense1_w_, dense1_b_, dense2_w_, dense2_b_, head_w_, head_b_;
};

// ---------------------------------------------------------------------------
// Temporal CNN: stacked causal dilated convolutions over a 1-D sequence. The last
// layer has a single channel, so its activation is a length-L feature vector. The
// softmax head reads either that whole vector or its global average.

enum class TemporalHead { Dense, GlobalAverage };

inline const char* temporal_head_name(TemporalHead h) { return h == TemporalHead::Dense ? "dense" : "global_average"; }

struct TemporalCnnConfig {
  std::size_t length = 0;
  std::size_t in_channels = 1;
  std::size_t hidden_channels = 16;
  std::size_t layers = 6;
  std::size_t kernel = 5;
  std::size_t dilation_base = 2;
  std::size_t classes = 2;
  double dropout_mid = 0.25;
  double dropout_head = 0.50;
  TemporalHead head = TemporalHead::Dense;

  friend bool operator==(const TemporalCnnConfig&, const TemporalCnnConfig&) = default;
};

// dilation_l = base^l, capped at the largest power of the base whose span
// dilation * (kernel - 1) still fits inside the sequence.
inline std::vector<std::size_t> dilation_schedule(std::size_t length, std::size_t layers, std::size_t kernel,
                                                  std::size_t base) {
  if (kernel < 1 || base < 1) throw ValidationError("dilation_schedule: kernel and base must be >= 1");
  if (kernel > 1 && kernel - 1 >= length) {
    throw ValidationError("dilation_schedule: kernel " + std::to_string(kernel) + " does not fit sequence length " +
                          std::to_string(length));
  }
  std::vector<std::size_t> out;
  std::size_t d = 1;
  for (std::size_t l = 0; l < layers; ++l) {
    out.push_back(d);
    const std::size_t next = d * base;
    if (base > 1 && next * (kernel - 1) < length) d = next;
  }
  return out;
}

// 1 + (k - 1) * sum of dilations.
inline std::size_t receptive_field(std::span<const std::size_t> dilations, std::size_t kernel) {
  return 1 + (kernel - 1) * std::accumulate(dilations.begin(), dilations.end(), std::size_t{0});
}

inline Activation temporal_activation(std::size_t layer) {
  static constexpr Activation cycle[] = {Activation::Relu, Activation::Sigmoid, Activation::Tanh};
  return cycle[layer % 3];
}

template <class T>
class TemporalCnn {
 public:
  struct Output {
    Var feature;
    Var probs;
  };

  TemporalCnn() = default;

  TemporalCnn(const TemporalCnnConfig& config, Rng& rng) : config_(config) {
    if (config.layers < 1) throw ValidationError("TemporalCnn: need at least one layer");
    if (config.classes < 2) throw ValidationError("TemporalCnn: need at least 2 classes");
    dilations_ = dilation_schedule(config.length, config.layers, config.kernel, config.dilation_base);
    const std::size_t k = config.kernel;
    for (std::size_t l = 0; l < config.layers; ++l) {
      const std::size_t cin = l == 0 ? config.in_channels : config.hidden_channels;
      const std::size_t cout = l + 1 == config.layers ? 1 : config.hidden_channels;
      const std::string tag = "tconv" + std::to_string(l + 1);
      weights_.push_back(detail::init_weights<T>(tag + ".w", {k, cin, cout}, k * cin, k * cout, rng));
      biases_.push_back(detail::init_bias<T>(tag + ".b", cout));
    }
    const std::size_t head_in = config.head == TemporalHead::Dense ? config.length : 1;
    head_w_ = detail::init_weights<T>("head.w", {head_in, config.classes}, head_in, config.classes, rng);
    head_b_ = detail::init_bias<T>("head.b", config.classes);
  }

  const TemporalCnnConfig& config() const { return config_; }
  const std::vector<std::size_t>& dilations() const { return dilations_; }
  std::size_t feature_width() const { return config_.length; }
  std::size_t classes() const { return config_.classes; }
  Shape input_shape() const { return {config_.length, config_.in_channels}; }

  Output forward(Tape<T>& tape, const Tensor<T>& input, Mode mode, Rng& rng) {
    Tensor<T> x_in = input;
    if (input.rank() == 1 && config_.in_channels == 1) x_in = input.reshaped({input.size(), 1});
    if (x_in.shape() != input_shape()) {
      throw ValidationError("TemporalCnn: expected input " + shape_string(input_shape()) + ", got " +
                            shape_string(input.shape()));
    }
    using namespace ops;
    Var x = tape.constant(std::move(x_in));
    const std::size_t middle = (config_.layers - 1) / 2;
    for (std::size_t l = 0; l < config_.layers; ++l) {
      x = dilated_conv1d(tape, x, tape.parameter(weights_[l]), tape.parameter(biases_[l]), dilations_[l]);
      x = activation(tape, x, temporal_activation(l));
      if (l == middle && l + 1 < config_.layers) x = dropout(tape, x, config_.dropout_mid, mode, rng);
    }
    Var feature = reshape(tape, x, {config_.length});
    Var h = dropout(tape, feature, config_.dropout_head, mode, rng);
    if (config_.head == TemporalHead::GlobalAverage) {
      h = scale(tape, sum(tape, h), static_cast<T>(1.0 / static_cast<double>(config_.length)));
    }
    Var probs = softmax(tape, dense(tape, h, tape.parameter(head_w_), tape.parameter(head_b_)));
    return {feature, probs};
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<TemporalCnn*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

 private:
  TemporalCnnConfig config_;
  std::vector<std::size_t> dilations_;
  std::vector<Parameter<T>> weights_, biases_;
  Parameter<T> head_w_, head_b_;
};

// ---------------------------------------------------------------------------
// Deep autoencoder, 3 encoding + 3 decoding dense layers:
//   in -> w1 (relu) -> w2 (relu) -> B (sigmoid, the code) -> w2 (sigmoid) -> w1 (relu) -> in (tanh)

struct DaeConfig {
  std::size_t input_width = 0;
  std::size_t hidden1 = 1024;
  std::size_t hidden2 = 512;
  std::size_t bottleneck = 256;
  double dropout = 0.25;

  // Hidden widths shrink in proportion when the input is narrower than 1024.
  static DaeConfig for_input(std::size_t input_width, std::size_t bottleneck, std::size_t hidden1 = 1024,
                             std::size_t hidden2 = 512) {
    DaeConfig c;
    c.input_width = input_width;
    c.bottleneck = bottleneck;
    const double s = std::min(1.0, static_cast<double>(input_width) / static_cast<double>(hidden1));
    c.hidden1 = std::max<std::size_t>(bottleneck, static_cast<std::size_t>(std::lround(hidden1 * s)));
    c.hidden2 = std::max<std::size_t>(bottleneck, static_cast<std::size_t>(std::lround(hidden2 * s)));
    return c;
  }

  friend bool operator==(const DaeConfig&, const DaeConfig&) = default;
};

template <class T>
class DeepAutoencoder {
 public:
  struct Output {
    Var code;
    Var reconstruction;
  };

  DeepAutoencoder() = default;

  DeepAutoencoder(const DaeConfig& config, Rng& rng) : config_(config) {
    if (config.input_width == 0 || config.bottleneck == 0 || config.hidden1 == 0 || config.hidden2 == 0) {
      throw ValidationError("DeepAutoencoder: widths must be positive");
    }
    const std::size_t widths[] = {config.input_width, config.hidden1, config.hidden2, config.bottleneck,
                                  config.hidden2,     config.hidden1, config.input_width};
    static constexpr const char* names[] = {"enc1", "enc2", "enc3", "dec1", "dec2", "dec3"};
    for (std::size_t l = 0; l < 6; ++l) {
      weights_.push_back(detail::init_weights<T>(std::string(names[l]) + ".w", {widths[l], widths[l + 1]}, widths[l],
                                                 widths[l + 1], rng));
      biases_.push_back(detail::init_bias<T>(std::string(names[l]) + ".b", widths[l + 1]));
    }
  }

  const DaeConfig& config() const { return config_; }
  std::size_t bottleneck() const { return config_.bottleneck; }
  std::size_t input_width() const { return config_.input_width; }

  Output forward(Tape<T>& tape, const Tensor<T>& input, Mode mode, Rng& rng) {
    if (input.size() != config_.input_width) {
      throw ValidationError("DeepAutoencoder: expected input width " + std::to_string(config_.input_width) +
                            ", got " + std::to_string(input.size()));
    }
    static constexpr Activation acts[] = {Activation::Relu,    Activation::Relu, Activation::Sigmoid,
                                          Activation::Sigmoid, Activation::Relu, Activation::Tanh};
    // Dropout after the two outer encoder layers and the first decoder layer.
    static constexpr bool drop_after[] = {true, true, false, true, false, false};
    Var x = tape.constant(input.reshaped({input.size()}));
    Var code{};
    for (std::size_t l = 0; l < 6; ++l) {
      x = ops::activation(tape, ops::dense(tape, x, tape.parameter(weights_[l]), tape.parameter(biases_[l])), acts[l]);
      if (l == 2) code = x;
      if (drop_after[l]) x = ops::dropout(tape, x, config_.dropout, mode, rng);
    }
    return {code, x};
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<DeepAutoencoder*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

 private:
  DaeConfig config_;
  std::vector<Parameter<T>> weights_, biases_;
};

// ---------------------------------------------------------------------------
// Training and feature extraction.

struct TrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  // Eval-mode mean loss over the training set: entry 0 before training, entry e
  // after epoch e.
  std::vector<double> loss;
  // Mean train-mode (dropout active) minibatch loss per epoch.
  std::vector<double> train_loss;
};

namespace detail {

template <class T>
Tensor<T> one_hot(std::size_t label, std::size_t classes) {
  Tensor<T> t(Shape{classes});
  t[label] = T{1};
  return t;
}

template <class Net, class Scalar, class LossFn>
TrainHistory run_training(Net& net, std::size_t count, const TrainConfig& config, LossFn&& loss_of) {
  using T = Scalar;
  TrainHistory history;
  Rng root(config.seed);
  Rng order_rng = root.fork("order");
  Rng dropout_rng = root.fork("dropout");
  Rng unused = root.fork("eval");

  auto eval_loss = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      Tape<T> tape;
      total += tape.value(loss_of(tape, i, Mode::Eval, unused))[0];
    }
    return total / static_cast<double>(count);
  };

  auto params = net.parameters();
  AdamState<T> adam;
  adam.learning_rate = config.learning_rate;
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);

  history.loss.push_back(eval_loss());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, order_rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < count; start += batch) {
      const std::size_t stop = std::min(count, start + batch);
      const T scale = static_cast<T>(1.0 / static_cast<double>(stop - start));
      for (auto* p : params) p->zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        Tape<T> tape;
        Var loss = loss_of(tape, order[i], Mode::Train, dropout_rng);
        epoch_total += tape.value(loss)[0];
        tape.backward(ops::scale(tape, loss, scale));
      }
      adam_step<T>(params, adam);
    }
    history.train_loss.push_back(epoch_total / static_cast<double>(count));
    history.loss.push_back(eval_loss());
    if (!std::isfinite(history.loss.back())) throw NumericError("training diverged: non-finite loss");
  }
  return history;
}

}  // namespace detail

// Cross-entropy training of a SpatialCnn or TemporalCnn on integer class labels.
template <class Net, class T>
TrainHistory train_supervised(Net& net, const std::vector<Tensor<T>>& inputs, const std::vector<int>& labels,
                              const TrainConfig& config) {
  if (inputs.size() != labels.size()) throw ValidationError("train_supervised: inputs and labels differ in length");
  if (inputs.empty()) throw ValidationError("train_supervised: empty dataset");
  std::vector<std::size_t> counts(net.classes(), 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= net.classes()) {
      throw ValidationError("train_supervised: label " + std::to_string(y) + " outside 0.." +
                            std::to_string(net.classes() - 1));
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw ValidationError("train_supervised: dataset contains a single class");
  }
  std::vector<Tensor<T>> targets;
  targets.reserve(labels.size());
  for (int y : labels) targets.push_back(detail::one_hot<T>(static_cast<std::size_t>(y), net.classes()));

  return detail::run_training<Net, T>(net, inputs.size(), config,
                                      [&](Tape<T>& tape, std::size_t i, Mode mode, Rng& rng) {
                                        auto out = net.forward(tape, inputs[i], mode, rng);
                                        return ops::cross_entropy(tape, out.probs, targets[i]);
                                      });
}

// Unsupervised reconstruction training (mean squared error).
template <class T>
TrainHistory train_autoencoder(DeepAutoencoder<T>& dae, const std::vector<Tensor<T>>& inputs,
                               const TrainConfig& config) {
  if (inputs.empty()) throw ValidationError("train_autoencoder: empty dataset");
  return detail::run_training<DeepAutoencoder<T>, T>(
      dae, inputs.size(), config, [&](Tape<T>& tape, std::size_t i, Mode mode, Rng& rng) {
        auto out = dae.forward(tape, inputs[i], mode, rng);
        return ops::mean_squared_error(tape, out.reconstruction, inputs[i]);
      });
}

// Penultimate feature vector in eval mode (dropout disabled).
template <class Net, class T>
std::vector<T> extract_penultimate(Net& net, const Tensor<T>& input) {
  Tape<T> tape;
  Rng unused(0);
  auto out = net.forward(tape, input, Mode::Eval, unused);
  const auto& v = tape.value(out.feature);
  return {v.values().begin(), v.values().end()};
}

template <class Net, class T>
std::vector<T> predict_probabilities(Net& net, const Tensor<T>& input) {
  Tape<T> tape;
  Rng unused(0);
  auto out = net.forward(tape, input, Mode::Eval, unused);
  const auto& v = tape.value(out.probs);
  return {v.values().begin(), v.values().end()};
}

// Bottleneck code in eval mode.
template <class T>
std::vector<T> encode(DeepAutoencoder<T>& dae, const Tensor<T>& fused) {
  Tape<T> tape;
  Rng unused(0);
  auto out = dae.forward(tape, fused, Mode::Eval, unused);
  const auto& v = tape.value(out.code);
  return {v.values().begin(), v.values().end()};
}

template <class T>
std::vector<T> reconstruct(DeepAutoencoder<T>& dae, const Tensor<T>& fused) {
  Tape<T> tape;
  Rng unused(0);
  auto out = dae.forward(tape, fused, Mode::Eval, unused);
  const auto& v = tape.value(out.reconstruction);
  return {v.values().begin(), v.values().end()};
}

// Concatenation, CNN features first.
template <class T>
std::vector<T> fuse(const std::vector<T>& cnn_feature, const std::vector<T>& tcnn_feature) {
  std::vector<T> out;
  out.reserve(cnn_feature.size() + tcnn_feature.size());
  out.insert(out.end(), cnn_feature.begin(), cnn_feature.end());
  out.insert(out.end(), tcnn_feature.begin(), tcnn_feature.end());
  return out;
}

// Per-dimension z-scoring fit on the training split. Constant dimensions keep
// unit scale.
class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(std::vector<double> mean, std::vector<double> scale) : mean_(std::move(mean)), scale_(std::move(scale)) {
    if (mean_.size() != scale_.size()) throw ValidationError("Standardizer: mean and scale widths differ");
  }

  template <class T>
  static Standardizer fit(const std::vector<std::vector<T>>& rows) {
    if (rows.empty()) throw ValidationError("Standardizer: cannot fit on an empty set");
    const std::size_t d = rows.front().size();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (const auto& r : rows) {
      if (r.size() != d) throw ValidationError("Standardizer: ragged rows");
      for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (auto& m : mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows)
      for (std::size_t j = 0; j < d; ++j) var[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
    std::vector<double> scale(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(rows.size()));
      scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return Standardizer(std::move(mean), std::move(scale));
  }

  template <class T>
  std::vector<T> transform(const std::vector<T>& row) const {
    if (row.size() != mean_.size()) {
      throw ValidationError("Standardizer: expected width " + std::to_string(mean_.size()) + ", got " +
                            std::to_string(row.size()));
    }
    std::vector<T> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = static_cast<T>((row[j] - mean_[j]) / scale_[j]);
    return out;
  }

  std::size_t width() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& scale() const { return scale_; }

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;
};

// Per-dimension min-max scaling to [0, 1], fit on the training split. Constant
// dimensions map to 0.
class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(std::vector<double> minimum, std::vector<double> range)
      : min_(std::move(minimum)), range_(std::move(range)) {
    if (min_.size() != range_.size()) throw ValidationError("MinMaxScaler: min and range widths differ");
  }

  template <class T>
  static MinMaxScaler fit(const std::vector<std::vector<T>>& rows) {
    if (rows.empty()) throw ValidationError("MinMaxScaler: cannot fit on an empty set");
    const std::size_t d = rows.front().size();
    std::vector<double> lo(d, std::numeric_limits<double>::infinity());
    std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
    for (const auto& r : rows) {
      if (r.size() != d) throw ValidationError("MinMaxScaler: ragged rows");
      for (std::size_t j = 0; j < d; ++j) {
        lo[j] = std::min<double>(lo[j], r[j]);
        hi[j] = std::max<double>(hi[j], r[j]);
      }
    }
    std::vector<double> range(d);
    for (std::size_t j = 0; j < d; ++j) range[j] = hi[j] > lo[j] ? hi[j] - lo[j] : 1.0;
    return MinMaxScaler(std::move(lo), std::move(range));
  }

  template <class T>
  std::vector<T> transform(const std::vector<T>& row) const {
    if (row.size() != min_.size()) {
      throw ValidationError("MinMaxScaler: expected width " + std::to_string(min_.size()) + ", got " +
                            std::to_string(row.size()));
    }
    std::vector<T> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = static_cast<T>((row[j] - min_[j]) / range_[j]);
    return out;
  }

  std::size_t width() const { return min_.size(); }
  const std::vector<double>& minimum() const { return min_; }
  const std::vector<double>& range() const { return range_; }

 private:
  std::vector<double> min_;
  std::vector<double> range_;
};

}  // namespace phonodec
