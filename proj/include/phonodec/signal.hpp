#pragma once

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <vector>

#include "phonodec/error.hpp"
#include "phonodec/phonology.hpp"

namespace phonodec {

// One imagined-speech recording, channels x samples, row-major.
struct EegTrial {
  std::string subject_id;
  Token token = Token::IY;
  std::size_t channels = 0;
  std::size_t samples = 0;
  std::vector<double> data;

  double at(std::size_t c, std::size_t t) const { return data[c * samples + t]; }
  double& at(std::size_t c, std::size_t t) { return data[c * samples + t]; }

  void validate() const {
    if (channels < 2) throw ValidationError("trial needs at least 2 channels, got " + std::to_string(channels));
    if (samples < 2) throw ValidationError("trial needs at least 2 samples, got " + std::to_string(samples));
    if (data.size() != channels * samples) {
      throw ValidationError("trial data holds " + std::to_string(data.size()) + " values, expected " +
                            std::to_string(channels * samples));
    }
    for (double v : data) {
      if (!std::isfinite(v)) throw ValidationError("trial of subject " + subject_id + " contains non-finite samples");
    }
  }
};

// Square channel cross-covariance at a fixed lag, row-major.
struct CovMatrix {
  std::size_t order = 0;
  int lag = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * order + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * order + j]; }

  double trace() const {
    double s = 0.0;
    for (std::size_t i = 0; i < order; ++i) s += at(i, i);
    return s;
  }
};

namespace detail {

inline std::vector<double> channel_means(const EegTrial& trial) {
  std::vector<double> mean(trial.channels, 0.0);
  for (std::size_t c = 0; c < trial.channels; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < trial.samples; ++t) s += trial.at(c, t);
    mean[c] = s / static_cast<double>(trial.samples);
  }
  return mean;
}

}  // namespace detail

// Removes each channel's mean.
inline EegTrial standardize_channels(const EegTrial& trial) {
  if (trial.samples < 2) throw ValidationError("standardize_channels: need at least 2 samples");
  EegTrial out = trial;
  const auto mean = detail::channel_means(trial);
  for (std::size_t c = 0; c < trial.channels; ++c) {
    for (std::size_t t = 0; t < trial.samples; ++t) {
      out.at(c, t) = trial.at(c, t) - mean[c];
    }
  }
  return out;
}

// entry(c1, c2) = 1/(T-|lag|) * sum_t (x_c1(t) - mu_c1)(x_c2(t + lag) - mu_c2), over
// every t with both indices inside the trial. Means are taken over the full trial.
inline CovMatrix channel_cross_covariance(const EegTrial& trial, int lag = 0) {
  const std::size_t abs_lag = static_cast<std::size_t>(std::abs(lag));
  if (abs_lag >= trial.samples) {
    throw ValidationError("channel_cross_covariance: |lag| = " + std::to_string(abs_lag) +
                          " must be below the sample count " + std::to_string(trial.samples));
  }
  const std::size_t c_count = trial.channels;
  const std::size_t n = trial.samples - abs_lag;
  const auto mean = detail::channel_means(trial);

  // Centered copy in double so the pair loop is a plain dot product.
  std::vector<double> centered(c_count * trial.samples);
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t t = 0; t < trial.samples; ++t) {
      centered[c * trial.samples + t] = trial.at(c, t) - mean[c];
    }
  }
  // For lag >= 0 the first series starts at 0 and the second at lag; negative lags
  // swap the offsets.
  const std::size_t off1 = lag >= 0 ? 0 : abs_lag;
  const std::size_t off2 = lag >= 0 ? abs_lag : 0;

  CovMatrix m{c_count, lag, std::vector<double>(c_count * c_count, 0.0)};
  for (std::size_t c1 = 0; c1 < c_count; ++c1) {
    const double* a = centered.data() + c1 * trial.samples + off1;
    const std::size_t start = lag == 0 ? c1 : 0;
    for (std::size_t c2 = start; c2 < c_count; ++c2) {
      const double* b = centered.data() + c2 * trial.samples + off2;
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += a[t] * b[t];
      m.at(c1, c2) = s / static_cast<double>(n);
      if (lag == 0) m.at(c2, c1) = m.at(c1, c2);
    }
  }
  return m;
}

inline std::size_t triangular_length(std::size_t order) { return order * (order + 1) / 2; }

// Row-major walk over (i, j) with j <= i, diagonal included.
inline std::vector<double> lower_triangular_flatten(const CovMatrix& m) {
  if (m.values.size() != m.order * m.order) throw ValidationError("lower_triangular_flatten: matrix is not square");
  std::vector<double> out;
  out.reserve(triangular_length(m.order));
  for (std::size_t i = 0; i < m.order; ++i) {
    for (std::size_t j = 0; j <= i; ++j) out.push_back(m.at(i, j));
  }
  return out;
}

// Symmetric matrix rebuilt from its lower-triangular flattening.
inline CovMatrix symmetric_from_lower(const std::vector<double>& flat) {
  std::size_t order = 0;
  while (triangular_length(order) < flat.size()) ++order;
  if (triangular_length(order) != flat.size()) {
    throw ValidationError("symmetric_from_lower: length " + std::to_string(flat.size()) + " is not triangular");
  }
  CovMatrix m{order, 0, std::vector<double>(order * order, 0.0)};
  std::size_t k = 0;
  for (std::size_t i = 0; i < order; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      m.at(i, j) = flat[k];
      m.at(j, i) = flat[k];
      ++k;
    }
  }
  return m;
}

}  // namespace phonodec
