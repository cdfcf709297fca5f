// Multi-width temporal convolution over DenseImage rows with max-over-time
// pooling, plus the matching backward pass and per-window response profiles.
//
// A width-h filter spans h consecutive rows and the full feature dimension, so
// window i sees rows [i, i+h-1] and nothing else. Stride 1, no padding: a
// width-h map over n rows has n-h+1 columns.
#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "din/core.hpp"

namespace din {

/// Filters of one width. Row m of `weights` is filter m flattened frame-major
/// over h frames x k dims, so a window dot product is one contiguous inner product.
struct ScaleFilters {
  std::size_t width = 0;
  Matrix weights;  // M x (h*k)
  Vector bias;     // M
};

struct TemporalFilterBank {
  std::size_t channels = 0;
  std::vector<ScaleFilters> scales;

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> out;
    for (const auto& s : scales) out.push_back(s.width);
    return out;
  }

  /// Position of width h in `scales`, if present.
  std::optional<std::size_t> find(std::size_t h) const {
    for (std::size_t i = 0; i < scales.size(); ++i)
      if (scales[i].width == h) return i;
    return std::nullopt;
  }
};

/// Element (m, i) is the rectified response of filter m on window i.
struct ScaleFeatureMap {
  std::size_t width = 0;
  Matrix values;          // M x (n-h+1)
  Matrix pre_activation;  // same shape, before the rectifier
};

struct PooledScaleFeature {
  std::size_t width = 0;
  Vector values;
  std::vector<std::size_t> argmax_positions;
};

inline ScaleFeatureMap conv_scale_forward(const Matrix& X, const ScaleFilters& filters) {
  const std::size_t n = X.rows();
  const std::size_t k = X.cols();
  const std::size_t h = filters.width;
  if (h == 0 || h > n)
    throw std::invalid_argument("conv_scale_forward: width " + std::to_string(h) +
                                " invalid for " + std::to_string(n) + " frames");
  if (filters.weights.cols() != h * k || filters.bias.size() != filters.weights.rows())
    throw std::invalid_argument("conv_scale_forward: filter shape does not match width x dim");

  const std::size_t channels = filters.weights.rows();
  const std::size_t windows = n - h + 1;
  ScaleFeatureMap fmap{h, Matrix(channels, windows), Matrix(channels, windows)};
  const auto image = X.values();
  for (std::size_t i = 0; i < windows; ++i) {
    // Rows i..i+h-1 are contiguous in row-major storage.
    const auto window = image.subspan(i * k, h * k);
    for (std::size_t m = 0; m < channels; ++m) {
      const double z = dot(filters.weights.row(m), window) + filters.bias[m];
      fmap.pre_activation(m, i) = z;
      fmap.values(m, i) = std::max(0.0, z);
    }
  }
  return fmap;
}

/// Per-channel maximum; ties go to the smallest window index.
inline PooledScaleFeature temporal_max_pool(const ScaleFeatureMap& fmap) {
  if (fmap.values.cols() == 0) throw std::invalid_argument("temporal_max_pool: empty feature map");
  const std::size_t channels = fmap.values.rows();
  PooledScaleFeature pooled{fmap.width, Vector(channels), std::vector<std::size_t>(channels)};
  for (std::size_t m = 0; m < channels; ++m) {
    const auto row = fmap.values.row(m);
    const std::size_t best = argmax(row);
    pooled.values[m] = row[best];
    pooled.argmax_positions[m] = best;
  }
  return pooled;
}

/// Everything the backward pass needs from one forward call.
struct MultiscaleCache {
  Matrix input;
  std::vector<ScaleFeatureMap> maps;
  std::vector<PooledScaleFeature> pooled;
};

inline MultiscaleCache multiscale_forward(const Matrix& X, const TemporalFilterBank& bank) {
  MultiscaleCache cache;
  cache.input = X;
  cache.maps.reserve(bank.scales.size());
  cache.pooled.reserve(bank.scales.size());
  for (const auto& filters : bank.scales) {
    cache.maps.push_back(conv_scale_forward(X, filters));
    cache.pooled.push_back(temporal_max_pool(cache.maps.back()));
  }
  return cache;
}

struct MultiscaleGradients {
  TemporalFilterBank bank;
  Matrix input;
};

/// Zero-valued bank with the same shapes as `like`.
inline TemporalFilterBank zeros_like(const TemporalFilterBank& like) {
  TemporalFilterBank out{like.channels, {}};
  for (const auto& s : like.scales)
    out.scales.push_back({s.width, Matrix(s.weights.rows(), s.weights.cols()),
                          Vector(s.bias.size(), 0.0)});
  return out;
}

/// Max-pool routes each channel's gradient to its argmax window only; the
/// rectifier passes it where the pre-activation is positive.
inline MultiscaleGradients multiscale_backward(const MultiscaleCache& cache,
                                               const TemporalFilterBank& bank,
                                               std::span<const Vector> grad_pooled) {
  if (grad_pooled.size() != bank.scales.size() || cache.maps.size() != bank.scales.size())
    throw std::invalid_argument("multiscale_backward: scale count does not match cache");
  const std::size_t k = cache.input.cols();
  MultiscaleGradients g{zeros_like(bank), Matrix(cache.input.rows(), k)};
  const auto image = cache.input.values();
  auto grad_image = g.input.values();

  for (std::size_t s = 0; s < bank.scales.size(); ++s) {
    const auto& filters = bank.scales[s];
    const auto& pooled = cache.pooled[s];
    const auto& fmap = cache.maps[s];
    const std::size_t h = filters.width;
    if (grad_pooled[s].size() != filters.weights.rows() || pooled.width != h ||
        fmap.values.rows() != filters.weights.rows())
      throw std::invalid_argument("multiscale_backward: gradient shape mismatch for width " +
                                  std::to_string(h));
    auto& gs = g.bank.scales[s];
    for (std::size_t m = 0; m < filters.weights.rows(); ++m) {
      const std::size_t i = pooled.argmax_positions[m];
      if (fmap.pre_activation(m, i) <= 0.0) continue;
      const double upstream = grad_pooled[s][m];
      if (upstream == 0.0) continue;
      const auto window = image.subspan(i * k, h * k);
      auto grad_window = grad_image.subspan(i * k, h * k);
      const auto w = filters.weights.row(m);
      auto gw = gs.weights.row(m);
      for (std::size_t j = 0; j < h * k; ++j) {
        gw[j] += upstream * window[j];
        grad_window[j] += upstream * w[j];
      }
      gs.bias[m] += upstream;
    }
  }
  return g;
}

/// Per-window response of one channel (or the channel mean) for one width.
/// Window i covers sampled frames [first_frame(i), first_frame(i)+h-1].
struct ResponseProfile {
  std::size_t width = 0;
  Vector intensities;
  std::size_t argmax_window = 0;

  std::size_t first_frame() const noexcept { return argmax_window; }
  std::size_t last_frame() const noexcept { return argmax_window + width - 1; }
};

inline ResponseProfile response_profile(const Matrix& X, const TemporalFilterBank& bank,
                                        std::size_t h, std::optional<std::size_t> channel) {
  const auto pos = bank.find(h);
  if (!pos) throw std::invalid_argument("response_profile: width " + std::to_string(h) + " not in bank");
  const ScaleFeatureMap fmap = conv_scale_forward(X, bank.scales[*pos]);
  const std::size_t windows = fmap.values.cols();
  ResponseProfile profile{h, Vector(windows, 0.0), 0};
  if (channel) {
    if (*channel >= fmap.values.rows())
      throw std::invalid_argument("response_profile: channel " + std::to_string(*channel) +
                                  " out of range");
    const auto row = fmap.values.row(*channel);
    profile.intensities.assign(row.begin(), row.end());
  } else {
    const double scale = 1.0 / static_cast<double>(fmap.values.rows());
    for (std::size_t m = 0; m < fmap.values.rows(); ++m)
      for (std::size_t i = 0; i < windows; ++i) profile.intensities[i] += fmap.values(m, i);
    for (double& v : profile.intensities) v *= scale;
  }
  profile.argmax_window = argmax(profile.intensities);
  return profile;
}

}  // namespace din
