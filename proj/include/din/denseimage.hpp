// Frame sampling and the DenseImage encoding: n sampled frames, each passed
// through a trainable linear reduction, stacked as rows in temporal order.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "din/core.hpp"

namespace din {

/// Per-frame backbone features, one frame per row in temporal order.
struct FrameFeatureSequence {
  Matrix features;

  std::size_t num_frames() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
};

inline void validate(const FrameFeatureSequence& seq) {
  if (seq.num_frames() == 0 || seq.dim() == 0)
    throw std::invalid_argument("FrameFeatureSequence: empty sequence");
  if (!all_finite(seq.features.values()))
    throw std::invalid_argument("FrameFeatureSequence: non-finite feature value");
}

/// Linear D -> k map applied to every sampled frame (no activation).
struct ReductionLayer {
  Matrix weights;  // D x k
  Vector bias;     // k

  std::size_t input_dim() const noexcept { return weights.rows(); }
  std::size_t output_dim() const noexcept { return weights.cols(); }
};

enum class SamplingMode { train_random, eval_center };

/// n x k matrix; row i is the reduced feature of the i-th sampled frame.
struct DenseImage {
  Matrix X;
  std::vector<std::size_t> frame_indices;

  std::size_t frames() const noexcept { return X.rows(); }
  std::size_t dim() const noexcept { return X.cols(); }
};

/// Segment s covers frames [floor(sT/n), floor((s+1)T/n)). Non-empty segments
/// yield their center (eval) or a uniform draw (train). An empty segment, which
/// only occurs when T < n, yields min(start, T-1), so short videos repeat frames
/// and indices stay non-decreasing.
inline std::vector<std::size_t> sample_segments(std::size_t total_frames, std::size_t n,
                                                SamplingMode mode, Rng& rng) {
  if (total_frames == 0 || n == 0)
    throw std::invalid_argument("sample_segments: frame count and segment count must be positive");
  std::vector<std::size_t> indices(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t start = s * total_frames / n;
    const std::size_t end = (s + 1) * total_frames / n;
    if (end == start) {
      indices[s] = std::min(start, total_frames - 1);
    } else if (mode == SamplingMode::eval_center) {
      indices[s] = start + (end - start - 1) / 2;
    } else {
      indices[s] = start + rng.uniform_index(end - start);
    }
  }
  return indices;
}

inline Vector reduce_frame(std::span<const double> raw, const ReductionLayer& layer) {
  if (raw.size() != layer.input_dim() || layer.bias.size() != layer.output_dim())
    throw std::invalid_argument("reduce_frame: expected input of length " +
                                std::to_string(layer.input_dim()) + ", got " +
                                std::to_string(raw.size()));
  Vector out = layer.bias;
  for (std::size_t d = 0; d < raw.size(); ++d) {
    const double x = raw[d];
    const auto w = layer.weights.row(d);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += x * w[j];
  }
  return out;
}

inline DenseImage encode(const FrameFeatureSequence& seq, const ReductionLayer& layer,
                         std::size_t n, SamplingMode mode, Rng& rng) {
  validate(seq);
  DenseImage image;
  image.frame_indices = sample_segments(seq.num_frames(), n, mode, rng);
  image.X = Matrix(n, layer.output_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const Vector reduced = reduce_frame(seq.features.row(image.frame_indices[i]), layer);
    std::copy(reduced.begin(), reduced.end(), image.X.row(i).begin());
  }
  return image;
}

struct ReductionGradients {
  Matrix weights;  // D x k
  Vector bias;     // k
  Vector input;    // D
};

inline ReductionGradients reduce_backward(std::span<const double> raw, const ReductionLayer& layer,
                                          std::span<const double> grad_out) {
  if (raw.size() != layer.input_dim() || grad_out.size() != layer.output_dim())
    throw std::invalid_argument("reduce_backward: shape mismatch with reduction layer");
  ReductionGradients g{Matrix(raw.size(), grad_out.size()),
                       Vector(grad_out.begin(), grad_out.end()), Vector(raw.size(), 0.0)};
  for (std::size_t d = 0; d < raw.size(); ++d) {
    auto gw = g.weights.row(d);
    for (std::size_t j = 0; j < grad_out.size(); ++j) gw[j] = raw[d] * grad_out[j];
    g.input[d] = dot(layer.weights.row(d), grad_out);
  }
  return g;
}

/// Accumulates reduction-layer gradients for every row of a DenseImage whose
/// upstream gradient is `grad_image`, without materializing per-row outer products.
inline void accumulate_reduction_gradients(const FrameFeatureSequence& seq, const DenseImage& image,
                                           const Matrix& grad_image, ReductionLayer& grads) {
  for (std::size_t i = 0; i < image.frames(); ++i) {
    const auto raw = seq.features.row(image.frame_indices[i]);
    const auto g = grad_image.row(i);
    for (std::size_t d = 0; d < raw.size(); ++d) {
      auto gw = grads.weights.row(d);
      for (std::size_t j = 0; j < g.size(); ++j) gw[j] += raw[d] * g[j];
    }
    for (std::size_t j = 0; j < g.size(); ++j) grads.bias[j] += g[j];
  }
}

}  // namespace din
