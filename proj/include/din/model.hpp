// Full DenseImage network: reduction layer, temporal filter bank and per-width
// heads, with per-sample forward/backward. Also an order-invariant baseline
// (mean frame -> linear head) trained through the same optimizer.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "din/classifier.hpp"
#include "din/core.hpp"
#include "din/denseimage.hpp"
#include "din/temporal_conv.hpp"

namespace din {

/// D raw dims, k reduced dims, n sampled frames, widths H, M channels, C classes.
struct ModelShape {
  std::size_t raw_dim = 1024;
  std::size_t reduced_dim = 256;
  std::size_t frames = 8;
  std::vector<std::size_t> widths{2, 3, 4, 5, 6};
  std::size_t channels = 256;
  std::size_t classes = 27;

  bool operator==(const ModelShape&) const = default;
};

inline void validate(const ModelShape& s) {
  if (s.raw_dim == 0 || s.reduced_dim == 0 || s.frames == 0 || s.channels == 0 || s.classes == 0)
    throw std::invalid_argument("ModelShape: all dimensions must be positive");
  if (s.reduced_dim > s.raw_dim)
    throw std::invalid_argument("ModelShape: reduced dim exceeds raw dim");
  if (s.widths.empty()) throw std::invalid_argument("ModelShape: no filter widths");
  for (std::size_t i = 0; i < s.widths.size(); ++i) {
    const std::size_t h = s.widths[i];
    if (h < 2 || h > s.frames)
      throw std::invalid_argument("ModelShape: width " + std::to_string(h) + " outside [2, " +
                                  std::to_string(s.frames) + "]");
    for (std::size_t j = 0; j < i; ++j)
      if (s.widths[j] == h) throw std::invalid_argument("ModelShape: duplicate width");
  }
}

/// Named view of one trainable tensor. `decays` is false for biases.
struct TensorRef {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<double> values;
  bool decays = true;
};

struct ModelParams {
  ModelShape shape;
  ReductionLayer reduction;
  TemporalFilterBank bank;
  std::vector<ScaleHead> heads;
};

/// Zero-filled parameters of the given shape.
inline ModelParams zero_model(const ModelShape& shape) {
  validate(shape);
  ModelParams p;
  p.shape = shape;
  p.reduction = {Matrix(shape.raw_dim, shape.reduced_dim), Vector(shape.reduced_dim, 0.0)};
  p.bank.channels = shape.channels;
  for (std::size_t h : shape.widths) {
    p.bank.scales.push_back(
        {h, Matrix(shape.channels, h * shape.reduced_dim), Vector(shape.channels, 0.0)});
    p.heads.push_back({h, Matrix(shape.classes, shape.channels), Vector(shape.classes, 0.0)});
  }
  return p;
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
inline ModelParams init_model(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p = zero_model(shape);
  Rng rng(seed);
  p.reduction.weights = glorot_uniform(rng, shape.raw_dim, shape.reduced_dim, shape.raw_dim,
                                       shape.reduced_dim);
  for (auto& s : p.bank.scales)
    s.weights = glorot_uniform(rng, s.width * shape.reduced_dim, shape.channels, shape.channels,
                               s.width * shape.reduced_dim);
  for (auto& h : p.heads)
    h.weights = glorot_uniform(rng, shape.channels, shape.classes, shape.classes, shape.channels);
  return p;
}

inline ModelParams zeros_like(const ModelParams& p) { return zero_model(p.shape); }

/// Tensors in a fixed order: reduction, then per width the filters and its head.
inline std::vector<TensorRef> tensors(ModelParams& p) {
  auto mat = [](std::string name, Matrix& m) {
    return TensorRef{std::move(name), m.rows(), m.cols(), m.values(), true};
  };
  auto vec = [](std::string name, Vector& v) {
    return TensorRef{std::move(name), 1, v.size(), std::span<double>(v), false};
  };
  std::vector<TensorRef> out;
  out.push_back(mat("reduction.weights", p.reduction.weights));
  out.push_back(vec("reduction.bias", p.reduction.bias));
  for (auto& s : p.bank.scales) {
    const std::string h = std::to_string(s.width);
    out.push_back(mat("conv" + h + ".weights", s.weights));
    out.push_back(vec("conv" + h + ".bias", s.bias));
  }
  for (auto& hd : p.heads) {
    const std::string h = std::to_string(hd.width);
    out.push_back(mat("head" + h + ".weights", hd.weights));
    out.push_back(vec("head" + h + ".bias", hd.bias));
  }
  return out;
}

inline std::size_t scalar_count(ModelParams& p) {
  std::size_t total = 0;
  for (const auto& t : tensors(p)) total += t.values.size();
  return total;
}

/// Per-sample forward options. `keep_probability` < 1 draws a fresh dropout
/// mask per width from the sample's rng; `masks`, when set, overrides that.
struct ForwardOptions {
  SamplingMode sampling = SamplingMode::eval_center;
  double keep_probability = 1.0;
  const std::vector<DropoutMask>* masks = nullptr;
};

/// Everything computed by one forward pass, kept for backward and inspection.
struct ForwardTrace {
  DenseImage image;
  MultiscaleCache conv;
  std::vector<DropoutMask> masks;
  ClassScores scores;
};

inline ForwardTrace forward(const ModelParams& p, const FrameFeatureSequence& seq,
                            const ForwardOptions& options, Rng& rng) {
  if (seq.dim() != p.shape.raw_dim)
    throw std::invalid_argument("forward: feature dim " + std::to_string(seq.dim()) +
                                " does not match model raw dim " + std::to_string(p.shape.raw_dim));
  ForwardTrace t;
  t.image = encode(seq, p.reduction, p.shape.frames, options.sampling, rng);
  t.conv = multiscale_forward(t.image.X, p.bank);
  if (options.masks) {
    t.masks = *options.masks;
  } else if (options.keep_probability < 1.0) {
    for (std::size_t s = 0; s < p.heads.size(); ++s)
      t.masks.push_back(sample_dropout_mask(rng, p.shape.channels, options.keep_probability));
  }
  std::vector<Vector> logits;
  for (std::size_t s = 0; s < p.heads.size(); ++s)
    logits.push_back(head_forward(t.conv.pooled[s].values, p.heads[s],
                                  t.masks.empty() ? nullptr : &t.masks[s]));
  t.scores = fuse_and_score(std::move(logits));
  return t;
}

/// Evaluation-mode scores: center sampling, no dropout.
inline ClassScores score(const ModelParams& p, const FrameFeatureSequence& seq) {
  Rng unused(0);
  return forward(p, seq, {}, unused).scores;
}

/// Cross-entropy of one sample; adds its parameter gradient into `grads`.
inline double accumulate_gradients(const ModelParams& p, const FrameFeatureSequence& seq,
                                   std::size_t label, const ForwardOptions& options, Rng& rng,
                                   ModelParams& grads) {
  const ForwardTrace t = forward(p, seq, options, rng);
  const LossAndGradient ce = cross_entropy_from_logits(t.scores.fused_logits, label);

  std::vector<Vector> pooled;
  for (const auto& f : t.conv.pooled) pooled.push_back(f.values);
  const ClassifierGradients gc = classifier_backward(pooled, p.heads, t.masks, ce.grad);
  for (std::size_t s = 0; s < p.heads.size(); ++s) {
    auto dst = grads.heads[s].weights.values();
    const auto src = gc.heads[s].weights.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    for (std::size_t c = 0; c < ce.grad.size(); ++c) grads.heads[s].bias[c] += gc.heads[s].bias[c];
  }

  const MultiscaleGradients gm = multiscale_backward(t.conv, p.bank, gc.features);
  for (std::size_t s = 0; s < p.bank.scales.size(); ++s) {
    auto dst = grads.bank.scales[s].weights.values();
    const auto src = gm.bank.scales[s].weights.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    auto& db = grads.bank.scales[s].bias;
    for (std::size_t m = 0; m < db.size(); ++m) db[m] += gm.bank.scales[s].bias[m];
  }

  accumulate_reduction_gradients(seq, t.image, gm.input, grads.reduction);
  return ce.loss;
}

/// Order-invariant reference classifier: mean of all frames, then one linear layer.
struct MeanFrameBaseline {
  Matrix weights;  // C x D
  Vector bias;     // C
};

inline MeanFrameBaseline init_baseline(std::size_t raw_dim, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  return {glorot_uniform(rng, raw_dim, classes, classes, raw_dim), Vector(classes, 0.0)};
}

inline MeanFrameBaseline zeros_like(const MeanFrameBaseline& b) {
  return {Matrix(b.weights.rows(), b.weights.cols()), Vector(b.bias.size(), 0.0)};
}

inline std::vector<TensorRef> tensors(MeanFrameBaseline& b) {
  return {{"baseline.weights", b.weights.rows(), b.weights.cols(), b.weights.values(), true},
          {"baseline.bias", 1, b.bias.size(), std::span<double>(b.bias), false}};
}

inline Vector mean_frame(const FrameFeatureSequence& seq) {
  Vector mean(seq.dim(), 0.0);
  for (std::size_t t = 0; t < seq.num_frames(); ++t)
    for (std::size_t d = 0; d < seq.dim(); ++d) mean[d] += seq.features(t, d);
  for (double& v : mean) v /= static_cast<double>(seq.num_frames());
  return mean;
}

inline ClassScores score(const MeanFrameBaseline& b, const FrameFeatureSequence& seq) {
  const ScaleHead head{0, b.weights, b.bias};
  return fuse_and_score({head_forward(mean_frame(seq), head)});
}

inline double accumulate_gradients(const MeanFrameBaseline& b, const FrameFeatureSequence& seq,
                                   std::size_t label, const ForwardOptions&, Rng&,
                                   MeanFrameBaseline& grads) {
  const Vector mean = mean_frame(seq);
  const ScaleHead head{0, b.weights, b.bias};
  const LossAndGradient ce = cross_entropy_from_logits(head_forward(mean, head), label);
  for (std::size_t c = 0; c < ce.grad.size(); ++c) {
    auto gw = grads.weights.row(c);
    for (std::size_t d = 0; d < mean.size(); ++d) gw[d] += ce.grad[c] * mean[d];
    grads.bias[c] += ce.grad[c];
  }
  return ce.loss;
}

}  // namespace din
