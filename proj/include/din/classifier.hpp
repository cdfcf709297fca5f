// Per-width linear heads and score fusion: logits from every width are summed
// and a single softmax is applied to the sum.
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "din/core.hpp"

namespace din {

struct ScaleHead {
  std::size_t width = 0;
  Matrix weights;  // C x M
  Vector bias;     // C

  std::size_t classes() const noexcept { return weights.rows(); }
  std::size_t features() const noexcept { return weights.cols(); }
};

struct ClassScores {
  Vector fused_logits;
  Vector probabilities;
  std::vector<Vector> per_scale_logits;
};

/// weights * (mask .* features) + bias. A null mask is evaluation mode.
inline Vector head_forward(std::span<const double> features, const ScaleHead& head,
                           const DropoutMask* mask = nullptr) {
  if (features.size() != head.features() || head.bias.size() != head.classes())
    throw std::invalid_argument("head_forward: expected " + std::to_string(head.features()) +
                                " features, got " + std::to_string(features.size()));
  if (mask && mask->scale.size() != features.size())
    throw std::invalid_argument("head_forward: dropout mask length mismatch");
  Vector masked(features.begin(), features.end());
  if (mask)
    for (std::size_t i = 0; i < masked.size(); ++i) masked[i] *= mask->scale[i];
  Vector logits = head.bias;
  for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += dot(head.weights.row(c), masked);
  return logits;
}

inline ClassScores fuse_and_score(std::vector<Vector> per_scale_logits) {
  if (per_scale_logits.empty()) throw std::invalid_argument("fuse_and_score: no scales");
  const std::size_t classes = per_scale_logits.front().size();
  Vector fused(classes, 0.0);
  for (const auto& logits : per_scale_logits) {
    if (logits.size() != classes)
      throw std::invalid_argument("fuse_and_score: per-scale logit lengths differ");
    for (std::size_t c = 0; c < classes; ++c) fused[c] += logits[c];
  }
  ClassScores scores;
  scores.probabilities = softmax(fused);
  scores.fused_logits = std::move(fused);
  scores.per_scale_logits = std::move(per_scale_logits);
  return scores;
}

/// Argmax of the probabilities, ties to the smallest class index.
inline std::size_t predict(const ClassScores& scores) { return argmax(scores.probabilities); }

struct ClassifierGradients {
  std::vector<ScaleHead> heads;
  std::vector<Vector> features;
};

/// The fused sum hands the same upstream gradient to every head.
/// `masks` is either empty (evaluation mode) or holds one mask per head.
inline ClassifierGradients classifier_backward(std::span<const Vector> features,
                                               std::span<const ScaleHead> heads,
                                               std::span<const DropoutMask> masks,
                                               std::span<const double> grad_fused) {
  if (features.size() != heads.size() || (!masks.empty() && masks.size() != heads.size()))
    throw std::invalid_argument("classifier_backward: scale count mismatch");
  ClassifierGradients g;
  g.heads.reserve(heads.size());
  g.features.reserve(heads.size());
  for (std::size_t s = 0; s < heads.size(); ++s) {
    const auto& head = heads[s];
    const auto& c = features[s];
    if (c.size() != head.features() || grad_fused.size() != head.classes())
      throw std::invalid_argument("classifier_backward: shape mismatch for width " +
                                  std::to_string(head.width));
    const Vector* scale = masks.empty() ? nullptr : &masks[s].scale;
    if (scale && scale->size() != c.size())
      throw std::invalid_argument("classifier_backward: dropout mask length mismatch");

    ScaleHead gh{head.width, Matrix(head.classes(), head.features()),
                 Vector(grad_fused.begin(), grad_fused.end())};
    Vector gc(c.size(), 0.0);
    for (std::size_t cls = 0; cls < head.classes(); ++cls) {
      const double up = grad_fused[cls];
      const auto w = head.weights.row(cls);
      auto gw = gh.weights.row(cls);
      for (std::size_t m = 0; m < c.size(); ++m) {
        const double keep = scale ? (*scale)[m] : 1.0;
        gw[m] = up * c[m] * keep;
        gc[m] += up * w[m];
      }
    }
    if (scale)
      for (std::size_t m = 0; m < gc.size(); ++m) gc[m] *= (*scale)[m];
    g.heads.push_back(std::move(gh));
    g.features.push_back(std::move(gc));
  }
  return g;
}

}  // namespace din
