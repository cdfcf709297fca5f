// Model accounting (parameters, per-video FLOPs) and CSV exports of filter
// responses and pooled features.
//
// FLOP convention: a multiply-add counts as 2 operations, any other
// elementwise operation as 1.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "din/data_io.hpp"
#include "din/model.hpp"

namespace din {

using ModelShapeSpec = ModelShape;

struct CostLine {
  std::string name;
  std::uint64_t value = 0;
};

struct CostReport {
  std::vector<CostLine> lines;
  std::uint64_t total = 0;
  /// Externally supplied figures (e.g. other architectures), shown but not summed.
  std::vector<CostLine> references;
};

namespace detail {

inline CostReport finish(std::vector<CostLine> lines) {
  CostReport r;
  for (const auto& l : lines) r.total += l.value;
  r.lines = std::move(lines);
  return r;
}

}  // namespace detail

inline CostReport count_parameters(const ModelShapeSpec& s) {
  validate(s);
  std::vector<CostLine> lines;
  lines.push_back({"reduction", s.raw_dim * s.reduced_dim + s.reduced_dim});
  for (std::size_t h : s.widths)
    lines.push_back({"conv" + std::to_string(h), s.channels * h * s.reduced_dim + s.channels});
  for (std::size_t h : s.widths)
    lines.push_back({"head" + std::to_string(h), s.classes * s.channels + s.classes});
  return detail::finish(std::move(lines));
}

/// Head-only cost per video. `backbone_flops`, if given, is added as its own line.
inline CostReport estimate_flops(const ModelShapeSpec& s,
                                 std::optional<std::uint64_t> backbone_flops = std::nullopt) {
  validate(s);
  std::vector<CostLine> lines;
  if (backbone_flops) lines.push_back({"backbone", *backbone_flops});
  lines.push_back({"reduction", s.frames * 2 * s.raw_dim * s.reduced_dim});
  std::uint64_t pool = 0;
  for (std::size_t h : s.widths) {
    const std::uint64_t windows = s.frames - h + 1;
    lines.push_back({"conv" + std::to_string(h), s.channels * windows * 2 * h * s.reduced_dim});
    pool += s.channels * windows;
  }
  for (std::size_t h : s.widths) lines.push_back({"head" + std::to_string(h), 2 * s.classes * s.channels});
  lines.push_back({"pool", pool});
  lines.push_back({"softmax", s.classes});
  return detail::finish(std::move(lines));
}

inline std::string format_report(const CostReport& r, const std::string& unit) {
  std::ostringstream out;
  for (const auto& l : r.lines) out << l.name << '\t' << l.value << '\n';
  out << "total\t" << r.total << ' ' << unit << '\n';
  for (const auto& l : r.references) out << "reference:" << l.name << '\t' << l.value << '\n';
  return out.str();
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<const Sample*> sorted_by_id(std::span<const Sample> samples) {
  std::vector<const Sample*> out;
  for (const auto& s : samples) out.push_back(&s);
  std::stable_sort(out.begin(), out.end(),
                   [](const Sample* a, const Sample* b) { return a->id < b->id; });
  return out;
}

inline DenseImage eval_image(const ModelParams& model, const FrameFeatureSequence& seq) {
  Rng unused(0);
  return encode(seq, model.reduction, model.shape.frames, SamplingMode::eval_center, unused);
}

}  // namespace detail

/// One row per sample (sorted by id):
///   sample_id,label,argmax_window,window_first_row,window_last_row,
///   video_first_frame,video_last_frame,r0..r{n-h}
/// Intensities are the per-window mean over channels of the width-h map.
inline void export_responses(const ModelParams& model, std::span<const Sample> samples,
                             std::size_t h, const std::filesystem::path& path) {
  if (!model.bank.find(h))
    throw std::invalid_argument("export_responses: width " + std::to_string(h) + " not in model");
  const std::size_t windows = model.shape.frames - h + 1;
  std::ostringstream out;
  out << "sample_id,label,argmax_window,window_first_row,window_last_row,video_first_frame,"
         "video_last_frame";
  for (std::size_t i = 0; i < windows; ++i) out << ",r" << i;
  out << '\n';
  for (const Sample* s : detail::sorted_by_id(samples)) {
    const DenseImage image = detail::eval_image(model, s->sequence);
    const ResponseProfile p = response_profile(image.X, model.bank, h, std::nullopt);
    out << s->id << ',' << s->label << ',' << p.argmax_window << ',' << p.first_frame() << ','
        << p.last_frame() << ',' << image.frame_indices[p.first_frame()] << ','
        << image.frame_indices[p.last_frame()];
    for (double v : p.intensities) out << ',' << detail::fmt_double(v);
    out << '\n';
  }
  detail::write_text_atomic(path, out.str());
}

struct PooledFeatureRow {
  Vector pooled;    // c^h for every width, concatenated in bank order
  Vector baseline;  // column mean of the DenseImage
};

inline PooledFeatureRow pooled_features(const ModelParams& model, const FrameFeatureSequence& seq) {
  const DenseImage image = detail::eval_image(model, seq);
  const MultiscaleCache cache = multiscale_forward(image.X, model.bank);
  PooledFeatureRow row;
  for (const auto& p : cache.pooled) row.pooled.insert(row.pooled.end(), p.values.begin(), p.values.end());
  row.baseline.assign(image.dim(), 0.0);
  for (std::size_t i = 0; i < image.frames(); ++i)
    for (std::size_t j = 0; j < image.dim(); ++j) row.baseline[j] += image.X(i, j);
  for (double& v : row.baseline) v /= static_cast<double>(image.frames());
  return row;
}

/// One row per sample (sorted by id):
///   sample_id,label,c<h>_<m>... (M*|H| columns),mean_<j>... (k columns)
inline void export_pooled_features(const ModelParams& model, std::span<const Sample> samples,
                                   const std::filesystem::path& path) {
  std::ostringstream out;
  out << "sample_id,label";
  for (std::size_t h : model.shape.widths)
    for (std::size_t m = 0; m < model.shape.channels; ++m) out << ",c" << h << '_' << m;
  for (std::size_t j = 0; j < model.shape.reduced_dim; ++j) out << ",mean_" << j;
  out << '\n';
  for (const Sample* s : detail::sorted_by_id(samples)) {
    const PooledFeatureRow row = pooled_features(model, s->sequence);
    out << s->id << ',' << s->label;
    for (double v : row.pooled) out << ',' << detail::fmt_double(v);
    for (double v : row.baseline) out << ',' << detail::fmt_double(v);
    out << '\n';
  }
  detail::write_text_atomic(path, out.str());
}

}  // namespace din
