// Persistence and ingestion.
//
// Feature file (little-endian):
//   "DIFX" | u16 version=1 | u32 frames T | u32 dim D | T*D f32, frame-major
//
// Checkpoint (little-endian):
//   "DINC" | u16 version=1 | u32 len | config JSON (len bytes)
//   | tensor block: parameters
//   | u8 has_optimizer [ f64 lr | f64 best_val_error | u64 since_improvement
//                       | u64 epochs_completed | f64 best_val_accuracy | u64 best_epoch
//                       | tensor block: velocity | tensor block: best parameters ]
//   tensor block = u32 count, then per tensor: u16 name_len | name | u32 rows | u32 cols | f64 data
//
// Manifest: JSON {"classes": [...], "samples": [{"id", "feature_path", "label", "split"}]},
// feature paths relative to the manifest's directory.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "din/dataset.hpp"
#include "din/model.hpp"
#include "din/trainer.hpp"

namespace din {

/// Malformed file contents (bad magic, version, size or shape).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A well-formed document whose contents violate a constraint.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    auto raw = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  template <class T>
  T get() {
    std::array<unsigned char, sizeof(T)> raw{};
    take(raw.data(), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
  }
  std::string get_bytes(std::size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t size() const { return bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(source_ + ": " + what); }

 private:
  void take(void* out, std::size_t n) {
    if (remaining() < n) fail("truncated file");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::vector<unsigned char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary, then renames over `path`.
inline void write_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_atomic(path, std::vector<unsigned char>(text.begin(), text.end()));
}

}  // namespace detail

inline constexpr std::string_view kFeatureMagic = "DIFX";
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 14;

/// Values are stored as f32; writing quantizes them.
inline void write_feature_file(const std::filesystem::path& path, const FrameFeatureSequence& seq) {
  validate(seq);
  detail::ByteWriter w;
  w.put_bytes(kFeatureMagic);
  w.put<std::uint16_t>(kFeatureVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.num_frames()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.dim()));
  for (double v : seq.features.values()) w.put<float>(static_cast<float>(v));
  detail::write_atomic(path, w.bytes());
}

inline FrameFeatureSequence read_feature_file(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_all(path), path.string());
  if (r.size() < kFeatureHeaderBytes) r.fail("truncated header");
  if (r.get_bytes(4) != kFeatureMagic) r.fail("bad magic, expected DIFX");
  if (const auto version = r.get<std::uint16_t>(); version != kFeatureVersion)
    r.fail("unsupported feature file version " + std::to_string(version));
  const std::uint64_t frames = r.get<std::uint32_t>();
  const std::uint64_t dim = r.get<std::uint32_t>();
  if (frames == 0 || dim == 0) r.fail("zero frame count or dimension");
  if (r.remaining() != 4 * frames * dim)
    r.fail("payload size " + std::to_string(r.remaining()) + " does not match " +
           std::to_string(frames) + "x" + std::to_string(dim) + " f32 values");
  FrameFeatureSequence seq{Matrix(frames, dim)};
  for (double& v : seq.features.values()) {
    v = r.get<float>();
    if (!std::isfinite(v)) r.fail("non-finite feature value");
  }
  return seq;
}

// --- JSON config blocks ---------------------------------------------------

inline nlohmann::json to_json(const ModelShape& s) {
  return {{"raw_dim", s.raw_dim},   {"reduced_dim", s.reduced_dim}, {"frames", s.frames},
          {"widths", s.widths},     {"channels", s.channels},       {"classes", s.classes}};
}

/// Missing keys keep the values already in `base`.
inline ModelShape model_shape_from_json(const nlohmann::json& j, ModelShape base = {}) {
  base.raw_dim = j.value("raw_dim", base.raw_dim);
  base.reduced_dim = j.value("reduced_dim", base.reduced_dim);
  base.frames = j.value("frames", base.frames);
  base.widths = j.value("widths", base.widths);
  base.channels = j.value("channels", base.channels);
  base.classes = j.value("classes", base.classes);
  return base;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"initial_lr", c.initial_lr},
          {"lr_decay_factor", c.lr_decay_factor},
          {"plateau_patience", c.plateau_patience},
          {"max_epochs", c.max_epochs},
          {"dropout_keep", c.dropout_keep},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  base.batch_size = j.value("batch_size", base.batch_size);
  base.momentum = j.value("momentum", base.momentum);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  base.initial_lr = j.value("initial_lr", base.initial_lr);
  base.lr_decay_factor = j.value("lr_decay_factor", base.lr_decay_factor);
  base.plateau_patience = j.value("plateau_patience", base.plateau_patience);
  base.max_epochs = j.value("max_epochs", base.max_epochs);
  base.dropout_keep = j.value("dropout_keep", base.dropout_keep);
  base.seed = j.value("seed", base.seed);
  return base;
}

// --- Manifest -------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string feature_path;
  std::size_t label = 0;
  std::string split;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestEntry> samples;
  std::filesystem::path base_dir;

  /// Entries of one split, in document order.
  std::vector<ManifestEntry> split(std::string_view name) const {
    std::vector<ManifestEntry> out;
    for (const auto& s : samples)
      if (s.split == name) out.push_back(s);
    return out;
  }
  std::filesystem::path resolve(const ManifestEntry& e) const { return base_dir / e.feature_path; }
};

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples)
    samples.push_back(
        {{"id", s.id}, {"feature_path", s.feature_path}, {"label", s.label}, {"split", s.split}});
  const nlohmann::json doc{{"classes", m.classes}, {"samples", samples}};
  detail::write_text_atomic(path, doc.dump(2) + "\n");
}

/// Parses and validates; `check_files` also requires every feature file to exist.
inline DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& s : doc.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), s.at("feature_path").get<std::string>(),
                           s.at("label").get<std::size_t>(), s.at("split").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path.string() + ": " + e.what());
  }
  if (m.classes.empty()) throw ValidationError("manifest has no classes");

  std::set<std::string> seen;
  for (const auto& s : m.samples) {
    if (!seen.insert(s.id).second) throw ValidationError("sample '" + s.id + "': duplicate id");
    if (s.label >= m.classes.size())
      throw ValidationError("sample '" + s.id + "': label " + std::to_string(s.label) +
                            " out of range for " + std::to_string(m.classes.size()) + " classes");
    if (s.split != "train" && s.split != "val" && s.split != "test")
      throw ValidationError("sample '" + s.id + "': unknown split '" + s.split + "'");
    if (check_files && !std::filesystem::exists(m.resolve(s)))
      throw ValidationError("sample '" + s.id + "': missing feature file " + m.resolve(s).string());
  }
  return m;
}

inline Dataset load_dataset(const DatasetManifest& m) {
  Dataset d;
  d.class_names = m.classes;
  for (const auto& e : m.samples) {
    Sample s{e.id, read_feature_file(m.resolve(e)), e.label};
    if (e.split == "train") d.train.push_back(std::move(s));
    else if (e.split == "val") d.val.push_back(std::move(s));
    else d.test.push_back(std::move(s));
  }
  return d;
}

/// Writes every sample to `dir/features/<id>.difx` and the manifest to `dir/manifest.json`.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  DatasetManifest m;
  m.classes = d.class_names;
  auto emit = [&](const std::vector<Sample>& split, const char* name) {
    for (const auto& s : split) {
      const std::string rel = "features/" + s.id + ".difx";
      write_feature_file(dir / rel, s.sequence);
      m.samples.push_back({s.id, rel, s.label, name});
    }
  };
  emit(d.train, "train");
  emit(d.val, "val");
  emit(d.test, "test");
  const auto path = dir / "manifest.json";
  write_manifest(path, m);
  return path;
}

// --- Synthetic order task -------------------------------------------------

struct SyntheticTaskConfig {
  std::size_t num_prototypes = 4;
  std::size_t feature_dim = 16;
  double noise_sigma = 0.1;
  std::size_t sequence_length = 8;
  std::size_t samples_per_class = 256;      // train split
  std::size_t val_samples_per_class = 128;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticTaskConfig& c) {
  if (c.num_prototypes < 2) throw std::invalid_argument("SyntheticTaskConfig: need >= 2 prototypes");
  if (c.sequence_length < 2) throw std::invalid_argument("SyntheticTaskConfig: sequence_length < 2");
  if (c.feature_dim == 0) throw std::invalid_argument("SyntheticTaskConfig: feature_dim is zero");
  if (!(c.noise_sigma >= 0.0)) throw std::invalid_argument("SyntheticTaskConfig: negative noise");
}

/// Prototype index of each frame: class 0 walks the prototypes in ascending
/// cyclic order from `offset`, class 1 in descending order.
inline std::vector<std::size_t> prototype_order(std::size_t label, std::size_t offset,
                                                std::size_t num_prototypes, std::size_t length) {
  std::vector<std::size_t> out(length);
  for (std::size_t t = 0; t < length; ++t) {
    const std::size_t step = t % num_prototypes;
    out[t] = label == 0 ? (offset + step) % num_prototypes
                        : (offset + num_prototypes - step) % num_prototypes;
  }
  return out;
}

/// Both classes see the same frame multiset at a given offset, so only frame
/// order separates them. Labels alternate 0,1,0,1 within each split.
inline Dataset synth_order_task(const SyntheticTaskConfig& config) {
  validate(config);
  Rng rng(config.seed);
  Matrix prototypes(config.num_prototypes, config.feature_dim);
  for (std::size_t p = 0; p < config.num_prototypes; ++p) {
    auto row = prototypes.row(p);
    for (double& v : row) v = rng.normal();
    const double norm = std::sqrt(dot(row, row));
    for (double& v : row) v /= norm;
  }

  Dataset d;
  d.class_names = {"ascending", "descending"};
  auto make_split = [&](std::size_t per_class, const std::string& prefix) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
      const std::size_t label = i % 2;
      const std::size_t offset = rng.uniform_index(config.num_prototypes);
      const auto order = prototype_order(label, offset, config.num_prototypes, config.sequence_length);
      FrameFeatureSequence seq{Matrix(config.sequence_length, config.feature_dim)};
      for (std::size_t t = 0; t < order.size(); ++t) {
        const auto proto = prototypes.row(order[t]);
        auto frame = seq.features.row(t);
        for (std::size_t j = 0; j < frame.size(); ++j)
          frame[j] = proto[j] + config.noise_sigma * rng.normal();
      }
      char id[32];
      std::snprintf(id, sizeof id, "%s-%05zu", prefix.c_str(), i);
      out.push_back({id, std::move(seq), label});
    }
    return out;
  };
  d.train = make_split(config.samples_per_class, "train");
  d.val = make_split(config.val_samples_per_class, "val");
  return d;
}

// --- Checkpoints ----------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "DINC";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  TrainingState<ModelParams> state;
  bool has_optimizer = false;
};

namespace detail {

inline void put_tensors(ByteWriter& w, ModelParams& p) {
  const auto ts = tensors(p);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols));
    for (double v : t.values) w.put<double>(v);
  }
}

/// Fills `p` (already shaped) from a tensor block, rejecting any name or shape difference.
inline void get_tensors(ByteReader& r, ModelParams& p) {
  auto ts = tensors(p);
  const std::uint32_t count = r.get<std::uint32_t>();
  if (count != ts.size())
    r.fail("tensor count " + std::to_string(count) + " does not match model (" +
           std::to_string(ts.size()) + ")");
  for (auto& t : ts) {
    const std::string name = r.get_bytes(r.get<std::uint16_t>());
    const std::uint32_t rows = r.get<std::uint32_t>();
    const std::uint32_t cols = r.get<std::uint32_t>();
    if (name != t.name || rows != t.rows || cols != t.cols)
      r.fail("tensor '" + name + "' " + std::to_string(rows) + "x" + std::to_string(cols) +
             " does not match expected '" + t.name + "' " + std::to_string(t.rows) + "x" +
             std::to_string(t.cols));
    for (double& v : t.values) v = r.get<double>();
  }
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, TrainingState<ModelParams>& state,
                            const TrainConfig& config, bool with_optimizer = true) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint16_t>(kCheckpointVersion);
  const std::string cfg =
      nlohmann::json{{"model", to_json(state.params.shape)}, {"train", to_json(config)}}.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.put_bytes(cfg);
  detail::put_tensors(w, state.params);
  w.put<std::uint8_t>(with_optimizer ? 1 : 0);
  if (with_optimizer) {
    const auto& opt = state.optimizer;
    w.put<double>(opt.current_lr);
    w.put<double>(opt.best_val_error);
    w.put<std::uint64_t>(opt.epochs_since_improvement);
    w.put<std::uint64_t>(state.epochs_completed);
    w.put<double>(state.best_val_accuracy);
    w.put<std::uint64_t>(state.best_epoch);
    detail::put_tensors(w, state.optimizer.velocity);
    detail::put_tensors(w, state.best_params);
  }
  detail::write_atomic(path, w.bytes());
}

/// Parameters only; the optimizer section is left empty.
inline void save_model(const std::filesystem::path& path, const ModelParams& params,
                       const TrainConfig& config) {
  TrainingState<ModelParams> state;
  state.params = params;
  save_checkpoint(path, state, config, false);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_all(path), path.string());
  if (r.get_bytes(4) != kCheckpointMagic) r.fail("bad magic, expected DINC");
  if (const auto version = r.get<std::uint16_t>(); version != kCheckpointVersion)
    r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ModelShape shape;
  try {
    const auto cfg = nlohmann::json::parse(r.get_bytes(r.get<std::uint32_t>()));
    shape = model_shape_from_json(cfg.at("model"));
    ck.config = train_config_from_json(cfg.at("train"));
    validate(shape);
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad config block: ") + e.what());
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("bad config block: ") + e.what());
  }
  ck.state.params = zero_model(shape);
  detail::get_tensors(r, ck.state.params);
  ck.has_optimizer = r.get<std::uint8_t>() != 0;
  ck.state.optimizer = make_optimizer_state(ck.state.params, ck.config);
  ck.state.best_params = ck.state.params;
  if (ck.has_optimizer) {
    auto& opt = ck.state.optimizer;
    opt.current_lr = r.get<double>();
    opt.best_val_error = r.get<double>();
    opt.epochs_since_improvement = r.get<std::uint64_t>();
    ck.state.epochs_completed = r.get<std::uint64_t>();
    ck.state.best_val_accuracy = r.get<double>();
    ck.state.best_epoch = r.get<std::uint64_t>();
    detail::get_tensors(r, opt.velocity);
    detail::get_tensors(r, ck.state.best_params);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint payload");
  return ck;
}

/// As load_checkpoint, but the embedded shape must equal `expected`.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelShape& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.state.params.shape == expected))
    throw FormatError(path.string() + ": checkpoint shape does not match the requested model");
  return ck;
}

/// Number of parameter scalars stored in a checkpoint file.
inline std::size_t checkpoint_parameter_count(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  return scalar_count(ck.state.params);
}

}  // namespace din
