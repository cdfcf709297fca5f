// Command-line driver: synth, train, eval, predict, inspect-params,
// export-responses, export-features, selftest.
//
// Exit status: 0 success, 1 usage error, 2 validation error, 3 selftest failure.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "din/din.hpp"
#include "din/testing/selfcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config document: {"model": {...}, "train": {...}, "paths": {...}, "synth": {...}}.
const std::map<std::string, std::set<std::string>> kSchema{
    {"model", {"raw_dim", "reduced_dim", "frames", "widths", "channels", "classes"}},
    {"train",
     {"batch_size", "momentum", "weight_decay", "initial_lr", "lr_decay_factor", "plateau_patience",
      "max_epochs", "dropout_keep", "seed"}},
    {"paths", {"manifest", "output", "checkpoint", "resume"}},
    {"synth",
     {"num_prototypes", "feature_dim", "noise_sigma", "sequence_length", "samples_per_class",
      "val_samples_per_class", "seed"}},
};

json empty_config() {
  json doc = json::object();
  for (const auto& [section, keys] : kSchema) doc[section] = json::object();
  return doc;
}

json load_config(const std::string& path) {
  json doc = empty_config();
  if (path.empty()) return doc;
  std::ifstream in(path);
  if (!in) throw din::ValidationError("cannot open config " + path);
  json file;
  try {
    file = json::parse(in);
  } catch (const json::exception& e) {
    throw din::FormatError("config " + path + ": " + e.what());
  }
  if (!file.is_object()) throw din::ValidationError("config " + path + ": top level must be an object");
  for (const auto& [section, body] : file.items()) {
    const auto it = kSchema.find(section);
    if (it == kSchema.end()) throw din::ValidationError("config: unknown section '" + section + "'");
    if (!body.is_object()) throw din::ValidationError("config: section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      if (!it->second.contains(key))
        throw din::ValidationError("config: unknown key '" + section + "." + key + "'");
      doc[section][key] = value;
    }
  }
  return doc;
}

din::SyntheticTaskConfig synth_config_from_json(const json& j) {
  din::SyntheticTaskConfig c;
  c.num_prototypes = j.value("num_prototypes", c.num_prototypes);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.sequence_length = j.value("sequence_length", c.sequence_length);
  c.samples_per_class = j.value("samples_per_class", c.samples_per_class);
  c.val_samples_per_class = j.value("val_samples_per_class", c.val_samples_per_class);
  c.seed = j.value("seed", c.seed);
  return c;
}

/// Flag values are written into the config document after the file is read, so flags win.
class Overrides {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& section,
                   const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    patches_.push_back([=](json& doc) {
      if (opt->count() > 0) doc[section][key] = *value;
    });
    return opt;
  }
  void apply(json& doc) const {
    for (const auto& p : patches_) p(doc);
  }

 private:
  std::vector<std::function<void(json&)>> patches_;
};

void add_model_flags(CLI::App* app, Overrides& ov) {
  ov.add<std::size_t>(app, "--raw-dim", "model", "raw_dim", "frame feature dimension D");
  ov.add<std::size_t>(app, "--reduced-dim", "model", "reduced_dim", "DenseImage width k");
  ov.add<std::size_t>(app, "--frames", "model", "frames", "sampled frames n");
  ov.add<std::vector<std::size_t>>(app, "--widths", "model", "widths", "filter widths, e.g. 2,3,4")
      ->delimiter(',');
  ov.add<std::size_t>(app, "--channels", "model", "channels", "filters per width M");
  ov.add<std::size_t>(app, "--classes", "model", "classes", "number of classes C");
}

void add_train_flags(CLI::App* app, Overrides& ov) {
  ov.add<std::size_t>(app, "--batch-size", "train", "batch_size", "minibatch size");
  ov.add<double>(app, "--momentum", "train", "momentum", "SGD momentum");
  ov.add<double>(app, "--weight-decay", "train", "weight_decay", "L2 coefficient (weights only)");
  ov.add<double>(app, "--lr", "train", "initial_lr", "initial learning rate");
  ov.add<double>(app, "--lr-decay", "train", "lr_decay_factor", "plateau decay factor");
  ov.add<std::size_t>(app, "--patience", "train", "plateau_patience", "epochs without improvement");
  ov.add<std::size_t>(app, "--max-epochs", "train", "max_epochs", "total epoch budget");
  ov.add<double>(app, "--keep", "train", "dropout_keep", "dropout keep probability");
  ov.add<std::uint64_t>(app, "--seed", "train", "seed", "initialization and training seed");
}

void add_data_flags(CLI::App* app, Overrides& ov, std::string* split) {
  ov.add<std::string>(app, "--checkpoint", "paths", "checkpoint", "model checkpoint");
  ov.add<std::string>(app, "--manifest", "paths", "manifest", "dataset manifest");
  app->add_option("--split", *split, "train, val or test")->capture_default_str();
}

std::string required_path(const json& doc, const std::string& key, const std::string& flag) {
  const auto& paths = doc.at("paths");
  if (!paths.contains(key) || paths[key].get<std::string>().empty())
    throw UsageError("missing " + flag + " (or paths." + key + " in the config)");
  return paths[key].get<std::string>();
}

din::Dataset load_data(const json& doc) {
  return din::load_dataset(din::load_manifest(required_path(doc, "manifest", "--manifest")));
}

din::ModelParams load_model(const json& doc) {
  return din::load_checkpoint(required_path(doc, "checkpoint", "--checkpoint")).state.params;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

const std::vector<din::Sample>& checked_split(const din::Dataset& data, const std::string& split) {
  const auto& samples = data.split(split);
  if (samples.empty()) throw din::ValidationError("split '" + split + "' has no samples");
  return samples;
}

void check_compatible(const din::ModelParams& model, const din::Dataset& data) {
  if (model.shape.classes != data.num_classes())
    throw din::ValidationError("model has " + std::to_string(model.shape.classes) + " classes, dataset has " +
                               std::to_string(data.num_classes()));
}

// --- commands ---------------------------------------------------------------

int run_synth(const json& doc) {
  const fs::path out = required_path(doc, "output", "--output");
  const din::SyntheticTaskConfig cfg = synth_config_from_json(doc.at("synth"));
  const fs::path manifest = din::write_dataset(out, din::synth_order_task(cfg));
  std::cout << "wrote " << 2 * (cfg.samples_per_class + cfg.val_samples_per_class) << " samples, manifest "
            << manifest.string() << '\n';
  return 0;
}

int run_train(json doc, const std::vector<std::string>& argv) {
  const fs::path out = required_path(doc, "output", "--output");
  const din::Dataset data = load_data(doc);
  if (data.train.empty() || data.val.empty())
    throw din::ValidationError("training needs non-empty train and val splits");

  // Unset D and C follow the dataset.
  auto& model_json = doc["model"];
  if (!model_json.contains("raw_dim")) model_json["raw_dim"] = data.train.front().sequence.features.cols();
  if (!model_json.contains("classes")) model_json["classes"] = data.num_classes();
  const din::ModelShape shape = din::model_shape_from_json(model_json);
  din::validate(shape);
  const din::TrainConfig config = din::train_config_from_json(doc.at("train"));
  din::validate(config);

  din::TrainingState<din::ModelParams> state;
  if (doc["paths"].contains("resume")) {
    din::Checkpoint ck = din::load_checkpoint(doc["paths"]["resume"].get<std::string>(), shape);
    if (!ck.has_optimizer) throw din::ValidationError("resume checkpoint has no optimizer state");
    state = std::move(ck.state);
  } else {
    state = din::make_training_state(din::init_model(shape, config.seed), config);
  }
  check_compatible(state.params, data);

  // Echo the fully resolved configuration, defaults included.
  doc["model"] = din::to_json(shape);
  doc["train"] = din::to_json(config);
  doc.erase("synth");

  fs::create_directories(out);
  json meta{{"started", utc_now()}, {"argv", argv}};
  din::detail::write_text_atomic(out / "config.json", doc.dump(2) + "\n");

  std::string history = "epoch,train_loss,val_loss,val_accuracy,lr\n";
  auto save_all = [&] {
    din::detail::write_text_atomic(out / "history.csv", history);
    din::save_checkpoint(out / "last.dinc", state, config);
    din::save_model(out / "best.dinc", state.best_params, config);
  };
  save_all();
  din::fit(state, data.train, data.val, config, [&](const din::EpochReport& r) {
    history += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "," +
               fmt(r.val_accuracy) + "," + fmt(r.current_lr) + "\n";
    save_all();
    std::cout << "epoch " << r.epoch << " train_loss " << fmt(r.train_loss) << " val_loss " << fmt(r.val_loss)
              << " val_accuracy " << fmt(r.val_accuracy) << " lr " << fmt(r.current_lr) << std::endl;
  });
  save_all();
  meta["finished"] = utc_now();
  din::detail::write_text_atomic(out / "metadata.json", meta.dump(2) + "\n");
  if (state.best_epoch > 0)
    std::cout << "best epoch " << state.best_epoch << " val_accuracy " << fmt(state.best_val_accuracy) << '\n';
  return 0;
}

int run_eval(const json& doc, const std::string& split) {
  const din::ModelParams model = load_model(doc);
  const din::Dataset data = load_data(doc);
  check_compatible(model, data);
  const din::EvalResult r = din::evaluate(model, std::span(checked_split(data, split)));
  std::cout << "split " << split << " loss " << fmt(r.loss) << " accuracy " << fmt(r.accuracy) << '\n';
  return 0;
}

int run_predict(const json& doc, const std::string& split, const std::string& output) {
  const din::ModelParams model = load_model(doc);
  const din::Dataset data = load_data(doc);
  check_compatible(model, data);
  std::ostringstream csv;
  csv << "sample_id,label,predicted";
  for (const auto& name : data.class_names) csv << ",p_" << name;
  csv << '\n';
  for (const auto& s : checked_split(data, split)) {
    const din::ClassScores scores = din::score(model, s.sequence);
    csv << s.id << ',' << s.label << ',' << din::predict(scores);
    for (double p : scores.probabilities) csv << ',' << fmt(p);
    csv << '\n';
  }
  if (output.empty()) std::cout << csv.str();
  else din::detail::write_text_atomic(output, csv.str());
  return 0;
}

int run_inspect(const json& doc, const std::optional<std::uint64_t>& backbone,
                const std::vector<std::string>& references) {
  const din::ModelShape shape = din::model_shape_from_json(doc.at("model"));
  din::validate(shape);
  din::CostReport flops = din::estimate_flops(shape, backbone);
  for (const auto& ref : references) {
    const auto eq = ref.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--reference expects NAME=VALUE, got '" + ref + "'");
    try {
      flops.references.push_back({ref.substr(0, eq), std::stoull(ref.substr(eq + 1))});
    } catch (const std::exception&) {
      throw UsageError("--reference value is not an integer: '" + ref + "'");
    }
  }
  std::cout << "# parameters\n" << din::format_report(din::count_parameters(shape), "parameters")
            << "# flops per video\n" << din::format_report(flops, "flops");
  return 0;
}

int run_export_responses(const json& doc, const std::string& split, std::size_t width, const std::string& output) {
  if (output.empty()) throw UsageError("missing --output");
  const din::ModelParams model = load_model(doc);
  const din::Dataset data = load_data(doc);
  din::export_responses(model, checked_split(data, split), width, output);
  return 0;
}

int run_export_features(const json& doc, const std::string& split, const std::string& output) {
  if (output.empty()) throw UsageError("missing --output");
  const din::ModelParams model = load_model(doc);
  const din::Dataset data = load_data(doc);
  din::export_pooled_features(model, checked_split(data, split), output);
  return 0;
}

int run_selftest() {
  const std::vector<std::pair<std::string, std::function<din::testing::CheckOutcome()>>> checks{
      {"convolution oracle", [] { return din::testing::check_conv_oracle(100); }},
      {"feature-map shape law", din::testing::check_shape_law},
      {"locality", din::testing::check_locality},
      {"probability law", [] { return din::testing::check_probability_law(1000); }},
      {"end-to-end gradients", [] { return din::testing::check_end_to_end_gradients(50); }},
  };
  std::size_t passed = 0;
  for (const auto& [name, check] : checks) {
    const auto o = check();
    if (o.pass) ++passed;
    std::cout << (o.pass ? "ok   " : "FAIL ") << name << ": " << o.detail << '\n';
  }
  std::cout << "selftest: " << passed << "/" << checks.size() << " checks passed\n";
  return passed == checks.size() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DenseImage network: train and analyse temporal-order video classifiers"};
  app.require_subcommand(1);
  std::string config_path, split = "val", output;
  std::size_t width = 2;
  std::uint64_t backbone_flops = 0;
  std::vector<std::string> references;
  Overrides ov;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    return sub;
  };

  auto* synth = with_config(app.add_subcommand("synth", "generate the synthetic temporal-order dataset"));
  ov.add<std::string>(synth, "--output", "paths", "output", "dataset directory");
  ov.add<std::size_t>(synth, "--prototypes", "synth", "num_prototypes", "prototype count P");
  ov.add<std::size_t>(synth, "--dim", "synth", "feature_dim", "feature dimension D");
  ov.add<double>(synth, "--sigma", "synth", "noise_sigma", "noise standard deviation");
  ov.add<std::size_t>(synth, "--length", "synth", "sequence_length", "frames per sample");
  ov.add<std::size_t>(synth, "--train-per-class", "synth", "samples_per_class", "train samples per class");
  ov.add<std::size_t>(synth, "--val-per-class", "synth", "val_samples_per_class", "val samples per class");
  ov.add<std::uint64_t>(synth, "--seed", "synth", "seed", "generator seed");

  auto* train = with_config(app.add_subcommand("train", "train a model on a manifest"));
  add_model_flags(train, ov);
  add_train_flags(train, ov);
  ov.add<std::string>(train, "--manifest", "paths", "manifest", "dataset manifest");
  ov.add<std::string>(train, "--output", "paths", "output", "run directory");
  ov.add<std::string>(train, "--resume", "paths", "resume", "continue from a checkpoint with optimizer state");

  auto* eval = with_config(app.add_subcommand("eval", "loss and accuracy on one split"));
  add_data_flags(eval, ov, &split);

  auto* predict = with_config(app.add_subcommand("predict", "per-sample class and probabilities"));
  add_data_flags(predict, ov, &split);
  predict->add_option("--output", output, "CSV path (default stdout)");

  auto* inspect = with_config(app.add_subcommand("inspect-params", "parameter and FLOP report"));
  add_model_flags(inspect, ov);
  auto* backbone_opt = inspect->add_option("--backbone-flops", backbone_flops, "per-video feature extractor cost");
  inspect->add_option("--reference", references, "NAME=VALUE comparison line, repeatable");

  auto* responses = with_config(app.add_subcommand("export-responses", "per-window response intensities"));
  add_data_flags(responses, ov, &split);
  responses->add_option("--width", width, "filter width h")->required();
  responses->add_option("--output", output, "CSV path")->required();

  auto* features = with_config(app.add_subcommand("export-features", "pooled feature vectors"));
  add_data_flags(features, ov, &split);
  features->add_option("--output", output, "CSV path")->required();

  app.add_subcommand("selftest", "oracle and gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "din_cli: usage error: " << e.what() << '\n';
    return 1;
  }

  try {
    json doc = load_config(config_path);
    ov.apply(doc);
    if (app.got_subcommand(synth)) return run_synth(doc);
    if (app.got_subcommand(train)) return run_train(doc, std::vector<std::string>(argv, argv + argc));
    if (app.got_subcommand(eval)) return run_eval(doc, split);
    if (app.got_subcommand(predict)) return run_predict(doc, split, output);
    if (app.got_subcommand(inspect))
      return run_inspect(doc, backbone_opt->count() ? std::optional(backbone_flops) : std::nullopt, references);
    if (app.got_subcommand(responses)) return run_export_responses(doc, split, width, output);
    if (app.got_subcommand(features)) return run_export_features(doc, split, output);
    return run_selftest();
  } catch (const UsageError& e) {
    std::cerr << "din_cli: usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "din_cli: error: " << msg << '\n';
    return 2;
  }
}
