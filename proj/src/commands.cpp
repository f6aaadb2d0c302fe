#include "mcnn/commands.hpp"

#include <cmath>
#include <optional>
#include <set>
#include <cstdio>
#include <ostream>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "mcnn/errors.hpp"
#include "mcnn/fs_util.hpp"
#include "mcnn/image_io.hpp"
#include "mcnn/metrics.hpp"
#include "mcnn/model.hpp"
#include "mcnn/ops.hpp"
#include "mcnn/render.hpp"
#include "mcnn/segmentation.hpp"
#include "mcnn/weights.hpp"
#include "mcnn/xai.hpp"

namespace fs = std::filesystem;

namespace mcnn {

namespace {

template <typename T>
void read_key(const nlohmann::json& doc, const char* key, T& field) {
  if (!doc.contains(key)) return;
  try {
    field = doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidArgument(std::string("config key '") + key + "' has the wrong type");
  }
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw InvalidArgument("'" + text + "' is not a comma-separated list of positive integers");
    }
  }
  if (out.empty()) throw InvalidArgument("empty size list");
  return out;
}

ArchitectureConfig architecture_for(const std::string& head) {
  ArchitectureConfig arch;
  arch.head = parse_head(head);
  return arch;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_epoch(std::ostream& out, const EpochRecord& r) {
  out << "epoch " << r.epoch << ": loss " << fixed(r.train_loss) << " acc " << fixed(r.train_acc) << " val_loss "
      << fixed(r.val_loss) << " val_acc " << fixed(r.val_acc) << " lr " << r.lr << '\n';
}

int cmd_prepare(const std::string& root, std::uint64_t seed, const std::string& out_path, const SplitFractions& fr,
                std::ostream& out) {
  DatasetIndex index = stratified_split(index_dataset(root), fr, seed);
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (index.count(s) == 0) {
      throw DataError(std::string("dataset too small: the ") + split_name(s) + " split would be empty");
    }
  }
  write_index_csv(out_path, index);
  out << "indexed " << index.entries.size() << " images: train " << index.count(Split::kTrain) << ", val "
      << index.count(Split::kVal) << ", test " << index.count(Split::kTest) << '\n';
  return kExitOk;
}

int cmd_train(RunConfig cfg, std::ostream& out) {
  const fs::path out_dir = cfg.out_dir;
  DatasetIndex data;
  if (!cfg.index.empty()) {
    if (!fs::exists(cfg.index)) throw DataError("index " + cfg.index + " does not exist");
    data = read_index_csv(cfg.index);
  } else if (!cfg.data_root.empty()) {
    data = stratified_split(index_dataset(cfg.data_root), cfg.fractions, cfg.seed);
    write_index_csv(out_dir / "index.csv", data);
  } else {
    throw InvalidArgument("train needs an index (--index or config 'index') or a data_root");
  }
  if (data.count(Split::kTrain) == 0) throw DataError("the train split is empty");

  ArchitectureConfig arch = architecture_for(cfg.head);
  arch.bn_momentum = cfg.bn_momentum;
  arch.bn_epsilon = cfg.bn_epsilon;
  ModelGraph model = build_custom_cnn(arch, cfg.seed);
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.seed = cfg.seed;
  tc.plateau.factor = cfg.plateau_factor;
  tc.plateau.patience = cfg.plateau_patience;
  tc.plateau.min_lr = cfg.plateau_min_lr;
  tc.early_stop_threshold = cfg.early_stop_threshold;
  tc.on_epoch = [&](const EpochRecord& r) { print_epoch(out, r); out.flush(); };

  write_text_file(out_dir / "config.json", run_config_to_json(cfg));
  const TrainHistory history = train(model, data, tc);
  save_weights(model, out_dir / "weights.mcnn");
  write_text_file(out_dir / "history.csv", history_to_csv(history));
  if (history.records.empty()) {
    out << "no epochs run; initial weights saved\n";
  } else {
    out << "final ";
    print_epoch(out, history.records.back());
  }
  out << "weights: " << (out_dir / "weights.mcnn").string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const std::string& weights, const std::string& index_path, const std::string& split_text,
                 const std::string& head, std::size_t batch_size, const std::string& out_path, std::ostream& out) {
  const Split split = parse_split(split_text);
  ModelGraph model = build_custom_cnn(architecture_for(head), 0);
  load_weights(model, fs::path(weights));
  if (!fs::exists(index_path)) throw DataError("index " + index_path + " does not exist");
  const DatasetIndex data = read_index_csv(index_path);
  if (data.count(split) == 0) throw DataError(std::string("the ") + split_name(split) + " split is empty");
  const EvalResult result = evaluate(model, data, split, batch_size);
  const ConfusionMatrix cm = confusion_matrix(result.y_true, result.y_pred);
  const ClassificationReport report = classification_report(cm);
  const std::string json = report_to_json(report, cm);
  if (out_path.empty()) {
    out << json;
  } else {
    write_text_file(out_path, json);
    out << report_to_text(report);
    out << "confusion: [[" << cm.counts[0][0] << ", " << cm.counts[0][1] << "], [" << cm.counts[1][0] << ", "
        << cm.counts[1][1] << "]]\n";
  }
  return kExitOk;
}

struct ExplainOptions {
  std::string weights;
  std::string image;
  std::string method;
  std::uint64_t seed = 0;
  std::size_t segments = 0;  // 0: method default
  int target_class = -1;     // -1: predicted class
  std::string out_dir = ".";
  std::size_t samples = 0;   // 0: method default
  std::string segmenter = "grid";
  std::string baseline = "mean";
  std::string head = "softmax2";
  std::size_t top_k = 5;
  std::size_t scale = 1;
};

SegmentMap make_segments(const Tensor& image, const ExplainOptions& o, std::size_t default_segments) {
  const std::size_t n = o.segments == 0 ? default_segments : o.segments;
  SegmentParams params;
  params.method = parse_segment_method(o.segmenter);
  params.target_segments = n;
  params.grid_cells = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n)))));
  return segment_image(image, params);
}

void write_overlay(const fs::path& path, const Tensor& overlay, std::size_t scale) {
  write_png(path, upscale(to_rgb8(overlay), scale));
}

int cmd_explain(const ExplainOptions& o, std::ostream& out) {
  const Method method = parse_method(o.method);
  if (o.target_class < -1 || o.target_class > 1) throw InvalidArgument("--class must be 0 or 1");
  if (o.scale == 0) throw InvalidArgument("--scale must be positive");
  const Baseline baseline = parse_baseline(o.baseline);
  ModelGraph model = build_custom_cnn(architecture_for(o.head), 0);
  load_weights(model, fs::path(o.weights));
  const Tensor image = load_and_preprocess(o.image);

  std::array<double, 2> probs{};
  {
    NoGradGuard no_grad;
    const ForwardResult r = forward(model, reshape(image, {1, kImageSize, kImageSize, 3}), Mode::kInfer);
    probs = class_probabilities(r, model.head()).front();
  }
  const int predicted = predicted_class(probs);
  const int target = o.target_class >= 0 ? o.target_class : predicted;
  out << "P(parasitized) " << fixed(probs[0]) << ", P(uninfected) " << fixed(probs[1]) << "; predicted "
      << label_name(predicted) << '\n';

  const fs::path out_dir = o.out_dir;
  const std::string stem = fs::path(o.image).stem().string() + "_" + to_string(method);
  OverlayStyle style;
  style.top_k = o.top_k;
  std::vector<Explanation> explanations;

  if (method == Method::kSaliency) {
    Explanation e = saliency_map(model, image, target);
    e.seed = o.seed;
    const Tensor overlay = render_overlay(image, e, nullptr, style);
    const fs::path png = out_dir / (stem + ".png");
    write_png(png, upscale(hconcat({to_rgb8(image), to_rgb8(overlay)}), o.scale));
    out << "wrote " << png.string() << '\n';
    explanations.push_back(std::move(e));
  } else if (method == Method::kLime) {
    const SegmentMap segments = make_segments(image, o, 49);
    auto masked = std::make_shared<MaskedModel>(model, image, segments, baseline);
    SetFunction game = make_set_function(masked, target);
    LimeConfig lc;
    lc.n_samples = o.samples == 0 ? 1000 : o.samples;
    lc.seed = o.seed;
    Explanation e = lime_explain(game, lc);
    e.target_class = target;
    e.segments_digest = segments.digest();
    const fs::path png = out_dir / (stem + ".png");
    write_overlay(png, render_overlay(image, e, &segments, style), o.scale);
    out << "wrote " << png.string() << " (R^2 " << fixed(e.r2) << ")\n";
    explanations.push_back(std::move(e));
  } else {
    const SegmentMap segments = make_segments(image, o, 100);
    auto masked = std::make_shared<MaskedModel>(model, image, segments, baseline);
    ShapConfig sc;
    sc.n_samples = o.samples == 0 ? 2048 : o.samples;
    sc.seed = o.seed;
    std::vector<int> classes{0, 1};
    if (o.target_class >= 0) classes = {o.target_class};
    for (int cls : classes) {
      SetFunction game = make_set_function(masked, cls);
      Explanation e = kernel_shap(game, sc);
      e.target_class = cls;
      e.segments_digest = segments.digest();
      const fs::path png = out_dir / (stem + "_class" + std::to_string(cls) + ".png");
      write_overlay(png, render_overlay(image, e, &segments, style), o.scale);
      out << "wrote " << png.string() << '\n';
      explanations.push_back(std::move(e));
    }
  }
  const fs::path json = out_dir / (stem + ".json");
  write_text_file(json, explanations_to_json(explanations));
  out << "wrote " << json.string() << '\n';
  return kExitOk;
}

int cmd_summary(const std::string& head, const std::string& filters, std::ostream& out) {
  ArchitectureConfig arch = architecture_for(head);
  if (!filters.empty()) {
    arch.block_filters = parse_size_list(filters);
    arch.convs_per_block = default_convs_per_block(arch.block_filters.size());
  }
  out << summary_table(build_custom_cnn(arch, 0));
  return kExitOk;
}

}  // namespace

void configure_allocator() {
#ifdef __GLIBC__
  // Activations run to tens of megabytes; recycling them beats fresh zeroed
  // pages from mmap on every batch.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

RunConfig parse_run_config(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw InvalidArgument("config must be a JSON object");
  static const std::set<std::string> known{
      "seed", "data_root", "index", "train_fraction", "val_fraction", "test_fraction", "batch_size", "learning_rate",
      "epochs", "head", "bn_momentum", "bn_epsilon", "plateau_factor", "plateau_patience", "plateau_min_lr", "early_stop_threshold",
      "lime_samples", "lime_kernel_width", "lime_ridge", "top_k", "shap_samples", "segmenter", "baseline", "out_dir"};
  for (const auto& item : doc.items()) {
    if (!known.contains(item.key())) throw InvalidArgument("unknown config key '" + item.key() + "'");
  }
  RunConfig c;
  read_key(doc, "seed", c.seed);
  read_key(doc, "data_root", c.data_root);
  read_key(doc, "index", c.index);
  read_key(doc, "train_fraction", c.fractions.train);
  read_key(doc, "val_fraction", c.fractions.val);
  read_key(doc, "test_fraction", c.fractions.test);
  read_key(doc, "batch_size", c.batch_size);
  read_key(doc, "learning_rate", c.learning_rate);
  read_key(doc, "epochs", c.epochs);
  read_key(doc, "head", c.head);
  read_key(doc, "bn_momentum", c.bn_momentum);
  read_key(doc, "bn_epsilon", c.bn_epsilon);
  read_key(doc, "plateau_factor", c.plateau_factor);
  read_key(doc, "plateau_patience", c.plateau_patience);
  read_key(doc, "plateau_min_lr", c.plateau_min_lr);
  read_key(doc, "early_stop_threshold", c.early_stop_threshold);
  read_key(doc, "lime_samples", c.lime_samples);
  read_key(doc, "lime_kernel_width", c.lime_kernel_width);
  read_key(doc, "lime_ridge", c.lime_ridge);
  read_key(doc, "top_k", c.top_k);
  read_key(doc, "shap_samples", c.shap_samples);
  read_key(doc, "segmenter", c.segmenter);
  read_key(doc, "baseline", c.baseline);
  read_key(doc, "out_dir", c.out_dir);
  parse_head(c.head);
  parse_segment_method(c.segmenter);
  parse_baseline(c.baseline);
  if (c.batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json doc;
  doc["seed"] = c.seed;
  doc["data_root"] = c.data_root;
  doc["index"] = c.index;
  doc["train_fraction"] = c.fractions.train;
  doc["val_fraction"] = c.fractions.val;
  doc["test_fraction"] = c.fractions.test;
  doc["batch_size"] = c.batch_size;
  doc["learning_rate"] = c.learning_rate;
  doc["epochs"] = c.epochs;
  doc["head"] = c.head;
  doc["bn_momentum"] = c.bn_momentum;
  doc["bn_epsilon"] = c.bn_epsilon;
  doc["plateau_factor"] = c.plateau_factor;
  doc["plateau_patience"] = c.plateau_patience;
  doc["plateau_min_lr"] = c.plateau_min_lr;
  doc["early_stop_threshold"] = c.early_stop_threshold;
  doc["lime_samples"] = c.lime_samples;
  doc["lime_kernel_width"] = c.lime_kernel_width;
  doc["lime_ridge"] = c.lime_ridge;
  doc["top_k"] = c.top_k;
  doc["shap_samples"] = c.shap_samples;
  doc["segmenter"] = c.segmenter;
  doc["baseline"] = c.baseline;
  doc["out_dir"] = c.out_dir;
  return doc.dump(2) + "\n";
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Malaria cell CNN: data preparation, training, evaluation and explanations", "mcnn"};
  app.require_subcommand(1);

  std::string root, index_out = "index.csv";
  std::uint64_t seed = 0;
  SplitFractions fractions;
  auto* prepare = app.add_subcommand("prepare", "Index a dataset root and write a stratified split CSV");
  prepare->add_option("--root", root, "Directory with parasitized/ and uninfected/ subdirectories")->required();
  prepare->add_option("--seed", seed, "Split seed");
  prepare->add_option("--out", index_out, "Output CSV path");
  prepare->add_option("--train-fraction", fractions.train);
  prepare->add_option("--val-fraction", fractions.val);
  prepare->add_option("--test-fraction", fractions.test);

  std::string config_path, out_dir, train_index, head, data_root;
  std::optional<std::size_t> epochs, batch;
  std::optional<std::uint64_t> train_seed;
  std::optional<double> lr, bn_momentum;
  auto* train_cmd = app.add_subcommand("train", "Train the CNN; writes weights.mcnn and history.csv");
  train_cmd->add_option("--config", config_path, "Flat JSON run configuration");
  train_cmd->add_option("--out-dir", out_dir, "Output directory");
  train_cmd->add_option("--index", train_index, "Prepared index CSV");
  train_cmd->add_option("--data-root", data_root, "Dataset root (split on the fly when no index is given)");
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_option("--batch-size", batch);
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--bn-momentum", bn_momentum);
  train_cmd->add_option("--head", head, "softmax2 or sigmoid1");

  std::string weights, eval_index, split = "test", eval_out, eval_head = "softmax2";
  std::size_t eval_batch = 32;
  auto* eval_cmd = app.add_subcommand("evaluate", "Classification report for one split");
  eval_cmd->add_option("--weights", weights)->required();
  eval_cmd->add_option("--index", eval_index)->required();
  eval_cmd->add_option("--split", split, "train, val or test");
  eval_cmd->add_option("--head", eval_head);
  eval_cmd->add_option("--batch-size", eval_batch);
  eval_cmd->add_option("--out", eval_out, "Write the report JSON here (stdout when omitted)");

  ExplainOptions xo;
  auto* explain = app.add_subcommand("explain", "Explain one image with saliency, lime or shap");
  explain->add_option("--weights", xo.weights)->required();
  explain->add_option("--image", xo.image)->required();
  explain->add_option("--method", xo.method, "saliency, lime or shap")->required();
  explain->add_option("--seed", xo.seed);
  explain->add_option("--segments", xo.segments, "Number of segments (lime 49, shap 100)");
  explain->add_option("--class", xo.target_class, "0 parasitized, 1 uninfected (default: predicted)");
  explain->add_option("--out-dir", xo.out_dir);
  explain->add_option("--samples", xo.samples, "Perturbation samples (lime 1000, shap 2048)");
  explain->add_option("--segmenter", xo.segmenter, "grid or slic");
  explain->add_option("--baseline", xo.baseline, "mean or gray");
  explain->add_option("--head", xo.head);
  explain->add_option("--top-k", xo.top_k);
  explain->add_option("--scale", xo.scale, "Integer upscaling of the written PNGs");

  std::size_t synth_n = 500;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic cell dataset");
  synth->add_option("--n", synth_n, "Images per class");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out)->required();

  std::string summary_head = "softmax2", block_filters;
  auto* summary = app.add_subcommand("summary", "Print the architecture table");
  summary->add_option("--head", summary_head);
  summary->add_option("--block-filters", block_filters, "Comma-separated filters per block, e.g. 32,64,128,256");

  std::vector<std::string> argv_store{"mcnn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prepare) return cmd_prepare(root, seed, index_out, fractions, out);
    if (*train_cmd) {
      RunConfig cfg;
      if (!config_path.empty()) {
        if (!fs::exists(config_path)) throw InvalidArgument("config " + config_path + " does not exist");
        cfg = parse_run_config(read_text_file(config_path));
      }
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (!train_index.empty()) cfg.index = train_index;
      if (!data_root.empty()) cfg.data_root = data_root;
      if (!head.empty()) cfg.head = head;
      if (epochs) cfg.epochs = *epochs;
      if (batch) cfg.batch_size = *batch;
      if (lr) cfg.learning_rate = *lr;
      if (train_seed) cfg.seed = *train_seed;
      if (bn_momentum) cfg.bn_momentum = *bn_momentum;
      parse_head(cfg.head);
      if (cfg.batch_size == 0) throw InvalidArgument("batch size must be positive");
      return cmd_train(cfg, out);
    }
    if (*eval_cmd) return cmd_evaluate(weights, eval_index, split, eval_head, eval_batch, eval_out, out);
    if (*explain) return cmd_explain(xo, out);
    if (*synth) {
      const DatasetIndex index = generate_synthetic(synth_n, synth_seed, synth_out);
      out << "generated " << index.entries.size() << " images in " << synth_out << '\n';
      return kExitOk;
    }
    if (*summary) return cmd_summary(summary_head, block_filters, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const CorruptFileError& e) {
    err << "corrupt file: " << e.what() << '\n';
    return kExitCorrupt;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace mcnn
