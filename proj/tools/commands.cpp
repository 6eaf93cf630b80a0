#include "commands.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "canids/eval_harness.hpp"
#include "canids/param_store.hpp"
#include "canids/run_config.hpp"
#include "canids/traffic_synth.hpp"

namespace canids::cli {

namespace {

std::string shortest(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <typename F>
auto as_usage(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw UsageError(what + ": " + e.what());
  }
}

Ratio parse_ratio(const std::string& flag, const std::string& text) {
  return as_usage("invalid " + flag, [&] { return Ratio::parse(text); });
}

void check_output_dir(const std::string& path) {
  if (path.empty()) throw UsageError("missing output path");
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent))
    throw UsageError("output directory does not exist: " + parent.string());
}

std::ofstream open_output(const std::string& path) {
  check_output_dir(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error("failed writing " + path);
}

void write_json(const std::string& path, const nlohmann::json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

void write_config_comment(std::ostream& out, const nlohmann::json& run_config, const std::string& hash) {
  out << "# config_hash=" << hash << '\n' << "# run_config=" << run_config.dump() << '\n';
}

struct LoadedData {
  std::vector<LabeledFeature> rows;
  std::vector<std::string> sources;
};

LoadedData load_logs(const std::vector<std::string>& logs, const LogFormat& format, const FeatureConfig& features) {
  LoadedData data;
  for (const auto& path : logs) {
    auto parsed = parse_log_file(path, format);
    if (!parsed.rejects.empty()) {
      std::cerr << path << ": " << parsed.rejects.size() << " rejected rows (first: row "
                << parsed.rejects.front().row << ": " << parsed.rejects.front().reason << ")\n";
    }
    // Intervals need the full per-log history, so features come before any split.
    auto rows = extract_stream(parsed.frames, features);
    data.rows.insert(data.rows.end(), rows.begin(), rows.end());
    data.sources.push_back(path);
  }
  return data;
}

struct Selected {
  std::vector<std::size_t> indices;  // into LoadedData::rows
  nlohmann::json summary;
};

Selected select_rows(const LoadedData& data, const SelectionOptions& opts, const std::string& default_part) {
  std::vector<ClassLabel> labels;
  labels.reserve(data.rows.size());
  for (const auto& r : data.rows) labels.push_back(r.y);
  const std::string part = opts.part.empty() ? default_part : opts.part;
  if (part != "train" && part != "test") throw UsageError("--part must be train or test");

  Selected sel;
  DatasetSplit split;
  if (opts.split_ratio.empty()) {
    split.train.resize(labels.size());
    std::iota(split.train.begin(), split.train.end(), std::size_t{0});
    split.train_counts = count_labels(labels, split.train);
    sel.summary["split"] = nullptr;
  } else {
    if (labels.empty()) throw UsageError("no frames to split");
    split = split_train_test(labels, parse_ratio("--split-ratio", opts.split_ratio), opts.split_seed);
    sel.summary["split"] = split_manifest(split, data.sources);
  }
  const bool whole = opts.split_ratio.empty();
  sel.summary["part"] = whole ? "all" : part;

  if (opts.balanced) {
    if (!whole && part != "train") throw UsageError("--balanced applies to the training part only");
    BalanceOptions b{opts.per_attack, parse_ratio("--normal-ratio", opts.normal_ratio)};
    sel.indices = as_usage("cannot build the balanced subset",
                           [&] { return build_balanced_train_subset(labels, split, b, opts.split_seed); });
  } else {
    sel.indices = (whole || part == "train") ? split.train : split.test;
  }
  sel.summary["sources"] = data.sources;
  sel.summary["total"] = sel.indices.size();
  sel.summary["per_label"] = counts_to_json(count_labels(labels, sel.indices));
  return sel;
}

std::vector<LabeledFeature> gather_rows(const LoadedData& data, const Selected& sel) {
  return gather<LabeledFeature>(data.rows, sel.indices);
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return hex64(fnv1a64(s.str()));
}

struct LoadedModel {
  GenClassifier model;
  nlohmann::json metadata;
};

LoadedModel load_model(const std::string& path, const FeatureConfig& features) {
  auto c = load_container(path);
  LoadedModel m{GenClassifier::from_container(c), c.metadata};
  if (!c.metadata.contains("feature_hash")) throw Error(path + " has no feature configuration hash");
  const auto expected = c.metadata.at("feature_hash").get<std::string>();
  if (expected != hex64(features.hash())) {
    throw UsageError("feature configuration " + to_json(features).dump() + " does not match the checkpoint (" +
                     c.metadata.value("feature_config", nlohmann::json()).dump() + ")");
  }
  return m;
}

nlohmann::json selection_json(const SelectionOptions& s, const std::string& default_part) { return s.to_json(default_part); }

}  // namespace

LogFormat LogFormatOptions::resolve() const {
  LogFormat f;
  f.timestamp_col = timestamp_col;
  f.id_col = id_col;
  f.dlc_col = dlc_col;
  f.data_col = data_col;
  f.flag_col = flag_col;
  if (delimiter.size() != 1) throw UsageError("--delimiter must be a single character");
  f.delimiter = delimiter[0];
  f.flag_map = as_usage("invalid --flag-map", [&] { return parse_flag_map(flag_map); });
  f.filename_rules = as_usage("invalid --filename-rules", [&] { return parse_filename_rules(filename_rules); });
  if (!file_label.empty()) {
    auto label = label_from_name(file_label);
    if (!label || *label == ClassLabel::Normal) throw UsageError("--file-label must name an attack");
    f.file_label = label;
  }
  if (!(max_reject_fraction >= 0.0 && max_reject_fraction <= 1.0))
    throw UsageError("--max-reject-fraction must be within [0, 1]");
  f.max_reject_fraction = max_reject_fraction;
  return f;
}

FeatureConfig FeatureOptions::resolve() const {
  if (!(t_max > 0.0)) throw UsageError("--t-max must be positive");
  if (padding_byte < 0 || padding_byte > 255) throw UsageError("--padding-byte must be within [0, 255]");
  return {t_max, static_cast<std::uint8_t>(padding_byte)};
}

ModelConfig ModelOptions::resolve() const {
  ModelConfig c = config;
  auto m = mode_from_name(mode);
  if (!m) throw UsageError("--mode must be FullElbo or PaperLiteral");
  c.mode = *m;
  if (c.z_dim == 0) throw UsageError("--z-dim must be positive");
  if (c.encoder_width == 0 || c.decoder_width == 0) throw UsageError("layer widths must be positive");
  if (c.samples == 0) throw UsageError("--samples must be positive");
  return c;
}

nlohmann::json SelectionOptions::to_json(const std::string& default_part) const {
  return {{"split_ratio", split_ratio},
          {"split_seed", split_seed},
          {"part", split_ratio.empty() ? "all" : (part.empty() ? default_part : part)},
          {"balanced", balanced},
          {"per_attack", per_attack},
          {"normal_ratio", normal_ratio}};
}

int run_gen(const GenOptions& opts) {
  if (opts.out.empty()) throw UsageError("missing output path (--out)");
  const LogFormat format = opts.format.resolve();
  SynthConfig synth;
  if (!opts.scenarios.empty()) {
    std::ifstream in(opts.scenarios);
    if (!in) throw UsageError("cannot read scenario file " + opts.scenarios);
    synth = as_usage("invalid scenario file", [&] { return synth_config_from_json(nlohmann::json::parse(in)); });
    if (opts.duration_set) synth.duration = opts.duration;
  } else {
    synth.duration = opts.duration;
    if (!(synth.duration > 0.0)) throw UsageError("--duration must be positive");
    synth.scenarios = default_scenarios(synth.duration);
  }
  if (!(synth.duration > 0.0)) throw UsageError("duration must be positive");

  const std::string manifest_path = opts.manifest.empty() ? opts.out + ".manifest.json" : opts.manifest;
  nlohmann::json run_config = {{"command", "gen"},     {"out", opts.out},
                               {"manifest", manifest_path}, {"seed", opts.seed},
                               {"synth", to_json(synth)},   {"log_format", to_json(format)}};
  const std::string hash = config_hash(run_config);

  auto frames = as_usage("invalid scenario configuration",
                         [&] { return generate(synth.profile, synth.scenarios, synth.duration, opts.seed); });

  auto out = open_output(opts.out);
  write_config_comment(out, run_config, hash);
  write_log(frames, format, out);
  finish(out, opts.out);

  const auto labels = labels_of(frames);
  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  nlohmann::json manifest = {{"run_config", run_config},
                             {"config_hash", hash},
                             {"log", opts.out},
                             {"frames", frames.size()},
                             {"per_label", counts_to_json(count_labels(labels, all))},
                             {"seed", opts.seed}};
  write_json(manifest_path, manifest);
  std::cerr << "wrote " << frames.size() << " frames to " << opts.out << '\n';
  return kExitOk;
}

int run_split(const SplitOptions& opts) {
  if (opts.logs.empty()) throw UsageError("at least one --log is required");
  if (opts.out.empty()) throw UsageError("missing output path (--out)");
  const LogFormat format = opts.format.resolve();
  const Ratio ratio = parse_ratio("--ratio", opts.ratio);
  nlohmann::json run_config = {{"command", "split"},   {"logs", opts.logs},
                               {"out", opts.out},       {"ratio", ratio.to_string()},
                               {"seed", opts.seed},     {"balanced", opts.balanced},
                               {"per_attack", opts.per_attack}, {"normal_ratio", opts.normal_ratio},
                               {"log_format", to_json(format)}};
  const std::string hash = config_hash(run_config);

  std::vector<ClassLabel> labels;
  for (const auto& path : opts.logs) {
    auto parsed = parse_log_file(path, format);
    for (const auto& f : parsed.frames) labels.push_back(f.label);
  }
  if (labels.empty()) throw UsageError("the input logs contain no frames");
  const auto split = split_train_test(labels, ratio, opts.seed);
  auto manifest = split_manifest(split, opts.logs);
  if (opts.balanced) {
    BalanceOptions b{opts.per_attack, parse_ratio("--normal-ratio", opts.normal_ratio)};
    auto subset = as_usage("cannot build the balanced subset",
                           [&] { return build_balanced_train_subset(labels, split, b, opts.seed); });
    manifest["balanced_train"] = {{"total", subset.size()},
                                  {"per_label", counts_to_json(count_labels(labels, subset))},
                                  {"per_attack", opts.per_attack},
                                  {"normal_ratio", opts.normal_ratio}};
  }
  manifest["run_config"] = run_config;
  manifest["config_hash"] = hash;
  write_json(opts.out, manifest);
  return kExitOk;
}

int run_train(const TrainOptions& opts) {
  if (opts.logs.empty()) throw UsageError("at least one --log is required");
  if (opts.out.empty()) throw UsageError("missing output path (--out)");
  const LogFormat format = opts.format.resolve();
  const FeatureConfig features = opts.features.resolve();
  const ModelConfig model_cfg = opts.model.resolve();
  TrainConfig tc = opts.train;
  auto unit = iteration_unit_from_name(opts.iteration_unit);
  if (!unit) throw UsageError("--iteration-unit must be epochs or batches");
  tc.unit = *unit;
  tc.seed = opts.seed;
  if (tc.batch_size == 0) throw UsageError("--batch-size must be positive");
  if (!(tc.adam.lr > 0.0)) throw UsageError("--lr must be positive");
  const std::string trace_path = opts.trace.empty() ? opts.out + ".trace.csv" : opts.trace;

  nlohmann::json run_config = {{"command", "train"},
                               {"logs", opts.logs},
                               {"out", opts.out},
                               {"trace", trace_path},
                               {"seed", opts.seed},
                               {"train", to_json(tc)},
                               {"model", to_json(model_cfg)},
                               {"features", to_json(features)},
                               {"log_format", to_json(format)},
                               {"selection", selection_json(opts.selection, "train")}};
  const std::string hash = config_hash(run_config);

  const auto data = load_logs(opts.logs, format, features);
  const auto sel = select_rows(data, opts.selection, "train");
  const auto rows = gather_rows(data, sel);
  if (rows.empty()) throw UsageError("no training frames selected");
  std::cerr << "training on " << rows.size() << " frames\n";

  std::ostringstream trace;
  write_config_comment(trace, run_config, hash);
  trace << "step,mean_neg_elbo,train_accuracy\n";
  auto on_trace = [&](const TraceRow& r) {
    trace << r.step << ',' << shortest(r.mean_neg_elbo) << ',' << shortest(r.train_accuracy) << '\n';
    std::cerr << "step " << r.step << "  neg_elbo " << r.mean_neg_elbo << "  acc " << r.train_accuracy << '\n';
  };

  nlohmann::json metadata = {{"run_config", run_config},
                             {"config_hash", hash},
                             {"feature_config", to_json(features)},
                             {"feature_hash", hex64(features.hash())},
                             {"lr", tc.adam.lr},
                             {"batch_size", tc.batch_size},
                             {"train", to_json(tc)},
                             {"dataset", sel.summary}};
  auto write_trace = [&] {
    auto out = open_output(trace_path);
    out << trace.str();
    finish(out, trace_path);
  };

  // Check output paths before spending time on training.
  check_output_dir(opts.out);
  check_output_dir(trace_path);
  try {
    auto result = train(GenClassifier::initialize(model_cfg, opts.seed), rows, tc, on_trace);
    save_container(opts.out, result.model.to_container(opts.seed, result.optimizer, metadata));
    write_trace();
  } catch (const TrainingDiverged& e) {
    const auto& good = e.last_good();
    metadata["diverged"] = e.what();
    const std::string partial = opts.out + ".partial";
    save_container(partial, good.model.to_container(opts.seed, good.optimizer, metadata));
    std::filesystem::remove(opts.out);
    write_trace();
    std::cerr << "last finite state saved to " << partial << '\n';
    throw;
  }
  return kExitOk;
}

int run_predict(const PredictOptions& opts) {
  if (opts.logs.empty()) throw UsageError("at least one --log is required");
  if (opts.model.empty()) throw UsageError("--model is required");
  if (opts.out.empty()) throw UsageError("missing output path (--out)");
  const LogFormat format = opts.format.resolve();
  const FeatureConfig features = opts.features.resolve();
  nlohmann::json run_config = {{"command", "predict"},
                               {"logs", opts.logs},
                               {"model", opts.model},
                               {"out", opts.out},
                               {"seed", opts.seed},
                               {"features", to_json(features)},
                               {"log_format", to_json(format)},
                               {"selection", selection_json(opts.selection, "test")}};
  const std::string hash = config_hash(run_config);

  const auto loaded = load_model(opts.model, features);
  const auto data = load_logs(opts.logs, format, features);
  const auto sel = select_rows(data, opts.selection, "test");
  const auto rows = gather_rows(data, sel);
  if (rows.empty()) throw UsageError("no frames to classify");
  const auto preds = classify_features(loaded.model, rows, opts.seed);

  auto out = open_output(opts.out);
  write_config_comment(out, run_config, hash);
  out << "index,label";
  for (auto l : kAllLabels) out << ",p_" << label_name(l);
  out << '\n';
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << sel.indices[i] << ',' << label_name(preds[i].label);
    for (double p : preds[i].probabilities) out << ',' << shortest(p);
    out << '\n';
  }
  finish(out, opts.out);
  return kExitOk;
}

int run_eval(const EvalOptions& opts) {
  if (opts.logs.empty()) throw UsageError("at least one --log is required");
  if (opts.model.empty()) throw UsageError("--model is required");
  const LogFormat format = opts.format.resolve();
  const FeatureConfig features = opts.features.resolve();
  nlohmann::json run_config = {{"command", "eval"},
                               {"logs", opts.logs},
                               {"model", opts.model},
                               {"out_json", opts.out_json},
                               {"out_text", opts.out_text},
                               {"seed", opts.seed},
                               {"features", to_json(features)},
                               {"log_format", to_json(format)},
                               {"selection", selection_json(opts.selection, "test")}};
  const std::string hash = config_hash(run_config);

  const auto loaded = load_model(opts.model, features);
  const auto data = load_logs(opts.logs, format, features);
  const auto sel = select_rows(data, opts.selection, "test");
  const auto rows = gather_rows(data, sel);
  if (rows.empty()) throw UsageError("no frames to evaluate");
  const auto preds = classify_features(loaded.model, rows, opts.seed);

  std::vector<LabelPair> pairs;
  pairs.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) pairs.emplace_back(rows[i].y, preds[i].label);
  nlohmann::json meta = {{"model", opts.model},
                         {"model_hash", file_hash(opts.model)},
                         {"dataset", sel.summary},
                         {"seed", opts.seed},
                         {"run_config", run_config},
                         {"config_hash", hash}};
  const auto report = build_report(confusion(pairs), meta);

  const std::string text = render_text(report) + "\nconfig_hash " + hash + "\n";
  if (!opts.out_json.empty()) write_json(opts.out_json, to_json(report));
  if (!opts.out_text.empty()) {
    auto out = open_output(opts.out_text);
    out << text;
    finish(out, opts.out_text);
  }
  if (!opts.quiet) std::cout << text;
  return kExitOk;
}

namespace {

void add_format_options(CLI::App* app, LogFormatOptions& f) {
  const std::string g = "Log format";
  app->add_option("--timestamp-col", f.timestamp_col, "Timestamp column (negative counts from the end)")
      ->group(g)
      ->capture_default_str();
  app->add_option("--id-col", f.id_col, "Hex CAN ID column")->group(g)->capture_default_str();
  app->add_option("--dlc-col", f.dlc_col, "DLC column")->group(g)->capture_default_str();
  app->add_option("--data-col", f.data_col, "First payload byte column")->group(g)->capture_default_str();
  app->add_option("--flag-col", f.flag_col, "Flag column")->group(g)->capture_default_str();
  app->add_option("--delimiter", f.delimiter, "Field delimiter")->group(g)->capture_default_str();
  app->add_option("--flag-map", f.flag_map, "Flag to label map; @file means the file's attack label")
      ->group(g)
      ->capture_default_str();
  app->add_option("--filename-rules", f.filename_rules, "Filename substring to attack label rules")
      ->group(g)
      ->capture_default_str();
  app->add_option("--file-label", f.file_label, "Attack label for injected rows of every input log")->group(g);
  app->add_option("--max-reject-fraction", f.max_reject_fraction, "Rejected-row fraction that aborts parsing")
      ->group(g)
      ->capture_default_str();
}

void add_feature_options(CLI::App* app, FeatureOptions& f) {
  const std::string g = "Features";
  app->add_option("--t-max", f.t_max, "Interval saturation in seconds")->group(g)->capture_default_str();
  app->add_option("--padding-byte", f.padding_byte, "Payload byte used past the DLC")
      ->group(g)
      ->capture_default_str();
}

void add_selection_options(CLI::App* app, SelectionOptions& s) {
  const std::string g = "Dataset selection";
  app->add_option("--split-ratio", s.split_ratio, "Train:test ratio, e.g. 3:1 (default: use every frame)")
      ->group(g);
  app->add_option("--split-seed", s.split_seed, "Seed of the split and the balanced subset")
      ->group(g)
      ->capture_default_str();
  app->add_option("--part", s.part, "Split part to use: train or test")->group(g);
  app->add_flag("--balanced", s.balanced, "Draw the balanced training subset")->group(g);
  app->add_option("--per-attack", s.per_attack, "Frames per attack subset")->group(g)->capture_default_str();
  app->add_option("--normal-ratio", s.normal_ratio, "Normal:attack ratio inside each subset")
      ->group(g)
      ->capture_default_str();
}

template <typename Fn, typename Opts>
int guarded(Fn fn, const Opts& opts) {
  try {
    return fn(opts);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"CAN bus intrusion detection with a latent-variable generative classifier"};
  app.set_config("--config", "", "Key-value config file; [command] sections hold per-command keys");
  app.allow_config_extras(false);
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a labeled synthetic CAN log");
  gen_cmd->add_option("--out,-o", gen.out, "Output log path");
  gen_cmd->add_option("--manifest", gen.manifest, "Manifest path (default: <out>.manifest.json)");
  gen_cmd->add_option("--scenarios", gen.scenarios, "JSON file with duration, profile and scenarios");
  auto* duration = gen_cmd->add_option("--duration", gen.duration, "Capture length in seconds")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  add_format_options(gen_cmd, gen.format);

  SplitOptions split;
  auto* split_cmd = app.add_subcommand("split", "Split logs into train/test and write the manifest");
  split_cmd->add_option("--log,-l", split.logs, "Input log (repeatable)");
  split_cmd->add_option("--out,-o", split.out, "Manifest path");
  split_cmd->add_option("--ratio", split.ratio, "Train:test ratio")->capture_default_str();
  split_cmd->add_option("--seed", split.seed, "Split seed")->capture_default_str();
  split_cmd->add_flag("--balanced", split.balanced, "Also report the balanced training subset");
  split_cmd->add_option("--per-attack", split.per_attack, "Frames per attack subset")->capture_default_str();
  split_cmd->add_option("--normal-ratio", split.normal_ratio, "Normal:attack ratio")->capture_default_str();
  add_format_options(split_cmd, split.format);

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier");
  train_cmd->add_option("--log,-l", tr.logs, "Training log (repeatable)");
  train_cmd->add_option("--out,-o", tr.out, "Checkpoint path");
  train_cmd->add_option("--trace", tr.trace, "Loss trace CSV (default: <out>.trace.csv)");
  train_cmd->add_option("--seed", tr.seed, "Seed for initialization and training")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.train.batch_size, "Minibatch size")->capture_default_str();
  train_cmd->add_option("--iterations", tr.train.iterations, "Number of epochs or batches")->capture_default_str();
  train_cmd->add_option("--iteration-unit", tr.iteration_unit, "epochs or batches")->capture_default_str();
  train_cmd->add_option("--lr", tr.train.adam.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--beta1", tr.train.adam.beta1, "Adam beta1")->capture_default_str();
  train_cmd->add_option("--beta2", tr.train.adam.beta2, "Adam beta2")->capture_default_str();
  train_cmd->add_option("--epsilon", tr.train.adam.epsilon, "Adam epsilon")->capture_default_str();
  train_cmd->add_option("--trace-samples", tr.train.trace_samples, "Frames scored for each trace row")
      ->capture_default_str();
  train_cmd->add_option("--trace-every", tr.train.trace_every, "Batches between trace rows (0: per epoch)")
      ->capture_default_str();
  const std::string mg = "Model";
  auto& mc = tr.model.config;
  train_cmd->add_option("--mode", tr.model.mode, "FullElbo or PaperLiteral")->group(mg)->capture_default_str();
  train_cmd->add_option("--z-dim", mc.z_dim, "Latent z size")->group(mg)->capture_default_str();
  train_cmd->add_option("--m-dim", mc.m_dim, "Latent m size")->group(mg)->capture_default_str();
  train_cmd->add_option("--encoder-layers", mc.encoder_layers, "Hidden layers per encoder")
      ->group(mg)
      ->capture_default_str();
  train_cmd->add_option("--encoder-width", mc.encoder_width, "Encoder hidden width")->group(mg)->capture_default_str();
  train_cmd->add_option("--decoder-layers", mc.decoder_layers, "Decoder hidden layers")
      ->group(mg)
      ->capture_default_str();
  train_cmd->add_option("--decoder-width", mc.decoder_width, "Decoder hidden width")->group(mg)->capture_default_str();
  train_cmd->add_option("--samples", mc.samples, "Importance samples per class at prediction")
      ->group(mg)
      ->capture_default_str();
  train_cmd->add_option("--dec-log-var", mc.dec_log_var, "Fixed decoder log-variance")
      ->group(mg)
      ->capture_default_str();
  train_cmd->add_option("--aux-kl-weight", mc.aux_kl_weight, "m-encoder regularizer weight (PaperLiteral)")
      ->group(mg)
      ->capture_default_str();
  add_format_options(train_cmd, tr.format);
  add_feature_options(train_cmd, tr.features);
  add_selection_options(train_cmd, tr.selection);

  PredictOptions pr;
  auto* predict_cmd = app.add_subcommand("predict", "Write per-frame predictions");
  predict_cmd->add_option("--log,-l", pr.logs, "Input log (repeatable)");
  predict_cmd->add_option("--model,-m", pr.model, "Checkpoint");
  predict_cmd->add_option("--out,-o", pr.out, "Prediction CSV path");
  predict_cmd->add_option("--seed", pr.seed, "Sampling seed")->capture_default_str();
  add_format_options(predict_cmd, pr.format);
  add_feature_options(predict_cmd, pr.features);
  add_selection_options(predict_cmd, pr.selection);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write reports");
  eval_cmd->add_option("--log,-l", ev.logs, "Input log (repeatable)");
  eval_cmd->add_option("--model,-m", ev.model, "Checkpoint");
  eval_cmd->add_option("--json", ev.out_json, "JSON report path");
  eval_cmd->add_option("--text", ev.out_text, "Text report path");
  eval_cmd->add_option("--seed", ev.seed, "Sampling seed")->capture_default_str();
  eval_cmd->add_flag("--quiet,-q", ev.quiet, "Do not print the report");
  add_format_options(eval_cmd, ev.format);
  add_feature_options(eval_cmd, ev.features);
  add_selection_options(eval_cmd, ev.selection);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  if (*gen_cmd) {
    gen.duration_set = duration->count() > 0;
    return guarded(run_gen, gen);
  }
  if (*split_cmd) return guarded(run_split, split);
  if (*train_cmd) return guarded(run_train, tr);
  if (*predict_cmd) return guarded(run_predict, pr);
  if (*eval_cmd) return guarded(run_eval, ev);
  return kExitUsage;
}

}  // namespace canids::cli
