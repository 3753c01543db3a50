#include "nbids/cli.hpp"

#include "nbids/checkpoint.hpp"
#include "nbids/data.hpp"
#include "nbids/errors.hpp"
#include "nbids/log.hpp"
#include "nbids/metrics.hpp"
#include "nbids/run_config.hpp"
#include "nbids/text.hpp"
#include "nbids/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>

namespace fs = std::filesystem;

namespace nbids {

namespace {

struct Overrides {
  KeyValues kv;
  std::vector<std::string> assignments;
  std::string config_file;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { kv[key] = v; }, help);
  }

  void add_common(CLI::App* app) {
    app->add_option("--config", config_file, "key=value run configuration file");
    app->add_option("--set", assignments, "extra key=value overrides, highest precedence");
  }

  RunConfig resolve() {
    KeyValues all = kv;
    for (const auto& a : assignments) {
      const auto eq = a.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + a + "'");
      all[std::string(text::trim(std::string_view(a).substr(0, eq)))] =
          std::string(text::trim(std::string_view(a).substr(eq + 1)));
    }
    if (config_file.empty()) return resolve_run_config(nullptr, all);
    const fs::path p(config_file);
    return resolve_run_config(&p, all);
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw PathError("cannot create output directory '" + dir.string() + "'");
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw PathError(std::string(what) + " '" + p.string() + "' does not exist");
}

void write_text(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError("cannot open '" + p.string() + "' for writing");
  out << content;
}

std::vector<std::string> split_filter(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : text::split(s, ',')) {
    const auto t = text::trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

void print_split_table(const DatasetSplit& s, const std::vector<std::size_t>* available) {
  const std::size_t C = s.vocab.size();
  std::vector<std::size_t> train(C, 0), test(C, 0);
  for (int y : s.train_y) ++train[static_cast<std::size_t>(y)];
  for (int y : s.test_y) ++test[static_cast<std::size_t>(y)];
  std::size_t w = 8;
  for (const auto& n : s.vocab.names()) w = std::max(w, n.size());
  w += 2;
  auto& o = std::cout;
  o << std::left << std::setw(static_cast<int>(w)) << "class" << std::right;
  if (available) o << std::setw(12) << "available";
  o << std::setw(10) << "train" << std::setw(10) << "test" << std::setw(10) << "total" << '\n';
  std::size_t sa = 0;
  for (std::size_t c = 0; c < C; ++c) {
    o << std::left << std::setw(static_cast<int>(w)) << s.vocab.name(c) << std::right;
    if (available) {
      o << std::setw(12) << (*available)[c];
      sa += (*available)[c];
    }
    o << std::setw(10) << train[c] << std::setw(10) << test[c] << std::setw(10) << train[c] + test[c] << '\n';
  }
  o << std::left << std::setw(static_cast<int>(w)) << "total" << std::right;
  if (available) o << std::setw(12) << sa;
  o << std::setw(10) << s.train_y.size() << std::setw(10) << s.test_y.size() << std::setw(10)
    << s.train_y.size() + s.test_y.size() << '\n';
}

void finish_dataset(const DatasetSplit& split, const RunConfig& cfg, const fs::path& out,
                    const std::vector<std::size_t>* available) {
  save_dataset(out / kDatasetFile, split);
  write_run_config(out / kRunConfigFile, cfg);
  print_split_table(split, available);
  log_info("prepare", "wrote " + (out / kDatasetFile).string());
}

// ---------------------------------------------------------------- commands

struct PrepareArgs {
  Overrides o;
  std::string out;
};

int cmd_prepare(PrepareArgs& a) {
  RunConfig cfg = a.o.resolve();
  if (cfg.data_dir.empty()) throw UsageError("prepare: --data-dir is required");
  const fs::path out(a.out);
  const auto inv = scan_nbaiot(cfg.data_dir, split_filter(cfg.device_filter));
  const auto available = inv.class_counts();
  const auto table = load_balanced(inv, cfg.per_class, cfg.train.seed);
  const auto split = stratified_split(table, inv.vocab, cfg.test_fraction, cfg.train.seed);
  ensure_dir(out);
  finish_dataset(split, cfg, out, &available);
  return kExitOk;
}

struct SynthArgs {
  Overrides o;
  std::string out;
  double separation = 4.0;
};

int cmd_synth(SynthArgs& a) {
  if (!(a.separation >= 0.0)) throw UsageError("synth: --separation must be non-negative");
  RunConfig cfg = a.o.resolve();
  const fs::path out(a.out);
  const std::size_t C = cfg.model.n_classes;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < C; ++c) names.push_back("class_" + std::to_string(c));
  const auto table = make_gaussian_blobs(C, cfg.per_class, cfg.model.input_len, a.separation, cfg.train.seed);
  const auto split = stratified_split(table, LabelVocab(names), cfg.test_fraction, cfg.train.seed);
  ensure_dir(out);
  finish_dataset(split, cfg, out, nullptr);
  return kExitOk;
}

struct TrainArgs {
  Overrides o;
  std::string dataset;
  std::string out;
};

int cmd_train(TrainArgs& a) {
  RunConfig cfg = a.o.resolve();
  require_file(a.dataset, "dataset");
  const auto split = load_dataset(a.dataset);
  if (split.vocab.size() != cfg.model.n_classes)
    throw ConfigError("train: dataset has " + std::to_string(split.vocab.size()) + " classes (" +
                      join(split.vocab.names()) + ") but the model config has n_classes = " +
                      std::to_string(cfg.model.n_classes));
  if (split.train_x.cols != cfg.model.input_len)
    throw ConfigError("train: dataset rows have " + std::to_string(split.train_x.cols) +
                      " features but the model config has input_len = " + std::to_string(cfg.model.input_len));
  validate(cfg.model);
  const fs::path out(a.out);
  ensure_dir(out);
  write_run_config(out / kRunConfigFile, cfg);

  const auto initial = build_model(cfg.model, cfg.train.seed);
  log_info("train", std::to_string(initial.parameter_count(true)) + " trainable parameters, " +
                        std::to_string(split.train_y.size()) + " training rows");
  const auto result = fit(initial, LabeledSet{split.train_x, split.train_y}, cfg.train);
  save_checkpoint(out / kCheckpointFile, result.params, split.scaler, split.vocab);
  write_curves_csv(out / kCurvesFile, result.curves);

  const auto& c = result.curves;
  const std::size_t b = result.best_epoch - 1;
  std::cout << "epochs run: " << c.epochs() << (result.stopped_early ? " (early stop)" : "") << '\n'
            << "best epoch: " << result.best_epoch << '\n'
            << "train loss " << text::format_fixed(c.train_loss[b], 5) << "  train acc "
            << text::format_fixed(c.train_accuracy[b], 4) << '\n'
            << "val loss   " << text::format_fixed(c.val_loss[b], 5) << "  val acc   "
            << text::format_fixed(c.val_accuracy[b], 4) << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::vector<std::string> formats{"text", "csv", "json"};
  std::string split = "test";
};

int cmd_eval(EvalArgs& a) {
  std::vector<ReportFormat> formats;
  for (const auto& f : a.formats)
    for (const auto& part : split_filter(f)) formats.push_back(parse_report_format(part));
  if (a.split != "test" && a.split != "train") throw UsageError("eval: --split must be test or train");
  require_file(a.dataset, "dataset");
  require_file(a.checkpoint, "checkpoint");
  const auto data = load_dataset(a.dataset);
  const auto ck = load_checkpoint(a.checkpoint);
  if (!(ck.vocab == data.vocab))
    throw ConfigError("eval: checkpoint vocabulary [" + join(ck.vocab.names()) + "] differs from dataset vocabulary [" +
                      join(data.vocab.names()) + "]");
  const bool test = a.split == "test";
  const FeatureMatrix& x = test ? data.test_x : data.train_x;
  const std::vector<int>& y = test ? data.test_y : data.train_y;
  if (y.empty()) throw DataError("eval: the " + a.split + " split is empty");
  if (x.cols != ck.params.config.input_len)
    throw ConfigError("eval: dataset rows have " + std::to_string(x.cols) + " features, checkpoint expects " +
                      std::to_string(ck.params.config.input_len));

  const fs::path out(a.out);
  ensure_dir(out);
  RunConfig echo;
  echo.model = ck.params.config;
  write_run_config(out / kRunConfigFile, echo);

  const auto ev = evaluate(ck.params, x, y);
  const auto cm = confusion(y, ev.predictions, ck.vocab.size(), ck.vocab.names());
  std::optional<MulticlassRoc> roc;
  try {
    roc = roc_one_vs_rest(ev.probs, y);
    write_roc_csv(out / kRocFile, *roc, ck.vocab.names());
  } catch (const DataError& e) {
    log_info("eval", std::string("ROC skipped: ") + e.what());
  }
  const auto report = build_report(cm, roc ? &*roc : nullptr);
  for (auto f : formats) {
    const auto ext = f == ReportFormat::text ? std::string("txt") : format_name(f);
    write_text(out / ("report." + ext), render_report(report, f));
  }
  std::cout << render_report(report, ReportFormat::text);
  log_info("eval", a.split + " accuracy " + text::format_fixed(ev.accuracy, 4) + " over " +
                       std::to_string(y.size()) + " rows");
  return kExitOk;
}

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
};

int cmd_infer(InferArgs& a) {
  require_file(a.checkpoint, "checkpoint");
  require_file(a.input, "input csv");
  const auto ck = load_checkpoint(a.checkpoint);
  const std::size_t L = ck.params.config.input_len;
  const std::size_t C = ck.params.config.n_classes;
  if (ck.scaler.min.size() != L) throw DataError("infer: checkpoint carries no scaler for " + std::to_string(L) + " features");
  const auto raw = read_feature_csv(a.input, L);
  const auto rows = raw.rows == 0 ? raw : ck.scaler.transform(raw);

  std::ofstream out(a.output, std::ios::trunc);
  if (!out) throw PathError("cannot open '" + a.output + "' for writing");
  out << "row_id,predicted_class";
  for (std::size_t c = 0; c < C; ++c) out << ",p_" << c;
  out << ",latency_ms\n";

  std::vector<double> latencies;
  for (std::size_t i = 0; i < rows.rows; ++i) {
    const std::size_t idx[] = {i};
    const auto start = std::chrono::steady_clock::now();
    const auto fwd = model_forward(ck.params, to_model_input(rows.gather(idx), L));
    const auto stop = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(stop - start).count();
    latencies.push_back(ms);
    const auto p = fwd.probs.data();
    const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    out << i << ',' << ck.vocab.name(best);
    for (double v : p) out << ',' << text::format_double(v);
    out << ',' << text::format_fixed(ms, 3) << '\n';
  }
  if (latencies.empty()) {
    log_info("infer", "no input rows");
    return kExitOk;
  }
  const double mean = std::accumulate(latencies.begin(), latencies.end(), 0.0) / static_cast<double>(latencies.size());
  std::sort(latencies.begin(), latencies.end());
  const auto p95_idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(latencies.size()))) - 1;
  std::cout << "rows: " << latencies.size() << "  mean latency " << text::format_fixed(mean, 3) << " ms  p95 "
            << text::format_fixed(latencies[p95_idx], 3) << " ms\n";
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const PathError*>(&e))
    return kExitUsage;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const LabelError*>(&e) ||
      dynamic_cast<const FormatError*>(&e) || dynamic_cast<const ShapeError*>(&e))
    return kExitData;
  return kExitInternal;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Attention CNN-BiLSTM intrusion detector for IoT traffic", "nbids"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "scan, balance, split and scale a traffic dataset");
  prep.o.add(p, "--data-dir", "data_dir", "directory holding the per-device CSV files");
  prep.o.add(p, "--per-class", "per_class", "rows sampled per class");
  prep.o.add(p, "--seed", "seed", "random seed");
  prep.o.add(p, "--test-fraction", "test_fraction", "held-out fraction per class");
  prep.o.add(p, "--devices", "device_filter", "comma-separated device name substrings");
  prep.o.add_common(p);
  p->add_option("--out", prep.out, "output directory")->required();

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "write a seeded Gaussian-blob dataset");
  syn.o.add(s, "--per-class", "per_class", "rows per class");
  syn.o.add(s, "--seed", "seed", "random seed");
  syn.o.add(s, "--test-fraction", "test_fraction", "held-out fraction per class");
  s->add_option("--separation", syn.separation, "class mean offset in standard deviations");
  syn.o.add_common(s);
  s->add_option("--out", syn.out, "output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on a prepared dataset");
  t->add_option("--dataset", tr.dataset, "dataset artifact")->required();
  tr.o.add(t, "--epochs", "epochs", "maximum epochs");
  tr.o.add(t, "--batch-size", "batch_size", "mini-batch size");
  tr.o.add(t, "--seed", "seed", "random seed");
  tr.o.add(t, "--patience", "early_stop_patience", "early stopping patience in epochs");
  tr.o.add(t, "--learning-rate", "learning_rate", "Adam learning rate");
  tr.o.add(t, "--validation-fraction", "validation_fraction", "validation slice of the training rows");
  tr.o.add_common(t);
  t->add_option("--out", tr.out, "output directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint and write reports");
  e->add_option("--dataset", ev.dataset, "dataset artifact")->required();
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--format", ev.formats, "text, csv, json (repeatable or comma-separated)");
  e->add_option("--split", ev.split, "test or train");
  e->add_option("--out", ev.out, "output directory")->required();

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "classify rows of a raw feature CSV");
  i->add_option("--checkpoint", inf.checkpoint, "checkpoint file")->required();
  i->add_option("--input-csv", inf.input, "CSV with a header and one row per sample")->required();
  i->add_option("--output-csv", inf.output, "destination CSV")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  }

  try {
    if (p->parsed()) return cmd_prepare(prep);
    if (s->parsed()) return cmd_synth(syn);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (i->parsed()) return cmd_infer(inf);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code_for(err);
  }
  return kExitInternal;
}

} // namespace nbids
