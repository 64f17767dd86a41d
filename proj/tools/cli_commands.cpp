#include <algorithm>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "cli.hpp"
#include "smcl/checkpoint.hpp"
#include "smcl/config.hpp"
#include "smcl/data.hpp"
#include "smcl/datasets.hpp"
#include "smcl/error.hpp"
#include "smcl/eval.hpp"
#include "smcl/experiment.hpp"
#include "smcl/masking.hpp"
#include "smcl/trainer.hpp"

namespace fs = std::filesystem;

namespace smcl::cli {

namespace {

// Raised to leave a command with a specific exit code and message.
struct Exit {
  int code;
  std::string message;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string histogram_report(const ClassHistogram& hist) {
  std::ostringstream os;
  os << "classes " << hist.num_classes() << ", samples " << hist.total() << ", imbalance " << hist.imbalance_ratio()
     << "\n";
  for (int k = 0; k < hist.num_classes(); ++k) os << "  n_" << k << " = " << hist.count(k) << "\n";
  return os.str();
}

// ---------------------------------------------------------------- build-data

struct BuildDataArgs {
  std::string dataset = "synthetic";
  std::string source;
  double rho = 1.0;
  std::int64_t n_max = 0;
  std::uint64_t seed = 0;
  std::string out;
  int classes = 10;
  int per_class = 500;
  int test_per_class = 100;
  int image_size = 32;
};

std::pair<LabeledImages, LabeledImages> load_base(const BuildDataArgs& a) {
  if (a.dataset == "synthetic") {
    const SyntheticSpec train{a.classes, a.per_class, a.image_size};
    const SyntheticSpec test{a.classes, a.test_per_class, a.image_size};
    return {make_synthetic(train, a.seed), make_synthetic(test, derive_seed(a.seed, "synthetic-test"))};
  }
  if (a.dataset == "cifar10" || a.dataset == "cifar100") {
    const auto variant = a.dataset == "cifar10" ? CifarVariant::cifar10 : CifarVariant::cifar100;
    const fs::path dir = a.source.empty() ? data_root() : fs::path(a.source);
    return {load_cifar_binary(dir, variant, Split::train), load_cifar_binary(dir, variant, Split::test)};
  }
  if (a.dataset == "folder") {
    if (a.source.empty()) throw DataError("--dataset folder needs --source with train/ and test/ sub-directories");
    const fs::path root(a.source);
    return {load_image_folder(root / "train", a.image_size), load_image_folder(root / "test", a.image_size)};
  }
  throw ConfigError("unknown dataset '" + a.dataset + "' (cifar10|cifar100|synthetic|folder)");
}

int cmd_build_data(const BuildDataArgs& a, std::ostream& out) {
  auto [base, test] = load_base(a);
  std::int64_t n_max = a.n_max;
  if (n_max == 0) {
    const auto hist = base.histogram();
    n_max = *std::min_element(hist.counts().begin(), hist.counts().end());
  }
  const LongTailSpec spec{base.num_classes, a.rho, n_max};
  const auto lt = build_longtail(base, spec, a.seed);
  const fs::path dir(a.out);
  save_split(dir, "train", lt.data);
  save_split(dir, "test", test);
  const nlohmann::json report = {{"dataset", a.dataset},
                                 {"rho", a.rho},
                                 {"n_max", n_max},
                                 {"seed", a.seed},
                                 {"train_fingerprint", lt.data.fingerprint()},
                                 {"test_fingerprint", test.fingerprint()},
                                 {"imbalance_ratio", lt.histogram.imbalance_ratio()},
                                 {"histogram", lt.histogram.to_json()},
                                 {"source_indices", lt.source_indices}};
  write_text(dir / "histogram.json", report.dump(2) + "\n");
  out << histogram_report(lt.histogram);
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string preset;
  std::string config;
  std::string data;
  std::vector<std::string> overrides;
  std::string runs_dir = "runs";
  std::string name;
  bool force = false;
  bool resume = false;
};

TrainConfig resolve_config(const std::string& preset_name, const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  if (!preset_name.empty() && !config_path.empty()) throw ConfigError("give --preset or --config, not both");
  TrainConfig cfg;
  if (!config_path.empty()) {
    cfg = TrainConfig::load(config_path);
  } else if (!preset_name.empty()) {
    cfg = preset(preset_name);
  } else {
    throw ConfigError("one of --preset or --config is required");
  }
  cfg.apply_overrides(overrides);
  return cfg;
}

struct LoadedData {
  LabeledImages train;
  LabeledImages test;
};

LoadedData load_data_dir(const std::string& dir) {
  if (dir.empty()) throw DataError("--data is required");
  if (!has_split(dir, "train")) throw DataError("no training split under " + dir + " (run build-data first)");
  LoadedData d{load_split(dir, "train"), {}};
  if (has_split(dir, "test")) d.test = load_split(dir, "test");
  return d;
}

ExperimentRecord run_training(const TrainConfig& cfg, const LoadedData& data, const fs::path& runs_dir,
                              const std::string& name, bool force, bool resume, std::ostream& out) {
  const auto cfg_fp = cfg.fingerprint();
  const auto data_fp = data.train.fingerprint();
  const auto dir = runs_dir / run_id(cfg_fp, data_fp);
  const auto record_path = dir / "record.json";
  if (fs::exists(dir) && !force && !resume) {
    throw Exit{kExitUsage, "run directory " + dir.string() + " already exists; pass --force to overwrite or --resume"};
  }
  if (force && !resume && fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");

  TrainOptions opts;
  opts.run_dir = dir;
  opts.resume = resume;
  opts.test = data.test.size() > 0 ? &data.test : nullptr;
  opts.on_epoch = [&out](const nlohmann::json& row) {
    out << "epoch " << row.at("epoch") << " lr " << row.at("lr") << " loss " << row.at("loss") << " acc "
        << row.at("train_acc");
    if (row.contains("eval")) out << " test " << row.at("eval").at("overall");
    out << "\n";
  };
  auto result = train(cfg, data.train, opts);

  ExperimentRecord record;
  record.name = name.empty() ? dir.filename().string() : name;
  record.config_fingerprint = cfg_fp;
  record.dataset_fingerprint = data_fp;
  record.code_revision = code_revision();
  record.metrics_path = result.metrics;
  record.checkpoint_path = result.checkpoint;
  record.config = cfg;
  record.epochs_completed = result.epochs_completed;
  record.final_eval = result.final_eval;
  if (result.aborted) {
    record.status = "aborted";
    record.abort_reason = result.abort_reason;
  }
  record.save(record_path);
  out << "record " << record_path.string() << "\n";
  return record;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto cfg = resolve_config(a.preset, a.config, a.overrides);
  const auto data = load_data_dir(a.data);
  const auto record = run_training(cfg, data, a.runs_dir, a.name.empty() ? a.preset : a.name, a.force, a.resume, out);
  if (record.status == "aborted") throw Exit{kExitNonFinite, "training aborted: " + record.abort_reason};
  if (record.final_eval) out << format_table({{record.name, *record.final_eval}});
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string json_out;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto ck = read_checkpoint(a.checkpoint);
  auto model = load_model(ck);
  if (a.data.empty() || !has_split(a.data, "test")) throw DataError("no test split under '" + a.data + "'");
  const auto test = load_split(a.data, "test");
  const auto hist = ClassHistogram::from_json(ck.meta.extra.at("train_histogram"));
  const auto report = evaluate(model, test, stats_from_checkpoint(ck.meta.extra), hist);
  if (!a.json_out.empty()) write_text(a.json_out, report.to_json().dump(2) + "\n");
  out << format_table({{fs::path(a.checkpoint).parent_path().filename().string(), report}});
  return kExitOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  TrainArgs base;
  std::string axis;
  std::string table_out;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const auto base = resolve_config(a.base.preset, a.base.config, a.base.overrides);
  const auto data = load_data_dir(a.base.data);
  std::vector<std::pair<std::string, TrainConfig>> variants;
  if (a.axis == "mask_mode") {
    for (const char* mode : {"random", "center", "saliency"}) {
      auto c = base;
      c.mask_mode = mode;
      variants.emplace_back(mode, c);
    }
  } else if (a.axis == "contrastive") {
    auto ce = base;
    ce.mu = 0.0;
    auto sc = base;
    if (!(sc.mu > 0.0)) sc.mu = 0.3;
    variants.emplace_back("Cross Entropy", ce);
    variants.emplace_back("Cross Entropy + Contrastive", sc);
  } else {
    throw ConfigError("unknown ablation axis '" + a.axis + "' (mask_mode|contrastive)");
  }

  std::vector<ReportRow> rows;
  for (const auto& [label, cfg] : variants) {
    out << "== " << label << "\n";
    const auto record = run_training(cfg, data, a.base.runs_dir, label, a.base.force, a.base.resume, out);
    if (record.status == "aborted") throw Exit{kExitNonFinite, "variant '" + label + "' aborted: " + record.abort_reason};
    if (!record.final_eval) throw DataError("ablation needs a test split to compare variants");
    rows.push_back({label, *record.final_eval});
  }
  const auto table = format_table(rows);
  if (!a.table_out.empty()) write_text(a.table_out, table);
  out << table;
  return kExitOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> records;
  std::string out_dir = "report";
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  if (a.records.empty()) throw DataError("report needs at least one --record");
  std::vector<ReportRow> rows;
  nlohmann::json summary = nlohmann::json::array();
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  for (const auto& arg : a.records) {
    fs::path path(arg);
    if (fs::is_directory(path)) path /= "record.json";
    const auto record = ExperimentRecord::load(path);
    EvalReport report;
    if (record.final_eval) report = *record.final_eval;
    rows.push_back({record.name, report});
    summary.push_back(record.to_json());
    const auto curve = read_loss_curve(record.metrics_path);
    std::string stem = record.name;
    std::replace_if(stem.begin(), stem.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)); }, '_');
    write_text(dir / ("loss_" + stem + ".svg"), loss_plot_svg(curve, record.name));
  }
  const auto table = format_table(rows);
  write_text(dir / "table.txt", table);
  write_text(dir / "report.json", summary.dump(2) + "\n");
  out << table;
  return kExitOk;
}

// ---------------------------------------------------------------- cam

struct CamArgs {
  std::string checkpoint;
  std::string data;
  std::int64_t index = 0;
  std::int64_t class_index = -1;
  std::string out = "cam.png";
  std::string saliency_out;
};

int cmd_cam(const CamArgs& a, std::ostream& out) {
  const auto ck = read_checkpoint(a.checkpoint);
  auto model = load_model(ck);
  if (a.data.empty() || !has_split(a.data, "test")) throw DataError("no test split under '" + a.data + "'");
  const auto test = load_split(a.data, "test");
  if (a.index < 0 || a.index >= test.size()) throw ConfigError("--index out of range");
  const auto stats = stats_from_checkpoint(ck.meta.extra);
  const auto raw = test.images[a.index];
  const auto image = stats.normalize(to_float_image(raw));
  const auto pred = predict(model, image.unsqueeze(0));
  const auto cls = a.class_index >= 0 ? a.class_index : pred.labels.front();
  const auto heat = cam(model, image, cls);
  save_cam_overlay(raw, heat, a.out);
  if (!a.saliency_out.empty()) save_saliency_png(spectral_residual_saliency(to_float_image(raw)), a.saliency_out);
  out << "sample " << a.index << " label " << test.labels[static_cast<std::size_t>(a.index)] << " predicted "
      << pred.labels.front() << " cam class " << cls << " -> " << a.out << "\n";
  return kExitOk;
}

void add_train_flags(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--preset", t.preset, "named preset");
  cmd->add_option("--config", t.config, "JSON config file");
  cmd->add_option("--data", t.data, "directory written by build-data");
  cmd->add_option("--set", t.overrides, "override key=value (repeatable)");
  cmd->add_option("--runs-dir", t.runs_dir, "parent of content-addressed run directories");
  cmd->add_option("--name", t.name, "display name for the record");
  cmd->add_flag("--force", t.force, "overwrite an existing run directory");
  cmd->add_flag("--resume", t.resume, "continue from the run's last checkpoint");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"long-tailed training with saliency-masked contrastive learning", "smcl"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "intra-op threads (0: library default)");

  BuildDataArgs build;
  auto* build_cmd = app.add_subcommand("build-data", "build a long-tailed training split");
  build_cmd->add_option("--dataset", build.dataset, "cifar10|cifar100|synthetic|folder");
  build_cmd->add_option("--source", build.source, "dataset directory (default: $SMCL_DATA_ROOT)");
  build_cmd->add_option("--rho", build.rho, "imbalance ratio n_max/n_min");
  build_cmd->add_option("--n-max", build.n_max, "size of the largest class (default: smallest base class)");
  build_cmd->add_option("--seed", build.seed, "subset seed");
  build_cmd->add_option("--out", build.out, "output directory")->required();
  build_cmd->add_option("--classes", build.classes, "synthetic: number of classes");
  build_cmd->add_option("--per-class", build.per_class, "synthetic: base training images per class");
  build_cmd->add_option("--test-per-class", build.test_per_class, "synthetic: test images per class");
  build_cmd->add_option("--image-size", build.image_size, "synthetic/folder: image side");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train one configuration");
  add_train_flags(train_cmd, train_args);

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "grouped accuracy of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_args.data, "directory with a test split")->required();
  eval_cmd->add_option("--json", eval_args.json_out, "write the report as JSON");

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "train variants along one axis and compare");
  add_train_flags(ablate_cmd, ablate_args.base);
  ablate_cmd->add_option("--axis", ablate_args.axis, "mask_mode|contrastive")->required();
  ablate_cmd->add_option("--table", ablate_args.table_out, "write the comparison table here");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "tables and loss plots from experiment records");
  report_cmd->add_option("--record", report_args.records, "record.json or run directory (repeatable)");
  report_cmd->add_option("--out", report_args.out_dir, "output directory");

  CamArgs cam_args;
  auto* cam_cmd = app.add_subcommand("cam", "class activation overlay for one test image");
  cam_cmd->add_option("--checkpoint", cam_args.checkpoint, "checkpoint file")->required();
  cam_cmd->add_option("--data", cam_args.data, "directory with a test split")->required();
  cam_cmd->add_option("--index", cam_args.index, "test sample index");
  cam_cmd->add_option("--class", cam_args.class_index, "class to explain (default: predicted)");
  cam_cmd->add_option("--out", cam_args.out, "overlay PNG");
  cam_cmd->add_option("--saliency-out", cam_args.saliency_out, "also write the saliency map PNG");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (threads > 0) torch::set_num_threads(threads);

  try {
    if (build_cmd->parsed()) return cmd_build_data(build, out);
    if (train_cmd->parsed()) return cmd_train(train_args, out);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_args, out);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_args, out);
    if (report_cmd->parsed()) return cmd_report(report_args, out);
    if (cam_cmd->parsed()) return cmd_cam(cam_args, out);
  } catch (const Exit& e) {
    err << "error: " << e.message << "\n";
    return e.code;
  } catch (const NonFiniteLoss& e) {
    err << "NonFiniteLoss: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const ConfigError& e) {
    err << "ConfigError: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "DataError: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidSpec& e) {
    err << "InvalidSpec: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace smcl::cli
