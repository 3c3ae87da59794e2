#include "edgelite/cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <thread>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "edgelite/bench.hpp"
#include "edgelite/dataset.hpp"
#include "edgelite/quant.hpp"
#include "edgelite/serialize.hpp"
#include "edgelite/trainer.hpp"
#include "json.hpp"

namespace edgelite {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kVerbs = {"synth", "train", "eval", "quantize", "bench", "infer"};

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string log_level = "info";
  unsigned threads = 0;  // 0: per-verb default
};

struct SynthArgs {
  std::string out;
  std::size_t count = 0;
  bool dataset = false;
  std::size_t real_per_class = 590;
  std::size_t synth_count = 300;
  std::size_t augment_target = 5020;
  SplitCounts splits;
  bool force = false;
};

struct TrainArgs {
  std::string manifest;
  std::string out;
  double width = 0.25;
  std::string optimizer = "adam";
  Hyper hyper;
  std::size_t grid_budget = 0;
  std::size_t grid_epochs = 1;
  bool force = false;
};

struct EvalArgs {
  std::string model;
  std::string manifest;
  std::string split = "test";
  std::size_t batch = 32;
  std::string out;
  bool force = false;
};

struct QuantizeArgs {
  std::string model;
  std::string calib;
  std::size_t calib_count = 100;
  std::size_t calib_batch = 10;
  std::string out;
  bool force = false;
};

struct BenchArgs {
  std::vector<std::string> models;
  std::string manifest;
  std::string out;
  std::string split = "test";
  std::size_t warmup = 5;
  std::size_t iters = 30;
  bool force = false;
};

struct InferArgs {
  std::string model;
  std::vector<std::string> images;
};

struct Args {
  Globals g;
  SynthArgs synth;
  TrainArgs train;
  EvalArgs eval;
  QuantizeArgs quantize;
  BenchArgs bench;
  InferArgs infer;
};

std::shared_ptr<spdlog::logger> g_log;

void add_force(CLI::App* sub, bool& force) {
  sub->add_flag("--force", force, "Overwrite existing outputs");
}

void build_app(CLI::App& app, Args& a) {
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", a.g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--config", a.g.config, "key=value file; flags take precedence");
  app.add_option("--log-level", a.g.log_level, "trace, debug, info, warn, error or off")
      ->capture_default_str()
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));
  app.add_option("--threads", a.g.threads, "Worker threads (default: all cores for synth, 1 otherwise)");

  auto* synth = app.add_subcommand("synth", "Generate composites or a full procedural dataset");
  synth->add_option("--out", a.synth.out, "Output directory")->required();
  synth->add_option("--count", a.synth.count, "Write this many hazard composites plus a manifest");
  synth->add_flag("--dataset", a.synth.dataset, "Build the full split dataset");
  synth->add_option("--real-per-class", a.synth.real_per_class, "Stand-in real images per class")->capture_default_str();
  synth->add_option("--synth-count", a.synth.synth_count, "Composites added to the hazard pool")->capture_default_str();
  synth->add_option("--augment-target", a.synth.augment_target, "Most augmented images to create")->capture_default_str();
  synth->add_option("--train", a.synth.splits.train, "Train images per class")->capture_default_str();
  synth->add_option("--val", a.synth.splits.val, "Validation images per class")->capture_default_str();
  synth->add_option("--test", a.synth.splits.test, "Test images per class")->capture_default_str();
  add_force(synth, a.synth.force);

  auto* train = app.add_subcommand("train", "Train a model on a manifest");
  train->add_option("--manifest", a.train.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out", a.train.out, "Output directory")->required();
  train->add_option("--width", a.train.width, "Channel width multiplier (1 = full EdgeLite)")
      ->capture_default_str()
      ->check(CLI::Range(0.01, 1.0));
  train->add_option("--optimizer", a.train.optimizer, "adam or sgd_momentum")
      ->capture_default_str()
      ->check(CLI::IsMember({"adam", "sgd_momentum", "sgd"}));
  train->add_option("--lr", a.train.hyper.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--momentum", a.train.hyper.momentum, "Momentum (Adam beta1)")->capture_default_str();
  train->add_option("--decay", a.train.hyper.weight_decay, "L2 weight decay")->capture_default_str();
  train->add_option("--batch", a.train.hyper.batch_size, "Batch size")->capture_default_str();
  train->add_option("--epochs", a.train.hyper.epochs, "Epochs")->capture_default_str();
  train->add_option("--aux-weight", a.train.hyper.aux_weight, "Auxiliary loss weight")->capture_default_str();
  train->add_option("--grid-budget", a.train.grid_budget, "Grid points to search before the final run (0 = off)")
      ->capture_default_str();
  train->add_option("--grid-epochs", a.train.grid_epochs, "Epochs per grid point")->capture_default_str();
  add_force(train, a.train.force);

  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a model on a split");
  eval->add_option("--model", a.eval.model, "Model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", a.eval.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", a.eval.split, "train, val or test")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--batch", a.eval.batch, "Evaluation batch size")->capture_default_str();
  eval->add_option("--out", a.eval.out, "Directory for eval.json");
  add_force(eval, a.eval.force);

  auto* quantize = app.add_subcommand("quantize", "Post-training int8 quantization");
  quantize->add_option("--model", a.quantize.model, "Float model file")->required()->check(CLI::ExistingFile);
  quantize->add_option("--calib", a.quantize.calib, "Manifest whose train images calibrate the ranges")
      ->required()
      ->check(CLI::ExistingFile);
  quantize->add_option("--calib-count", a.quantize.calib_count, "Calibration images")->capture_default_str();
  quantize->add_option("--calib-batch", a.quantize.calib_batch, "Calibration batch size")->capture_default_str();
  quantize->add_option("--out", a.quantize.out, "Output directory (default: the model's directory)");
  add_force(quantize, a.quantize.force);

  auto* bench = app.add_subcommand("bench", "Size, latency, memory and accuracy report");
  bench->add_option("--model", a.bench.models, "Model file (repeatable)")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  bench->add_option("--manifest", a.bench.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", a.bench.out, "Output directory")->required();
  bench->add_option("--split", a.bench.split, "Split used for accuracy")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  bench->add_option("--warmup", a.bench.warmup, "Untimed runs per model")->capture_default_str();
  bench->add_option("--iters", a.bench.iters, "Timed runs per model")->capture_default_str();
  add_force(bench, a.bench.force);

  auto* infer = app.add_subcommand("infer", "Classify images");
  infer->add_option("--model", a.infer.model, "Model file")->required()->check(CLI::ExistingFile);
  infer->add_option("images", a.infer.images, "PPM images")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
}

// Lines of key=value become --key=value tokens placed right after the verb,
// so explicit flags (which come later) win.
std::vector<std::string> with_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  require(in.good(), ErrorKind::config, "cannot read config file " + path);
  std::vector<std::string> injected;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::config,
            path + ":" + std::to_string(line_no) + ": expected key=value");
    injected.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
  }
  std::vector<std::string> out;
  bool placed = false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    out.push_back(args[i]);
    if (!placed && i > 0 && std::find(kVerbs.begin(), kVerbs.end(), args[i]) != kVerbs.end()) {
      out.insert(out.end(), injected.begin(), injected.end());
      placed = true;
    }
  }
  return out;
}

void guard_output(const fs::path& path, bool force) {
  require(force || !fs::exists(path), ErrorKind::config,
          "refusing to overwrite " + path.string() + " (pass --force)");
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

unsigned worker_threads(const Globals& g, unsigned fallback) { return g.threads > 0 ? g.threads : fallback; }

int cmd_synth(const Args& a, std::ostream& out) {
  const SynthArgs& s = a.synth;
  require(s.dataset != (s.count > 0), ErrorKind::config, "synth needs exactly one of --count N or --dataset");
  const fs::path dir = s.out;
  const fs::path manifest_path = dir / "manifest.csv";
  guard_output(manifest_path, s.force);
  const unsigned threads = worker_threads(a.g, std::max(1u, std::thread::hardware_concurrency()));
  DatasetManifest manifest;
  if (s.count > 0) {
    guard_output(dir / "synthetic", s.force);
    manifest = synthesize_composites(dir, s.count, a.g.seed, threads);
  } else {
    for (const char* sub : {"real", "synthetic", "augmented"}) guard_output(dir / sub, s.force);
    g_log->info("generating {} stand-in real images per class", s.real_per_class);
    generate_real_pool(dir / "real", s.real_per_class, a.g.seed, threads);
    ManifestOptions opt;
    opt.real_dir = dir / "real";
    opt.out_dir = dir;
    opt.synth_count = s.synth_count;
    opt.augment_target = s.augment_target;
    opt.splits = s.splits;
    opt.seed = a.g.seed;
    opt.threads = threads;
    g_log->info("building manifest");
    manifest = build_manifest(opt);
  }
  manifest.write(manifest_path);
  nlohmann::ordered_json j;
  j["manifest"] = manifest_path.string();
  j["images"] = manifest.records.size();
  for (Split sp : kSplits) j[std::string(to_string(sp))] = manifest.count(sp);
  j["real"] = manifest.count(Origin::real);
  j["synthetic"] = manifest.count(Origin::synthetic);
  j["augmented"] = manifest.count(Origin::augmented);
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_train(const Args& a, std::ostream& out) {
  const TrainArgs& t = a.train;
  const fs::path dir = t.out;
  for (const char* f : {"model.edgl", "checkpoint.edgl", "train_log.jsonl"}) guard_output(dir / f, t.force);
  fs::create_directories(dir);
  const ManifestSource data = ManifestSource::open(t.manifest);
  Hyper hyper = t.hyper;
  hyper.optimizer = parse_optimizer(t.optimizer);
  hyper.seed = a.g.seed;
  hyper.validate();
  const HeadConfig head{2};
  const ModelFactory factory = [&](Rng& rng) {
    return t.width >= 1.0 ? build_edgelite(head, default_widths(), rng) : build_test_profile(head, rng, t.width);
  };
  TrainOptions opt;
  opt.on_epoch = [](const EpochRecord& e) {
    g_log->info("epoch {} loss {:.4f} train_acc {:.4f} val_acc {:.4f} ({:.1f}s)", e.epoch, e.train_loss, e.train_acc,
                e.val_acc, e.seconds);
    return true;
  };
  if (t.grid_budget > 0) {
    GridSpace space;
    space.epochs = t.grid_epochs;
    const GridResult grid = grid_search(space, t.grid_budget, factory, data, hyper, opt);
    if (grid.truncated) g_log->warn("{}", grid.warning);
    nlohmann::ordered_json board = nlohmann::ordered_json::array();
    for (const auto& e : grid.leaderboard) {
      board.push_back({{"index", e.index}, {"val_acc", e.val_acc}, {"hyper", nlohmann::ordered_json::parse(e.hyper.to_json())}});
    }
    write_text(dir / "grid.json", board.dump(2) + "\n");
    const std::size_t epochs = hyper.epochs;
    hyper = grid.best;
    hyper.epochs = epochs;
    hyper.seed = a.g.seed;
  }
  g_log->info("hyper {}", hyper.to_json());
  Rng rng(hyper.seed);
  Model model = factory(rng);
  opt.checkpoint_path = dir / "checkpoint.edgl";
  const TrainLog log = train(model, data, hyper, rng, opt);
  write_text(dir / "train_log.jsonl", log.to_jsonl());
  model.strip_training_layers();
  save_model(model, dir / "model.edgl");
  nlohmann::ordered_json j;
  j["model"] = (dir / "model.edgl").string();
  j["best_epoch"] = log.best_epoch;
  j["best_val_acc"] = log.best_val_acc;
  j["params"] = model.param_count();
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_eval(const Args& a, std::ostream& out) {
  const EvalArgs& e = a.eval;
  if (!e.out.empty()) guard_output(fs::path(e.out) / "eval.json", e.force);
  const AnyModel model = load_model(e.model);
  const ManifestSource data = ManifestSource::open(e.manifest);
  const double acc = evaluate(model, data, parse_split(e.split), e.batch);
  nlohmann::ordered_json j;
  j["model"] = e.model;
  j["split"] = e.split;
  j["images"] = data.size(parse_split(e.split));
  j["accuracy"] = acc;
  if (!e.out.empty()) {
    fs::create_directories(e.out);
    write_text(fs::path(e.out) / "eval.json", j.dump(2) + "\n");
  }
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_quantize(const Args& a, std::ostream& out) {
  const QuantizeArgs& q = a.quantize;
  const fs::path model_path = q.model;
  const fs::path dir = q.out.empty() ? model_path.parent_path() : fs::path(q.out);
  const fs::path target = dir / (model_path.stem().string() + ".int8.edgl");
  const fs::path calib_json = dir / (model_path.stem().string() + ".calib.json");
  guard_output(target, q.force);
  guard_output(calib_json, q.force);
  require(q.calib_count >= 1 && q.calib_batch >= 1, ErrorKind::config, "calibration counts must be positive");
  AnyModel loaded = load_model(model_path);
  require(std::holds_alternative<Model>(loaded), ErrorKind::contract, "model is already int8");
  Model model = std::get<Model>(std::move(loaded));
  if (model.strip_training_layers() == StripStatus::stripped) g_log->warn("stripped auxiliary heads before quantizing");
  const ManifestSource data = ManifestSource::open(q.calib);
  const std::size_t available = data.size(Split::train);
  require(available > 0, ErrorKind::data, "calibration manifest has no train images");
  const std::size_t total = std::min(q.calib_count, available);
  std::size_t next = 0;
  const CalibrationStats stats = calibrate(model, [&]() -> std::optional<Tensor> {
    if (next >= total) return std::nullopt;
    std::vector<std::size_t> idx;
    for (; next < total && idx.size() < q.calib_batch; ++next) idx.push_back(next);
    return load_batch(data, Split::train, idx);
  });
  const QuantizedModel qmodel = quantize_model(model, stats);
  fs::create_directories(dir);
  save_model(qmodel, target);
  write_text(calib_json, stats.to_json() + "\n");
  const std::size_t float_bytes = serialized_size(model);
  const std::size_t int8_bytes = fs::file_size(target);
  nlohmann::ordered_json j;
  j["model"] = target.string();
  j["calibration_images"] = total;
  j["float_bytes"] = float_bytes;
  j["int8_bytes"] = int8_bytes;
  j["ratio"] = static_cast<double>(int8_bytes) / static_cast<double>(float_bytes);
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_bench(const Args& a, std::ostream& out) {
  const BenchArgs& b = a.bench;
  const fs::path dir = b.out;
  guard_output(dir / "bench.json", b.force);
  guard_output(dir / "bench.txt", b.force);
  const ManifestSource data = ManifestSource::open(b.manifest);
  Eigen::setNbThreads(static_cast<int>(worker_threads(a.g, 1)));
  BenchConfig cfg;
  cfg.warmup = b.warmup;
  cfg.iters = b.iters;
  cfg.split = parse_split(b.split);
  std::vector<fs::path> models(b.models.begin(), b.models.end());
  const auto rows = run_benchmark(models, data, cfg);
  fs::create_directories(dir);
  const std::string table = report_to_table(rows);
  write_text(dir / "bench.json", report_to_json(rows) + "\n");
  write_text(dir / "bench.txt", table);
  out << table;
  const bool all_ok = std::all_of(rows.begin(), rows.end(), [](const BenchRow& r) { return r.ok(); });
  for (const auto& r : rows) {
    if (!r.ok()) g_log->error("{}: {}", r.model, r.error);
  }
  return all_ok ? kExitOk : kExitRuntime;
}

int cmd_infer(const Args& a, std::ostream& out) {
  const AnyModel model = load_model(a.infer.model);
  for (const auto& path : a.infer.images) {
    const Image img = resize_bilinear(load_image(path), kImageSize, kImageSize);
    const Tensor probs = ops::softmax(predict_logits(model, image_to_tensor(img)));
    const auto cls = argmax_classes(probs).front();
    const std::int64_t classes = probs.shape().c;
    nlohmann::ordered_json j;
    j["path"] = path;
    if (classes == 2) {
      j["class"] = to_string(static_cast<Label>(cls));
    } else {
      j["class"] = cls;
    }
    j["probability"] = probs.data()[static_cast<std::size_t>(cls)];
    out << j.dump() << '\n';
  }
  return kExitOk;
}

std::string resolved_config(const CLI::App& app) {
  std::string text;
  const auto dump = [&](const CLI::App& scope, const std::string& prefix) {
    for (const CLI::Option* opt : scope.get_options()) {
      if (opt->get_name() == "--help" || opt->get_lnames().empty()) continue;
      std::string value = opt->get_default_str();
      if (opt->count() > 0) {
        value.clear();
        for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      }
      text += " " + prefix + opt->get_lnames().front() + "=" + value;
    }
  };
  dump(app, "");
  for (const CLI::App* sub : app.get_subcommands()) dump(*sub, sub->get_name() + ".");
  return text.empty() ? text : text.substr(1);
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::spec:
      return kExitUsage;
    case ErrorKind::data:
    case ErrorKind::decode:
    case ErrorKind::bad_magic:
    case ErrorKind::version_mismatch:
    case ErrorKind::truncated:
    case ErrorKind::checksum:
    case ErrorKind::placement:
      return kExitData;
    default:
      return kExitRuntime;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  g_log = std::make_shared<spdlog::logger>("edgelite", std::make_shared<spdlog::sinks::ostream_sink_st>(err));
  g_log->set_pattern("[%l] %v");
  Args a;
  CLI::App app("EdgeLite CNN engine and benchmark harness", "edgelite");
  build_app(app, a);
  try {
    std::vector<std::string> args = with_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  g_log->set_level(spdlog::level::from_str(a.g.log_level));
  g_log->info("resolved config: {}", resolved_config(app));
  try {
    const std::string verb = app.get_subcommands().front()->get_name();
    if (verb == "synth") return cmd_synth(a, out);
    if (verb == "train") return cmd_train(a, out);
    if (verb == "eval") return cmd_eval(a, out);
    if (verb == "quantize") return cmd_quantize(a, out);
    if (verb == "bench") return cmd_bench(a, out);
    return cmd_infer(a, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int run_cli(int argc, const char* const* argv) {
  return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace edgelite
