// Acceptance runner: one PASS/FAIL line per criterion.
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "edgelite/bench.hpp"
#include "edgelite/cli.hpp"
#include "edgelite/error.hpp"
#include "edgelite/serialize.hpp"
#include "edgelite/trainer.hpp"
#include "oracles.hpp"

using namespace edgelite;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "!") + what);
  }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

Tensor random_batch(std::int64_t n, Rng& rng) {
  Tensor t({n, 3, 224, 224});
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

MemorySource procedural_split(Split split, std::size_t n, std::uint64_t seed, MemorySource src = {}) {
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const Label l = i % 2 == 0 ? Label::hazard : Label::clean;
    src.add(split, procedural_sample(l, rng), static_cast<int>(l));
  }
  return src;
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "edgelite");
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out != nullptr) *out = o.str();
  if (code != 0) std::cerr << e.str();
  return code;
}

// ------------------------------------------------------------ criteria

Outcome shape_conformance(const fs::path&) {
  Outcome r;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1);
  Model model = build_edgelite(HeadConfig{1000}, default_widths(), rng);
  std::map<std::string, Shape, std::less<>> seen;
  const EdgeObserver<float> observer = [&](std::string_view edge, const Tensor& t) {
    seen.emplace(std::string(edge), t.shape());
  };
  (void)model.forward(random_batch(1, rng), Mode::infer, nullptr, nullptr, &observer);
  const std::vector<std::pair<std::string, Shape>> table = {
      {"input", {1, 3, 224, 224}},      {"stem.conv1", {1, 64, 112, 112}}, {"stem.pool1", {1, 64, 56, 56}},
      {"stem.conv2", {1, 192, 56, 56}}, {"stem.conv3", {1, 256, 56, 56}},  {"stem.conv4", {1, 480, 56, 56}},
      {"stem.pool2", {1, 480, 14, 14}}, {"blocks.4", {1, 832, 14, 14}},    {"pool3", {1, 832, 7, 7}},
      {"blocks.6", {1, 1024, 7, 7}},    {"avgpool", {1, 1024, 1, 1}},      {"dropout", {1, 1024, 1, 1}},
      {"fc", {1, 1000, 1, 1}},
  };
  std::size_t matched = 0;
  for (const auto& [edge, shape] : table) {
    auto it = seen.find(edge);
    if (it != seen.end() && it->second == shape) {
      ++matched;
    } else {
      r.expect(false, edge + " expected " + shape.str());
    }
  }
  r.expect(matched == table.size(), std::to_string(matched) + "/" + std::to_string(table.size()) + " table rows");
  model.replace_head(2, rng);
  const Shape head = model.forward(random_batch(1, rng), Mode::infer).main.shape();
  r.expect(head == Shape{1, 2, 1, 1}, "classifier " + head.str());
  r.expect(model.depth() == 19, "depth " + std::to_string(model.depth()));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.expect(secs < 10.0, fmt(secs, 3) + " s < 10 s");
  return r;
}

Outcome gradient_suite(const fs::path&) {
  Outcome r;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2);
  constexpr double kOpTol = 1e-4;
  double worst = 0.0;
  const auto track = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    if (err >= kOpTol) r.expect(false, name + " rel err " + fmt(err));
  };

  for (auto [k, s, p] : {std::array<std::int64_t, 3>{3, 1, 1}, {3, 2, 1}, {5, 1, 2}, {7, 2, 3}, {1, 1, 0}}) {
    Tensor64 x = oracle::random_tensor({1, 4, 8, 8}, rng);
    Tensor64 w = oracle::random_tensor({3, 4, k, k}, rng);
    Tensor64 b = oracle::random_tensor({1, 3, 1, 1}, rng);
    const ops::ConvSpec spec{3, k, s, p, true};
    const auto fwd = ops::conv2d_fwd(x, w, b, spec);
    const Tensor64 proj = oracle::random_tensor(fwd.value.shape(), rng);
    const auto g = ops::conv2d_bwd(proj, fwd.ctx);
    const auto loss = [&] { return oracle::dot(ops::conv2d_fwd(x, w, b, spec).value, proj); };
    const std::string tag = "conv k" + std::to_string(k) + "/s" + std::to_string(s);
    track(tag + " input", oracle::worst_gradient_error(x, g.input, loss));
    track(tag + " weight", oracle::worst_gradient_error(w, g.weight, loss));
    track(tag + " bias", oracle::worst_gradient_error(b, g.bias, loss));
  }

  for (ops::PoolKind kind : {ops::PoolKind::max, ops::PoolKind::avg}) {
    for (auto [k, s, p] : {std::array<std::int64_t, 3>{3, 2, 1}, {3, 1, 1}, {3, 4, 0}, {5, 3, 0}}) {
      // Distinct values 0.01 apart keep max-pool windows away from ties.
      Tensor64 x({1, 4, 8, 8});
      std::vector<double> vals(x.size());
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<double>(i) * 0.01 - 1.0;
      for (std::size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[rng.below(i)]);
      std::copy(vals.begin(), vals.end(), x.mutable_data().begin());
      const ops::PoolSpec spec{kind, k, s, p};
      const auto fwd = ops::pool2d_fwd(x, spec);
      const Tensor64 proj = oracle::random_tensor(fwd.value.shape(), rng);
      const Tensor64 g = ops::pool2d_bwd(proj, fwd.ctx);
      const auto loss = [&] { return oracle::dot(ops::pool2d_fwd(x, spec).value, proj); };
      track(std::string(kind == ops::PoolKind::max ? "maxpool" : "avgpool") + " k" + std::to_string(k),
            oracle::worst_gradient_error(x, g, loss));
    }
  }

  {
    Tensor64 x = oracle::random_tensor({1, 4, 8, 8}, rng);
    const auto fwd = ops::relu_fwd(x);
    const Tensor64 proj = oracle::random_tensor(x.shape(), rng);
    const Tensor64 g = ops::relu_bwd(proj, fwd.ctx);
    const auto loss = [&] { return oracle::dot(ops::relu_fwd(x).value, proj); };
    track("relu", oracle::worst_gradient_error(x, g, loss, 1e-4, 1e-6,
                                                [&](std::size_t i) { return std::abs(x.data()[i]) < 1e-3; }));
  }
  {
    Tensor64 x = oracle::random_tensor({1, 4, 8, 8}, rng);
    Rng mask(5);
    const auto fwd = ops::dropout_fwd(x, 0.4, Mode::train, mask);
    const Tensor64 proj = oracle::random_tensor(x.shape(), rng);
    const Tensor64 g = ops::dropout_bwd(proj, fwd.ctx);
    const auto loss = [&] {
      Rng same(5);
      return oracle::dot(ops::dropout_fwd(x, 0.4, Mode::train, same).value, proj);
    };
    track("dropout", oracle::worst_gradient_error(x, g, loss));
  }
  {
    Tensor64 x = oracle::random_tensor({4, 8, 1, 1}, rng);
    Tensor64 w = oracle::random_tensor({4, 8, 1, 1}, rng);
    Tensor64 b = oracle::random_tensor({1, 4, 1, 1}, rng);
    const auto fwd = ops::linear_fwd(x, w, b);
    const Tensor64 proj = oracle::random_tensor(fwd.value.shape(), rng);
    const auto g = ops::linear_bwd(proj, fwd.ctx);
    const auto loss = [&] { return oracle::dot(ops::linear_fwd(x, w, b).value, proj); };
    track("linear input", oracle::worst_gradient_error(x, g.input, loss));
    track("linear weight", oracle::worst_gradient_error(w, g.weight, loss));
    track("linear bias", oracle::worst_gradient_error(b, g.bias, loss));
  }
  {
    Tensor64 logits = oracle::random_tensor({4, 3, 1, 1}, rng, -3.0, 3.0);
    const std::vector<std::int32_t> labels = {0, 2, 1, 2};
    const auto res = ops::softmax_xent(logits, labels);
    track("softmax_xent", oracle::worst_gradient_error(logits, res.grad_logits,
                                                       [&] { return ops::softmax_xent(logits, labels).loss; }));
  }
  {
    EdgeLiteBlock<double> block("b", 4, BlockWidths{2, 2, 3, 2, 2, 1}, rng);
    Tensor64 x = oracle::random_tensor({1, 4, 8, 8}, rng);
    typename EdgeLiteBlock<double>::Tape tape;
    const Tensor64 out = block.forward(x, &tape, nullptr);
    const Tensor64 proj = oracle::random_tensor(out.shape(), rng);
    const Tensor64 gx = block.backward(proj, tape);
    const auto loss = [&] { return oracle::dot(block.forward(x, nullptr, nullptr), proj); };
    // ReLU and max-pool kinks inside the stencil are matched against one-sided slopes.
    const auto ci = oracle::kink_aware_error(x, gx, loss);
    const auto cw = oracle::kink_aware_error(block.b5.weight.value, block.b5.weight.grad, loss);
    track("block input", ci.worst);
    track("block b5 weight", cw.worst);
    r.expect((ci.kinks + cw.kinks) * 10 <= ci.checked + cw.checked,
             "block kinks " + std::to_string(ci.kinks + cw.kinks) + "/" + std::to_string(ci.checked + cw.checked));
  }
  r.expect(worst < kOpTol, "worst op rel err " + fmt(worst) + " < 1e-4");

  // Whole network, fp64, width 0.25, dropout off so the loss is deterministic.
  ModelConfig cfg = ModelConfig::scaled(HeadConfig{2}, 0.25);
  cfg.dropout = 0.0;
  cfg.aux_dropout = 0.0;
  Rng init(3);
  Model64 model = Model(cfg, init).cast<double>();
  Tensor64 batch({2, 3, 224, 224});
  for (auto& v : batch.mutable_data()) v = rng.uniform(-1.0, 1.0);
  const std::vector<std::int32_t> labels = {0, 1};
  const auto loss = [&] {
    Rng d(0);
    const auto out = model.forward(batch, Mode::train, &d);
    return total_loss<double>(out.main, out.aux, labels, 0.3).loss;
  };
  {
    Rng d(0);
    Model64::Tape tape;
    const auto out = model.forward(batch, Mode::train, &d, &tape);
    const auto l = total_loss<double>(out.main, out.aux, labels, 0.3);
    model.zero_grad();
    model.backward(tape, l.grad_main, l.grad_aux);
  }
  double net_worst = 0.0;
  std::size_t checked = 0, kinks = 0;
  for (const char* name : {"stem.conv1.weight", "stem.conv2.bias", "stem.conv4.weight", "blocks.0.b1.weight",
                           "blocks.1.r3.weight", "blocks.2.b5.weight", "blocks.4.bp.weight", "blocks.6.b3.bias",
                           "fc.weight", "fc.bias", "aux.0.conv.weight", "aux.1.fc1.weight"}) {
    auto* p = model.find_param(name);
    if (p == nullptr) {
      r.expect(false, std::string("missing ") + name);
      continue;
    }
    // Largest analytic entries among random candidates, so the check is not dominated by roundoff.
    std::vector<std::size_t> picks;
    for (int k = 0; k < 2; ++k) {
      std::size_t best = 0;
      double mag = -1.0;
      for (int j = 0; j < 64; ++j) {
        const std::size_t i = rng.below(p->grad.size());
        if (std::abs(p->grad.data()[i]) > mag) mag = std::abs(p->grad.data()[i]), best = i;
      }
      picks.push_back(best);
    }
    const auto c = oracle::kink_aware_error(p->value, p->grad, loss, picks, 1e-6, 1e-8);
    net_worst = std::max(net_worst, c.worst);
    checked += c.checked;
    kinks += c.kinks;
  }
  r.expect(net_worst < 1e-3, "network spot check " + std::to_string(checked) + " entries, worst " +
                                 fmt(net_worst) + " < 1e-3");
  r.expect(kinks * 10 <= checked, std::to_string(kinks) + " entries at kinks");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.expect(secs < 120.0, fmt(secs, 3) + " s < 120 s");
  return r;
}

Outcome aux_head_contract(const fs::path& work) {
  Outcome r;
  Rng rng(4);
  ModelConfig cfg = ModelConfig::scaled(HeadConfig{2}, 0.25);
  cfg.dropout = 0.0;
  cfg.aux_dropout = 0.0;
  Model model(cfg, rng);
  const Tensor batch = random_batch(2, rng);
  Rng d(0);
  const auto train_out = model.forward(batch, Mode::train, &d);
  const std::size_t before = model.aux_head_count();
  const auto params_before = model.param_count();
  const StripStatus st = model.strip_training_layers();
  r.expect(st == StripStatus::stripped && before - model.aux_head_count() == 2,
           "removed " + std::to_string(before - model.aux_head_count()) + " aux heads");
  r.expect(model.param_count() < params_before, "params " + std::to_string(params_before) + " -> " +
                                                    std::to_string(model.param_count()));
  const Tensor stripped = model.forward(batch, Mode::infer).main;
  r.expect(stripped.identical(train_out.main), "stripped forward equals train main output");
  fs::create_directories(work);
  const fs::path file = work / "stripped.edgl";
  save_model(model, file);
  std::size_t aux_names = 0;
  const auto names = read_tensor_names(file);
  for (const auto& n : names) aux_names += n.find("aux") != std::string::npos ? 1 : 0;
  r.expect(aux_names == 0, std::to_string(names.size()) + " tensors, " + std::to_string(aux_names) + " aux");
  return r;
}

Outcome quantization_size(const fs::path&) {
  Outcome r;
  Rng rng(5);
  ModelConfig cfg = ModelConfig::edgelite(HeadConfig{2});
  cfg.with_aux = false;
  const Model model(cfg, rng);
  const std::vector<Tensor> calib = {random_batch(2, rng)};
  const QuantizedModel q = quantize_model(model, calibrate(model, calib));
  const double ratio = static_cast<double>(serialized_size(q)) / static_cast<double>(serialized_size(model));
  r.expect(ratio <= 0.35, "size ratio " + fmt(ratio) + " <= 0.35");

  // Exhaustive grid: every float between the range ends at 1/64-step spacing, for several ranges.
  double worst = 0.0;
  std::size_t points = 0;
  for (auto [lo, hi] : {std::pair{-1.0f, 1.0f}, {-0.02f, 6.3f}, {-40.0f, 3.0f}, {0.0f, 1.0f}, {-5e-4f, 5e-4f}}) {
    const QuantParams qp = params_from_range(lo, hi);
    const float a = std::min(lo, 0.0f), b = std::max(hi, 0.0f);
    const int steps = 255 * 64;
    for (int i = 0; i <= steps; ++i) {
      const float v = a + (b - a) * static_cast<float>(i) / static_cast<float>(steps);
      const double err = std::abs(static_cast<double>(v) - dequantize_value(quantize_value(v, qp), qp));
      worst = std::max(worst, err / (qp.scale / 2.0));
      ++points;
    }
  }
  // Float evaluation of the grid point and scale can add a few ulps.
  r.expect(worst <= 1.0 + 1e-4, std::to_string(points) + " grid points, worst error " + fmt(worst) + " x scale/2");
  return r;
}

Outcome quantized_fidelity(const fs::path&) {
  Outcome r;
  const auto t0 = std::chrono::steady_clock::now();
  MemorySource data = procedural_split(Split::train, 200, 61);
  data = procedural_split(Split::val, 40, 62, std::move(data));
  data = procedural_split(Split::test, 200, 63, std::move(data));
  Rng rng(6);
  Model model = build_test_profile(HeadConfig{2}, rng);
  Hyper h;
  h.epochs = 8;
  (void)train(model, data, h, rng);
  model.strip_training_layers();
  std::array<std::size_t, 2> float_votes{};

  std::vector<Tensor> calib;
  for (std::size_t start = 0; start < 100; start += 10) {
    std::vector<std::size_t> idx(10);
    std::iota(idx.begin(), idx.end(), start);
    calib.push_back(load_batch(data, Split::train, idx));
  }
  const QuantizedModel q = quantize_model(model, calibrate(model, calib));

  std::size_t agree = 0;
  std::vector<double> deviation;
  const std::size_t n = data.size(Split::test);
  for (std::size_t start = 0; start < n; start += 20) {
    std::vector<std::size_t> idx(std::min<std::size_t>(20, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = load_batch(data, Split::test, idx);
    const Tensor a = model.forward(x, Mode::infer).main;
    const Tensor b = q.forward(x);
    const auto ca = argmax_classes(a);
    const auto cb = argmax_classes(b);
    for (std::size_t i = 0; i < ca.size(); ++i) {
      agree += ca[i] == cb[i] ? 1 : 0;
      ++float_votes[static_cast<std::size_t>(ca[i])];
    }
    for (std::size_t i = 0; i < a.size(); ++i) deviation.push_back(std::abs(a.data()[i] - b.data()[i]));
  }
  const double agreement = static_cast<double>(agree) / static_cast<double>(n);
  r.expect(agreement >= 0.95, "top-1 agreement " + fmt(agreement) + " >= 0.95 on " + std::to_string(n) + " images");
  // A constant predictor would agree trivially.
  r.expect(float_votes[0] > 0 && float_votes[1] > 0, "float predictions " + std::to_string(float_votes[0]) + "/" +
                                                        std::to_string(float_votes[1]) + " per class");
  const double median = oracle::sorted_percentile(deviation, 0.5);
  r.expect(median <= 0.25, "median logit deviation " + fmt(median) + " <= 0.25");
  r.notes.push_back("float test acc " + fmt(evaluate(model, data, Split::test)));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.expect(secs < 300.0, fmt(secs, 3) + " s < 300 s");
  return r;
}

Outcome training_sanity(const fs::path&) {
  Outcome r;
  // The same 32 images serve as validation, so val_acc is infer-mode train accuracy.
  MemorySource toy = procedural_split(Split::train, 32, 71);
  toy = procedural_split(Split::val, 32, 71, std::move(toy));
  Hyper h;
  h.epochs = 200;
  h.batch_size = 8;
  std::vector<TrainLog> logs;
  std::vector<Model> models;
  for (int run = 0; run < 2; ++run) {
    Rng rng(7);
    Model model = build_test_profile(HeadConfig{2}, rng);
    TrainOptions opts;
    opts.on_epoch = [](const EpochRecord& rec) { return rec.val_acc < 0.95; };
    logs.push_back(train(model, toy, h, rng, opts));
    models.push_back(std::move(model));
  }
  const double acc = evaluate(models[0], toy, Split::train);
  r.expect(acc >= 0.95 && logs[0].epochs.size() <= 200,
           "train acc " + fmt(acc) + " after " + std::to_string(logs[0].epochs.size()) + " epochs");
  r.expect(logs[0].same_trajectory(logs[1]) && models[0].same_weights(models[1]),
           "identical trajectory and weights across two seeded runs");

  MemorySource grid_data = procedural_split(Split::train, 8, 72);
  grid_data = procedural_split(Split::val, 8, 73, std::move(grid_data));
  GridSpace space;
  space.epochs = 1;
  const ModelFactory factory = [](Rng& rng) { return build_test_profile(HeadConfig{2}, rng); };
  const GridResult g = grid_search(space, 4, factory, grid_data);
  bool sorted = true, inside = true;
  for (std::size_t i = 0; i < g.leaderboard.size(); ++i) {
    if (i > 0 && g.leaderboard[i - 1].val_acc < g.leaderboard[i].val_acc) sorted = false;
    const Hyper& p = g.leaderboard[i].hyper;
    inside = inside && p.batch_size >= 8 && p.batch_size <= 128 && p.learning_rate >= 0.0005 * (1 - 1e-12) &&
             p.learning_rate <= 0.1 * (1 + 1e-12) && p.momentum >= 0.0 && p.momentum <= 0.9 &&
             p.weight_decay >= 1e-5 * (1 - 1e-12) && p.weight_decay <= 1e-4 * (1 + 1e-12);
  }
  r.expect(g.leaderboard.size() == 4 && sorted, "leaderboard of " + std::to_string(g.leaderboard.size()) + " sorted");
  r.expect(inside, "every grid point inside batch 8-128, lr 0.0005-0.1, momentum 0-0.9, decay 1e-5-1e-4");
  return r;
}

Outcome end_to_end(const fs::path& work) {
  Outcome r;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = work / "e2e";
  fs::remove_all(root);
  const fs::path data = root / "data";
  const fs::path run = root / "run";
  if (cli({"--seed", "11", "synth", "--dataset", "--out", data.string()}) != 0) {
    r.expect(false, "synth failed");
    return r;
  }
  const DatasetManifest m = DatasetManifest::read(data / "manifest.csv");
  const std::size_t trainval = m.count(Split::train) + m.count(Split::val);
  const std::size_t test = m.count(Split::test);
  bool per_class = true;
  for (Label l : kLabels) {
    per_class = per_class && m.count(l, Split::train) == 2224 && m.count(l, Split::val) == 526 &&
                m.count(l, Split::test) == 500;
  }
  r.expect(per_class && trainval == 5500 && test == 1000,
           "splits " + std::to_string(trainval) + " train+val / " + std::to_string(test) + " test");
  r.notes.push_back("origins real " + std::to_string(m.count(Origin::real)) + ", synthetic " +
                    std::to_string(m.count(Origin::synthetic)) + ", augmented " +
                    std::to_string(m.count(Origin::augmented)));

  if (cli({"--seed", "12", "train", "--manifest", (data / "manifest.csv").string(), "--out", run.string(),
           "--width", "0.25", "--epochs", "2"}) != 0) {
    r.expect(false, "train failed");
    return r;
  }
  std::string eval_out;
  if (cli({"eval", "--model", (run / "model.edgl").string(), "--manifest", (data / "manifest.csv").string(),
           "--split", "test"},
          &eval_out) != 0) {
    r.expect(false, "eval failed");
    return r;
  }
  const double acc = nlohmann::json::parse(eval_out).at("accuracy").get<double>();
  r.expect(acc >= 0.90, "float test accuracy " + fmt(acc) + " >= 0.90");

  if (cli({"quantize", "--model", (run / "model.edgl").string(), "--calib", (data / "manifest.csv").string()}) != 0) {
    r.expect(false, "quantize failed");
    return r;
  }
  if (cli({"bench", "--model", (run / "model.edgl").string(), "--model", (run / "model.int8.edgl").string(),
           "--manifest", (data / "manifest.csv").string(), "--out", (root / "bench").string()}) != 0) {
    r.expect(false, "bench failed");
    return r;
  }
  std::ifstream in(root / "bench" / "bench.json");
  const auto report = nlohmann::json::parse(in);
  bool columns = report.is_array() && report.size() == 2;
  for (const auto& row : report) {
    for (const char* key : {"size_mb", "mean_s", "ram_mb", "accuracy"}) columns = columns && row.contains(key);
  }
  r.expect(columns, "bench report has size, time, RAM and accuracy for 2 models");
  if (columns) {
    r.notes.push_back("float " + fmt(report[0]["size_mb"].get<double>()) + " MB " +
                      fmt(report[0]["mean_s"].get<double>()) + " s acc " + fmt(report[0]["accuracy"].get<double>()) +
                      "; int8 " + fmt(report[1]["size_mb"].get<double>()) + " MB " +
                      fmt(report[1]["mean_s"].get<double>()) + " s acc " + fmt(report[1]["accuracy"].get<double>()));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.expect(secs < 1800.0, fmt(secs, 4) + " s < 1800 s");
  return r;
}

Outcome bench_unit_suite(const fs::path&) {
  Outcome r;
  FakeClock clock = FakeClock::from_durations({1.0, 2.0, 3.0});
  const LatencyStats s = measure_latency([] {}, 1, 3, clock);
  r.expect(s.samples.size() == 3 && s.mean == 2.0 && s.p50 == 2.0, "fake clock [1,2,3] -> mean 2, p50 2");

  Rng rng(8);
  std::vector<double> d(30);
  for (auto& v : d) v = rng.uniform(0.05, 0.5);
  FakeClock replay = FakeClock::from_durations(d);
  const LatencyStats t = measure_latency([] {}, 5, 30, replay);
  const double mean = std::accumulate(t.samples.begin(), t.samples.end(), 0.0) / 30.0;
  const bool exact = std::abs(t.mean - mean) <= 1e-15 * mean &&
                     t.p50 == oracle::sorted_percentile(t.samples, 0.5) &&
                     t.p95 == oracle::sorted_percentile(t.samples, 0.95);
  r.expect(exact, "30 replayed samples match sort-based recomputation");

  ModelConfig cfg = ModelConfig::scaled(HeadConfig{2}, 0.25);
  cfg.with_aux = false;
  Rng init(9);
  const AnyModel model = Model(cfg, init);
  const MemoryReport mem = measure_memory(model, random_batch(1, rng));
  r.expect(mem.conserved(), "alloc " + std::to_string(mem.allocated_bytes) + " - free " +
                                std::to_string(mem.freed_bytes) + " = " +
                                std::to_string(static_cast<std::int64_t>(mem.allocated_bytes - mem.freed_bytes)));

  BenchRow row;
  row.model = "edgelite";
  row.size_mb = 0.123456789;
  row.mean_s = 0.0123;
  row.p50_s = 0.012;
  row.p95_s = 0.0151;
  row.cv = 0.031;
  row.ram_mb = 2.5;
  row.accuracy = 0.97;
  row.env = current_env();
  BenchRow failed;
  failed.model = "missing";
  failed.status = "failed";
  failed.error = "io: cannot open missing.edgl";
  const std::string text = report_to_json({row, failed});
  r.expect(report_to_json(report_from_json(text)) == text, "report JSON round trip byte-identical");
  return r;
}

struct Criterion {
  std::string name;
  std::function<Outcome(const fs::path&)> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"shape_conformance", shape_conformance}, {"gradient_suite", gradient_suite},
      {"aux_head_contract", aux_head_contract}, {"quantization_size", quantization_size},
      {"quantized_fidelity", quantized_fidelity}, {"training_sanity", training_sanity},
      {"end_to_end", end_to_end},               {"bench_unit_suite", bench_unit_suite},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("EdgeLite acceptance criteria");
  std::vector<std::string> only;
  std::string work = (fs::temp_directory_path() / "edgelite_acceptance").string();
  bool list = false;
  app.add_option("--only", only, "Run just these criteria");
  app.add_option("--work", work, "Scratch directory");
  app.add_flag("--list", list, "Print criterion names");
  CLI11_PARSE(app, argc, argv);

  if (list) {
    for (const auto& c : criteria()) std::cout << c.name << "\n";
    return 0;
  }
  for (const auto& name : only) {
    const bool known = std::any_of(criteria().begin(), criteria().end(), [&](const Criterion& c) { return c.name == name; });
    if (!known) {
      std::cerr << "unknown criterion " << name << "\n";
      return 2;
    }
  }

  int failures = 0;
  for (const auto& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Outcome o;
    try {
      o = c.run(fs::path(work) / c.name);
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("!exception: ") + e.what());
    }
    std::string detail;
    for (const auto& n : o.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << detail << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
