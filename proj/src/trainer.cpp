#include "edgelite/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "edgelite/serialize.hpp"
#include "json.hpp"

namespace edgelite {

namespace {

constexpr std::array<double, 2> kBatchRange{8, 128};
constexpr std::array<double, 2> kLearningRateRange{0.0005, 0.1};
constexpr std::array<double, 2> kMomentumRange{0.0, 0.9};
constexpr std::array<double, 2> kDecayRange{0.00001, 0.0001};

bool inside(double v, const std::array<double, 2>& r) { return v >= r[0] && v <= r[1]; }

void check_range(const std::array<double, 2>& r, const std::array<double, 2>& box, const char* name) {
  require(r[0] <= r[1] && inside(r[0], box) && inside(r[1], box), ErrorKind::config,
          std::string("grid range for ") + name + " must be ordered and within [" + std::to_string(box[0]) + ", " +
              std::to_string(box[1]) + "]");
}

std::vector<double> linear_points(const std::array<double, 2>& r, std::size_t n) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(n == 1 ? r[0] : r[0] + (r[1] - r[0]) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  out.back() = n == 1 ? r[0] : r[1];
  return out;
}

std::vector<double> log_points(const std::array<double, 2>& r, std::size_t n) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    out.push_back(std::clamp(r[0] * std::pow(r[1] / r[0], t), r[0], r[1]));
  }
  if (n > 1) out.back() = r[1];
  out.front() = r[0];
  return out;
}

template <class T>
void check_state(std::span<Param<T>* const> params, OptimizerState<T>& state) {
  if (state.first.empty()) {
    for (const auto* p : params) {
      state.first.emplace_back(p->value.size(), T(0));
      state.second.emplace_back(p->value.size(), T(0));
    }
  }
  require(state.first.size() == params.size(), ErrorKind::contract, "optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    require(p->grad.shape() == p->value.shape(), ErrorKind::contract, p->name + ": gradient shape mismatch");
    require(state.first[i].size() == p->value.size(), ErrorKind::contract, p->name + ": optimizer state mismatch");
  }
}

template <class Fn>
double evaluate_with(const DataSource& data, Split split, std::size_t batch_size, Fn&& logits_of) {
  const std::size_t total = data.size(split);
  require(total > 0, ErrorKind::data, "split " + std::string(to_string(split)) + " is empty");
  require(batch_size >= 1, ErrorKind::config, "evaluation batch size must be positive");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  for (std::size_t start = 0; start < total; start += batch_size) {
    idx.resize(std::min(batch_size, total - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor batch = load_batch(data, split, idx, &labels);
    const auto predicted = argmax_classes(logits_of(batch));
    for (std::size_t i = 0; i < idx.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

std::string_view to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd_momentum"; }

Optimizer parse_optimizer(std::string_view s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd_momentum" || s == "sgd") return Optimizer::sgd_momentum;
  raise(ErrorKind::config, "unknown optimizer '" + std::string(s) + "'");
}

void Hyper::validate() const {
  require(std::isfinite(learning_rate) && learning_rate > 0, ErrorKind::config, "learning_rate must be positive");
  require(momentum >= 0 && momentum < 1, ErrorKind::config, "momentum must lie in [0, 1)");
  require(beta2 >= 0 && beta2 < 1, ErrorKind::config, "beta2 must lie in [0, 1)");
  require(epsilon > 0, ErrorKind::config, "epsilon must be positive");
  require(weight_decay >= 0, ErrorKind::config, "weight_decay must be non-negative");
  require(batch_size >= 1, ErrorKind::config, "batch_size must be at least 1");
  require(epochs >= 1, ErrorKind::config, "epochs must be at least 1");
  require(aux_weight >= 0, ErrorKind::config, "aux_weight must be non-negative");
}

std::string Hyper::to_json() const {
  nlohmann::ordered_json j;
  j["optimizer"] = to_string(optimizer);
  j["learning_rate"] = learning_rate;
  j["momentum"] = momentum;
  j["beta2"] = beta2;
  j["epsilon"] = epsilon;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["aux_weight"] = aux_weight;
  j["seed"] = seed;
  return j.dump();
}

template <class T>
LossResult<T> total_loss(const BasicTensor<T>& main_logits, std::span<const BasicTensor<T>> aux_logits,
                         std::span<const std::int32_t> labels, double aux_weight) {
  require(aux_weight >= 0, ErrorKind::config, "aux_weight must be non-negative");
  LossResult<T> out;
  auto main = ops::softmax_xent(main_logits, labels);
  out.loss = main.loss;
  out.grad_main = std::move(main.grad_logits);
  for (const auto& aux : aux_logits) {
    require(aux.shape().n == main_logits.shape().n, ErrorKind::shape, "aux logits batch differs from main");
    auto a = ops::softmax_xent(aux, labels);
    out.loss += aux_weight * a.loss;
    auto g = a.grad_logits.mutable_data();
    for (auto& v : g) v = static_cast<T>(v * aux_weight);
    out.grad_aux.push_back(std::move(a.grad_logits));
  }
  return out;
}

template <class T>
void adam_step(std::span<Param<T>* const> params, OptimizerState<T>& state, const Hyper& hyper) {
  check_state(params, state);
  ++state.step;
  const double b1 = hyper.momentum;
  const double b2 = hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    if (!p.trainable) continue;
    auto w = p.value.mutable_data();
    const auto g = p.grad.data();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = static_cast<double>(g[k]) + hyper.weight_decay * w[k];
      m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * grad);
      v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * grad * grad);
      const double mh = m[k] / c1;
      const double vh = v[k] / c2;
      w[k] = static_cast<T>(w[k] - hyper.learning_rate * mh / (std::sqrt(vh) + hyper.epsilon));
    }
  }
}

template <class T>
void sgd_momentum_step(std::span<Param<T>* const> params, OptimizerState<T>& state, const Hyper& hyper) {
  check_state(params, state);
  const bool first = state.step == 0;
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    if (!p.trainable) continue;
    auto w = p.value.mutable_data();
    const auto g = p.grad.data();
    auto& buf = state.first[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = static_cast<double>(g[k]) + hyper.weight_decay * w[k];
      buf[k] = static_cast<T>(first ? grad : hyper.momentum * buf[k] + grad);
      w[k] = static_cast<T>(w[k] - hyper.learning_rate * buf[k]);
    }
  }
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["train_acc"] = e.train_acc;
    j["val_acc"] = e.val_acc;
    j["seconds"] = e.seconds;
    out += j.dump();
    out += '\n';
  }
  return out;
}

bool TrainLog::same_trajectory(const TrainLog& other) const {
  if (epochs.size() != other.epochs.size() || best_epoch != other.best_epoch || best_val_acc != other.best_val_acc) {
    return false;
  }
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.train_acc != b.train_acc || a.val_acc != b.val_acc) {
      return false;
    }
  }
  return true;
}

std::vector<std::int32_t> argmax_classes(const Tensor& logits) {
  const Shape& s = logits.shape();
  const std::int64_t k = s.c * s.h * s.w;
  std::vector<std::int32_t> out;
  out.reserve(static_cast<std::size_t>(s.n));
  const auto d = logits.data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const float* row = d.data() + n * k;
    out.push_back(static_cast<std::int32_t>(std::max_element(row, row + k) - row));
  }
  return out;
}

double evaluate(const Model& model, const DataSource& data, Split split, std::size_t batch_size) {
  return evaluate_with(data, split, batch_size, [&](const Tensor& x) { return model.forward(x, Mode::infer).main; });
}

double evaluate(const QuantizedModel& model, const DataSource& data, Split split, std::size_t batch_size) {
  return evaluate_with(data, split, batch_size, [&](const Tensor& x) { return model.forward(x); });
}

double evaluate(const AnyModel& model, const DataSource& data, Split split, std::size_t batch_size) {
  return evaluate_with(data, split, batch_size, [&](const Tensor& x) { return predict_logits(model, x); });
}

TrainLog train(Model& model, const DataSource& data, const Hyper& hyper, Rng& rng, const TrainOptions& options) {
  hyper.validate();
  const std::size_t n_train = data.size(Split::train);
  require(n_train > 0, ErrorKind::data, "train split is empty");
  require(data.size(Split::val) > 0, ErrorKind::data, "val split is empty");

  TrainLog log;
  log.checkpoint = options.checkpoint_path ? options.checkpoint_path->string() : "memory";
  Model best = model;
  OptimizerState<float> state;
  std::vector<std::size_t> order(n_train);
  std::vector<int> labels;
  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n_train; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n_train; start += hyper.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(hyper.batch_size, n_train - start));
      const Tensor batch = load_batch(data, Split::train, idx, &labels);
      Model::Tape tape;
      const auto out = model.forward(batch, Mode::train, &rng, &tape);
      const auto loss = total_loss<float>(out.main, out.aux, labels, hyper.aux_weight);
      model.zero_grad();
      model.backward(tape, loss.grad_main, loss.grad_aux);
      auto params = model.params();
      if (hyper.optimizer == Optimizer::adam) {
        adam_step<float>(params, state, hyper);
      } else {
        sgd_momentum_step<float>(params, state, hyper);
      }
      loss_sum += loss.loss * static_cast<double>(idx.size());
      const auto predicted = argmax_classes(out.main);
      for (std::size_t i = 0; i < idx.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_train);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(n_train);
    rec.val_acc = evaluate(model, data, Split::val, options.eval_batch_size);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (rec.val_acc > log.best_val_acc) {
      log.best_val_acc = rec.val_acc;
      log.best_epoch = epoch;
      best = model;
      if (options.checkpoint_path) save_model(best, *options.checkpoint_path);
    }
    if (options.on_epoch && !options.on_epoch(rec)) break;
  }
  model = std::move(best);
  return log;
}

void GridSpace::validate() const {
  check_range(batch_size, kBatchRange, "batch_size");
  check_range(learning_rate, kLearningRateRange, "learning_rate");
  check_range(momentum, kMomentumRange, "momentum");
  check_range(decay, kDecayRange, "decay");
  require(points_per_axis >= 1, ErrorKind::config, "points_per_axis must be at least 1");
  require(epochs >= 1, ErrorKind::config, "grid epochs must be at least 1");
}

std::size_t GridSpace::cardinality() const {
  return points_per_axis * points_per_axis * points_per_axis * points_per_axis;
}

std::vector<Hyper> GridSpace::enumerate(const Hyper& base) const {
  validate();
  const auto lrs = log_points(learning_rate, points_per_axis);
  const auto decays = log_points(decay, points_per_axis);
  const auto batches = linear_points(batch_size, points_per_axis);
  const auto momenta = linear_points(momentum, points_per_axis);
  std::vector<Hyper> out;
  out.reserve(cardinality());
  for (double lr : lrs) {
    for (double d : decays) {
      for (double b : batches) {
        for (double m : momenta) {
          Hyper h = base;
          h.learning_rate = lr;
          h.weight_decay = d;
          h.batch_size = static_cast<std::size_t>(std::llround(b));
          h.momentum = m;
          h.epochs = epochs;
          out.push_back(h);
        }
      }
    }
  }
  return out;
}

bool GridSpace::contains(const Hyper& h) const {
  return inside(static_cast<double>(h.batch_size), batch_size) && inside(h.learning_rate, learning_rate) &&
         inside(h.momentum, momentum) && inside(h.weight_decay, decay);
}

GridResult grid_search(const GridSpace& space, std::size_t budget, const ModelFactory& factory,
                       const DataSource& data, const Hyper& base, const TrainOptions& options) {
  require(budget >= 1, ErrorKind::config, "grid budget must be at least 1");
  const auto points = space.enumerate(base);
  GridResult result;
  if (budget > points.size()) {
    result.truncated = true;
    result.warning = "budget " + std::to_string(budget) + " exceeds the " + std::to_string(points.size()) +
                     " grid points; truncated";
    budget = points.size();
  }
  const Rng root(base.seed);
  for (std::size_t i = 0; i < budget; ++i) {
    const std::size_t index = i * points.size() / budget;
    Hyper h = points[index];
    Rng rng = root.fork(index);
    h.seed = rng.seed();
    Model model = factory(rng);
    const TrainLog log = train(model, data, h, rng, options);
    result.leaderboard.push_back({index, h, log.best_val_acc});
  }
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                   [](const GridEntry& a, const GridEntry& b) { return a.val_acc > b.val_acc; });
  result.best = result.leaderboard.front().hyper;
  return result;
}

#define EDGELITE_TRAINER_INSTANTIATE(T)                                                                           \
  template LossResult<T> total_loss<T>(const BasicTensor<T>&, std::span<const BasicTensor<T>>,                    \
                                       std::span<const std::int32_t>, double);                                    \
  template void adam_step<T>(std::span<Param<T>* const>, OptimizerState<T>&, const Hyper&);                       \
  template void sgd_momentum_step<T>(std::span<Param<T>* const>, OptimizerState<T>&, const Hyper&);

EDGELITE_TRAINER_INSTANTIATE(float)
EDGELITE_TRAINER_INSTANTIATE(double)

}  // namespace edgelite
