#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgelite/dataset.hpp"
#include "edgelite/model.hpp"
#include "edgelite/quant.hpp"

namespace edgelite {

enum class Optimizer : std::uint8_t { adam, sgd_momentum };

std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view s);

struct Hyper {
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 0.002;
  double momentum = 0.9;  // beta1 for Adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.00004;
  std::size_t batch_size = 32;
  std::size_t epochs = 300;
  double aux_weight = 0.3;
  std::uint64_t seed = 0;

  /// Config error on out-of-range values.
  void validate() const;
  std::string to_json() const;
  friend bool operator==(const Hyper&, const Hyper&) = default;
};

template <class T>
struct LossResult {
  double loss = 0.0;
  BasicTensor<T> grad_main;
  std::vector<BasicTensor<T>> grad_aux;
};

/// CE(main) + aux_weight * sum of CE(aux_i), with gradients for every head.
template <class T>
LossResult<T> total_loss(const BasicTensor<T>& main_logits, std::span<const BasicTensor<T>> aux_logits,
                         std::span<const std::int32_t> labels, double aux_weight);

/// Per-parameter moment buffers, created on the first step.
template <class T>
struct OptimizerState {
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;
  std::int64_t step = 0;
};

/// Adam with L2 decay added to the gradient. Non-trainable params are skipped.
template <class T>
void adam_step(std::span<Param<T>* const> params, OptimizerState<T>& state, const Hyper& hyper);

/// Heavy-ball SGD: buf = momentum * buf + g; w -= lr * buf.
template <class T>
void sgd_momentum_step(std::span<Param<T>* const> params, OptimizerState<T>& state, const Hyper& hyper);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = -1.0;
  std::string checkpoint;  // file of the best model, or "memory"

  /// One JSON object per line: epoch, train_loss, train_acc, val_acc, seconds.
  std::string to_jsonl() const;
  /// Same records with wall time dropped, for determinism comparisons.
  bool same_trajectory(const TrainLog& other) const;
};

struct TrainOptions {
  /// When set, the best model so far is saved here.
  std::optional<std::filesystem::path> checkpoint_path;
  /// Called after every epoch; returning false ends training.
  std::function<bool(const EpochRecord&)> on_epoch;
  std::size_t eval_batch_size = 32;
};

/// Seeded mini-batch training with per-epoch validation. The model ends up
/// holding the weights of its best validation epoch.
TrainLog train(Model& model, const DataSource& data, const Hyper& hyper, Rng& rng,
               const TrainOptions& options = {});

/// Top-1 class (lowest index on ties) per row of (n, k, 1, 1) logits.
std::vector<std::int32_t> argmax_classes(const Tensor& logits);

double evaluate(const Model& model, const DataSource& data, Split split, std::size_t batch_size = 32);
double evaluate(const QuantizedModel& model, const DataSource& data, Split split, std::size_t batch_size = 32);
double evaluate(const AnyModel& model, const DataSource& data, Split split, std::size_t batch_size = 32);

struct GridSpace {
  std::array<double, 2> batch_size{8, 128};
  std::array<double, 2> learning_rate{0.0005, 0.1};
  std::array<double, 2> momentum{0.0, 0.9};
  std::array<double, 2> decay{0.00001, 0.0001};
  std::size_t epochs = 300;
  std::size_t points_per_axis = 4;

  /// Config error unless every range is ordered and inside the searchable box.
  void validate() const;
  std::size_t cardinality() const;
  /// Every grid point in enumeration order: learning rate slowest, then
  /// decay, batch size, momentum.
  std::vector<Hyper> enumerate(const Hyper& base) const;
  /// True when `h` lies inside the box of this space.
  bool contains(const Hyper& h) const;
};

struct GridEntry {
  std::size_t index = 0;  // position in enumeration order
  Hyper hyper;
  double val_acc = 0.0;
};

struct GridResult {
  Hyper best;
  std::vector<GridEntry> leaderboard;  // non-increasing val_acc
  bool truncated = false;
  std::string warning;
};

using ModelFactory = std::function<Model(Rng&)>;

/// Trains `budget` evenly strided grid points and ranks them by best
/// validation accuracy. A budget above the grid size is truncated with a warning.
GridResult grid_search(const GridSpace& space, std::size_t budget, const ModelFactory& factory,
                       const DataSource& data, const Hyper& base = {},
                       const TrainOptions& options = {});

}  // namespace edgelite
