#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "edgelite/dataset.hpp"
#include "edgelite/quant.hpp"

namespace edgelite {

/// Time source in seconds.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() = 0;
};

class SteadyClock final : public Clock {
 public:
  double now() override;
};

/// Replays a fixed list of time points.
class FakeClock final : public Clock {
 public:
  explicit FakeClock(std::vector<double> times) : times_(std::move(times)) {}
  /// Time points whose consecutive (start, stop) pairs span `durations`.
  static FakeClock from_durations(const std::vector<double>& durations);
  double now() override;

 private:
  std::vector<double> times_;
  std::size_t next_ = 0;
};

struct LatencyStats {
  std::vector<double> samples;
  double mean = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
  double cv = 0.0;  // population standard deviation / mean

  static LatencyStats from_samples(std::vector<double> samples);
};

/// Linear interpolation between closest ranks of a sorted sample list.
double percentile(std::vector<double> values, double q);

/// Runs `run` `warmup` times untimed, then `iters` timed calls.
LatencyStats measure_latency(const std::function<void()>& run, std::size_t warmup, std::size_t iters, Clock& clock);
LatencyStats measure_latency(const AnyModel& model, const Tensor& input, std::size_t warmup, std::size_t iters,
                             Clock& clock);

struct MemoryReport {
  std::uint64_t activation_peak_bytes = 0;  // weights excluded
  std::uint64_t weight_bytes = 0;
  std::uint64_t allocated_bytes = 0;
  std::uint64_t freed_bytes = 0;

  std::uint64_t total_peak_bytes() const { return activation_peak_bytes + weight_bytes; }
  /// Every byte allocated during the forward was released again.
  bool conserved() const { return allocated_bytes == freed_bytes; }
};

/// Peak engine-managed bytes live during one forward. Capability error when
/// accounting is disabled.
MemoryReport measure_memory(const AnyModel& model, const Tensor& input);

/// Bytes of parameter storage held by the model.
std::uint64_t weight_bytes(const AnyModel& model);

/// Peak resident set of this process in bytes, or 0 where unavailable.
std::uint64_t os_peak_rss_bytes();

struct BenchEnv {
  std::string host;
  unsigned cores = 0;
  unsigned threads = 1;
  friend bool operator==(const BenchEnv&, const BenchEnv&) = default;
};

BenchEnv current_env();

struct BenchRow {
  std::string model;
  std::string status = "ok";  // or "failed"
  std::string error;
  double size_mb = 0.0;
  double mean_s = 0.0;
  double p50_s = 0.0;
  double p95_s = 0.0;
  double cv = 0.0;
  double ram_mb = 0.0;         // accounting peak, weights included
  double activation_mb = 0.0;  // accounting peak, weights excluded
  double os_peak_rss_mb = 0.0;
  double accuracy = 0.0;
  BenchEnv env;

  bool ok() const { return status == "ok"; }
};

struct BenchConfig {
  std::size_t warmup = 5;
  std::size_t iters = 30;
  Split split = Split::test;
  std::size_t eval_batch_size = 32;
  /// Defaults to a steady clock.
  Clock* clock = nullptr;
};

/// One row per model file; a model that fails to load or run yields a
/// failed row and the run continues.
std::vector<BenchRow> run_benchmark(const std::vector<std::filesystem::path>& models, const DataSource& data,
                                    const BenchConfig& config = {});

std::string report_to_json(const std::vector<BenchRow>& rows);
std::vector<BenchRow> report_from_json(const std::string& text);
/// Aligned columns for humans.
std::string report_to_table(const std::vector<BenchRow>& rows);

}  // namespace edgelite
