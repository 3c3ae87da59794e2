#include "edgelite/bench.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include <Eigen/Core>

#include "edgelite/trainer.hpp"
#include "json.hpp"

namespace edgelite {

namespace {

constexpr double kBytesPerMb = 1e6;

using ordered_json = nlohmann::ordered_json;

ordered_json row_to_json(const BenchRow& r) {
  ordered_json j;
  j["model"] = r.model;
  j["size_mb"] = r.size_mb;
  j["mean_s"] = r.mean_s;
  j["p50_s"] = r.p50_s;
  j["p95_s"] = r.p95_s;
  j["cv"] = r.cv;
  j["ram_mb"] = r.ram_mb;
  j["accuracy"] = r.accuracy;
  j["env"] = {{"host", r.env.host}, {"cores", r.env.cores}, {"threads", r.env.threads}};
  j["status"] = r.status;
  j["error"] = r.error;
  j["activation_mb"] = r.activation_mb;
  j["os_peak_rss_mb"] = r.os_peak_rss_mb;
  return j;
}

}  // namespace

double SteadyClock::now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

FakeClock FakeClock::from_durations(const std::vector<double>& durations) {
  std::vector<double> times;
  double t = 0.0;
  for (double d : durations) {
    times.push_back(t);
    t += d;
    times.push_back(t);
  }
  return FakeClock(std::move(times));
}

double FakeClock::now() {
  require(next_ < times_.size(), ErrorKind::measurement, "fake clock ran out of time points");
  return times_[next_++];
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorKind::measurement, "percentile of an empty sample");
  require(q >= 0.0 && q <= 1.0, ErrorKind::contract, "percentile rank must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

LatencyStats LatencyStats::from_samples(std::vector<double> samples) {
  require(!samples.empty(), ErrorKind::measurement, "latency stats need at least one sample");
  LatencyStats s;
  const double n = static_cast<double>(samples.size());
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0.0;
  for (double v : samples) var += (v - s.mean) * (v - s.mean);
  var /= n;
  s.cv = s.mean > 0.0 ? std::sqrt(var) / s.mean : 0.0;
  s.p50 = percentile(samples, 0.5);
  s.p95 = percentile(samples, 0.95);
  s.samples = std::move(samples);
  return s;
}

LatencyStats measure_latency(const std::function<void()>& run, std::size_t warmup, std::size_t iters, Clock& clock) {
  require(iters >= 3, ErrorKind::contract, "latency measurement needs at least 3 iterations");
  require(warmup >= 1, ErrorKind::contract, "latency measurement needs at least 1 warmup run");
  for (std::size_t i = 0; i < warmup; ++i) run();
  std::vector<double> samples;
  samples.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const double t0 = clock.now();
    run();
    const double t1 = clock.now();
    require(std::isfinite(t0) && std::isfinite(t1) && t1 >= t0, ErrorKind::measurement,
            "clock went backwards during a timed run");
    samples.push_back(t1 - t0);
  }
  return LatencyStats::from_samples(std::move(samples));
}

LatencyStats measure_latency(const AnyModel& model, const Tensor& input, std::size_t warmup, std::size_t iters,
                             Clock& clock) {
  return measure_latency([&] { (void)predict_logits(model, input); }, warmup, iters, clock);
}

std::uint64_t weight_bytes(const AnyModel& model) {
  std::uint64_t total = 0;
  if (const auto* m = std::get_if<Model>(&model)) {
    for (const auto* p : m->params()) total += p->value.bytes();
  } else {
    for (const auto* l : std::get<QuantizedModel>(model).layers()) {
      total += l->weight().bytes() + l->bias().size() * sizeof(std::int32_t);
    }
  }
  return total;
}

MemoryReport measure_memory(const AnyModel& model, const Tensor& input) {
  auto& acct = MemoryAccounting::instance();
  require(acct.enabled(), ErrorKind::capability, "memory accounting is disabled");
  const MemorySnapshot before = acct.snapshot();
  acct.reset_peak();
  { (void)predict_logits(model, input); }
  const MemorySnapshot after = acct.snapshot();
  MemoryReport r;
  r.activation_peak_bytes = after.peak_bytes - before.live_bytes;
  r.weight_bytes = weight_bytes(model);
  r.allocated_bytes = after.allocated_bytes - before.allocated_bytes;
  r.freed_bytes = after.freed_bytes - before.freed_bytes;
  return r;
}

std::uint64_t os_peak_rss_bytes() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      unsigned long long kb = 0;
      if (std::sscanf(line.c_str(), "VmHWM: %llu", &kb) == 1) return kb * 1024ULL;
    }
  }
  return 0;
}

BenchEnv current_env() {
  BenchEnv env;
  char host[256] = {};
  if (gethostname(host, sizeof host - 1) == 0) env.host = host;
  env.cores = std::max(1u, std::thread::hardware_concurrency());
  env.threads = static_cast<unsigned>(Eigen::nbThreads());
  return env;
}

std::vector<BenchRow> run_benchmark(const std::vector<std::filesystem::path>& models, const DataSource& data,
                                    const BenchConfig& config) {
  require(data.size(config.split) > 0, ErrorKind::data, "benchmark split is empty");
  SteadyClock steady;
  Clock& clock = config.clock != nullptr ? *config.clock : steady;
  const std::size_t first = 0;
  const Tensor sample = load_batch(data, config.split, std::span(&first, 1));
  const BenchEnv env = current_env();
  std::vector<BenchRow> rows;
  for (const auto& path : models) {
    BenchRow row;
    row.model = path.stem().string();
    row.env = env;
    try {
      const AnyModel model = load_model(path);
      row.size_mb = static_cast<double>(std::filesystem::file_size(path)) / kBytesPerMb;
      const LatencyStats lat = measure_latency(model, sample, config.warmup, config.iters, clock);
      row.mean_s = lat.mean;
      row.p50_s = lat.p50;
      row.p95_s = lat.p95;
      row.cv = lat.cv;
      const MemoryReport mem = measure_memory(model, sample);
      row.ram_mb = static_cast<double>(mem.total_peak_bytes()) / kBytesPerMb;
      row.activation_mb = static_cast<double>(mem.activation_peak_bytes) / kBytesPerMb;
      row.accuracy = evaluate(model, data, config.split, config.eval_batch_size);
      row.os_peak_rss_mb = static_cast<double>(os_peak_rss_bytes()) / kBytesPerMb;
    } catch (const std::exception& e) {
      row = BenchRow{};
      row.model = path.stem().string();
      row.env = env;
      row.status = "failed";
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string report_to_json(const std::vector<BenchRow>& rows) {
  ordered_json j = ordered_json::array();
  for (const auto& r : rows) j.push_back(row_to_json(r));
  return j.dump(2);
}

std::vector<BenchRow> report_from_json(const std::string& text) {
  std::vector<BenchRow> rows;
  try {
    const auto j = ordered_json::parse(text);
    require(j.is_array(), ErrorKind::decode, "bench report must be a JSON array");
    for (const auto& o : j) {
      BenchRow r;
      r.model = o.at("model").get<std::string>();
      r.size_mb = o.at("size_mb").get<double>();
      r.mean_s = o.at("mean_s").get<double>();
      r.p50_s = o.at("p50_s").get<double>();
      r.p95_s = o.at("p95_s").get<double>();
      r.cv = o.at("cv").get<double>();
      r.ram_mb = o.at("ram_mb").get<double>();
      r.accuracy = o.at("accuracy").get<double>();
      const auto& env = o.at("env");
      r.env = {env.at("host").get<std::string>(), env.at("cores").get<unsigned>(), env.at("threads").get<unsigned>()};
      r.status = o.value("status", std::string("ok"));
      r.error = o.value("error", std::string());
      r.activation_mb = o.value("activation_mb", 0.0);
      r.os_peak_rss_mb = o.value("os_peak_rss_mb", 0.0);
      rows.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::decode, std::string("bench report: ") + e.what());
  }
  return rows;
}

std::string report_to_table(const std::vector<BenchRow>& rows) {
  const std::vector<std::string> head = {"Model", "Size (MB)", "Time (s)", "p95 (s)", "RAM (MB)", "Accuracy"};
  std::vector<std::vector<std::string>> cells = {head};
  const auto fmt = [](double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    if (!r.ok()) {
      cells.push_back({r.model, "failed", "-", "-", "-", "-"});
      continue;
    }
    cells.push_back({r.model, fmt(r.size_mb, 2), fmt(r.mean_s, 4), fmt(r.p95_s, 4), fmt(r.ram_mb, 1),
                     fmt(r.accuracy * 100.0, 2) + "%"});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& s = cells[r][c];
      const std::string pad(width[c] - s.size(), ' ');
      out += c == 0 ? s + pad : "  " + pad + s;
    }
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
    }
  }
  for (const auto& r : rows) {
    if (!r.ok()) out += r.model + ": " + r.error + '\n';
  }
  return out;
}

}  // namespace edgelite
