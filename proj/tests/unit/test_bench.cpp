#include <cmath>
#include <numeric>

#include "json.hpp"

#include "doctest.h"
#include "edgelite/bench.hpp"
#include "edgelite/error.hpp"
#include "edgelite/trainer.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace edgelite;

namespace {

template <class Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an edgelite::Error");
  return ErrorKind::contract;
}

Model small_model(std::uint64_t seed) {
  Rng rng(seed);
  ModelConfig c = ModelConfig::scaled(HeadConfig{2}, 0.25);
  c.with_aux = false;
  return Model(c, rng);
}

Tensor random_batch(std::int64_t n, Rng& rng) {
  Tensor t({n, 3, 224, 224});
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

MemorySource test_split(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  MemorySource src;
  for (std::size_t i = 0; i < n; ++i) {
    const Label l = i % 2 == 0 ? Label::hazard : Label::clean;
    src.add(Split::test, procedural_sample(l, rng), static_cast<int>(l));
  }
  return src;
}

}  // namespace

TEST_CASE("injected clock gives exact latency stats") {
  FakeClock clock = FakeClock::from_durations({1.0, 2.0, 3.0});
  int calls = 0;
  const LatencyStats s = measure_latency([&] { ++calls; }, 1, 3, clock);
  CHECK(calls == 4);
  REQUIRE(s.samples.size() == 3);
  CHECK(s.samples == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(s.mean == 2.0);
  CHECK(s.p50 == 2.0);
  CHECK(s.p95 == doctest::Approx(2.9).epsilon(1e-15));
  CHECK(s.cv == doctest::Approx(std::sqrt(2.0 / 3.0) / 2.0).epsilon(1e-15));

  FakeClock raw({10.0, 10.5, 20.0, 21.0, 21.0, 21.25});
  const LatencyStats r = measure_latency([] {}, 2, 3, raw);
  CHECK(r.samples == std::vector<double>{0.5, 1.0, 0.25});
  CHECK(r.p50 == 0.5);
}

TEST_CASE("latency stats match a sort-based recomputation") {
  Rng rng(1);
  for (std::size_t n : {3u, 4u, 10u, 31u, 100u}) {
    std::vector<double> d(n);
    for (auto& v : d) v = rng.uniform(0.01, 2.0);
    FakeClock clock = FakeClock::from_durations(d);
    const LatencyStats s = measure_latency([] {}, 1, n, clock);
    for (std::size_t i = 0; i < n; ++i) CHECK(s.samples[i] == doctest::Approx(d[i]).epsilon(1e-12));
    const double mean = std::accumulate(s.samples.begin(), s.samples.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : s.samples) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    CHECK(s.mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(s.p50 == doctest::Approx(oracle::sorted_percentile(s.samples, 0.5)).epsilon(1e-14));
    CHECK(s.p95 == doctest::Approx(oracle::sorted_percentile(s.samples, 0.95)).epsilon(1e-14));
    CHECK(s.cv == doctest::Approx(std::sqrt(var) / mean).epsilon(1e-12));
    CHECK(s.p50 <= s.p95);
  }
  CHECK(percentile({5.0}, 0.95) == 5.0);
  CHECK(percentile({4.0, 1.0, 3.0, 2.0}, 0.5) == 2.5);
  CHECK(kind_of([] { (void)percentile({}, 0.5); }) == ErrorKind::measurement);
}

TEST_CASE("latency contract and clock errors") {
  FakeClock clock({0, 1, 2, 3, 4, 5});
  CHECK(kind_of([&] { (void)measure_latency([] {}, 1, 2, clock); }) == ErrorKind::contract);
  CHECK(kind_of([&] { (void)measure_latency([] {}, 0, 3, clock); }) == ErrorKind::contract);
  FakeClock backwards({0.0, 1.0, 5.0, 4.0, 6.0, 7.0});
  CHECK(kind_of([&] { (void)measure_latency([] {}, 1, 3, backwards); }) == ErrorKind::measurement);
  FakeClock short_clock({0.0, 1.0});
  CHECK(kind_of([&] { (void)measure_latency([] {}, 1, 3, short_clock); }) == ErrorKind::measurement);
  SteadyClock steady;
  const double a = steady.now();
  CHECK(steady.now() >= a);
}

TEST_CASE("memory accounting") {
  Rng rng(2);
  const AnyModel fmodel = small_model(3);
  const Tensor one = random_batch(1, rng);
  const Tensor two = random_batch(2, rng);

  const MemoryReport r1 = measure_memory(fmodel, one);
  CHECK(r1.conserved());
  CHECK(r1.allocated_bytes - r1.freed_bytes == 0);
  CHECK(r1.allocated_bytes > 0);
  const auto& cfg = std::get<Model>(fmodel).config();
  const std::uint64_t largest = static_cast<std::uint64_t>(cfg.stem[0]) * 112 * 112 * sizeof(float);
  CHECK(r1.activation_peak_bytes >= largest);
  CHECK(r1.weight_bytes == static_cast<std::uint64_t>(std::get<Model>(fmodel).param_count()) * sizeof(float));
  CHECK(r1.total_peak_bytes() == r1.activation_peak_bytes + r1.weight_bytes);

  const MemoryReport again = measure_memory(fmodel, one);
  CHECK(again.activation_peak_bytes == r1.activation_peak_bytes);
  CHECK(again.allocated_bytes == r1.allocated_bytes);

  const MemoryReport r2 = measure_memory(fmodel, two);
  CHECK(r2.conserved());
  CHECK(r2.activation_peak_bytes >= r1.activation_peak_bytes);

  const std::vector<Tensor> calib = {random_batch(1, rng)};
  const AnyModel qmodel = quantize_model(std::get<Model>(fmodel), calibrate(std::get<Model>(fmodel), calib));
  const MemoryReport q1 = measure_memory(qmodel, one);
  CHECK(q1.conserved());
  CHECK(q1.activation_peak_bytes <= r1.activation_peak_bytes);
  CHECK(q1.weight_bytes < r1.weight_bytes);

  auto& acct = MemoryAccounting::instance();
  acct.set_enabled(false);
  CHECK(kind_of([&] { (void)measure_memory(fmodel, one); }) == ErrorKind::capability);
  acct.set_enabled(true);
}

TEST_CASE("report json round trip") {
  BenchRow a;
  a.model = "edgelite";
  a.size_mb = 1.2345678901234;
  a.mean_s = 0.1;
  a.p50_s = 0.099;
  a.p95_s = 0.13;
  a.cv = 0.07;
  a.ram_mb = 3.3;
  a.activation_mb = 2.2;
  a.os_peak_rss_mb = 80.5;
  a.accuracy = 0.94;
  a.env = BenchEnv{"host-1", 8, 1};
  BenchRow b;
  b.model = "broken \"one\"";
  b.status = "failed";
  b.error = "io: cannot open";
  b.env = a.env;
  const std::vector<BenchRow> rows = {a, b};
  const std::string text = report_to_json(rows);
  CHECK(report_to_json(report_from_json(text)) == text);

  const auto j = nlohmann::ordered_json::parse(text);
  REQUIRE(j.is_array());
  REQUIRE(j.size() == 2);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j[0].items()) keys.push_back(k);
  const std::vector<std::string> leading = {"model", "size_mb", "mean_s", "p50_s", "p95_s",
                                            "cv",    "ram_mb",  "accuracy", "env"};
  REQUIRE(keys.size() >= leading.size());
  CHECK(std::vector<std::string>(keys.begin(), keys.begin() + 9) == leading);
  CHECK(j[0]["env"]["cores"] == 8);
  CHECK(kind_of([] { (void)report_from_json("{}"); }) == ErrorKind::decode);
  CHECK(kind_of([] { (void)report_from_json("[{"); }) == ErrorKind::decode);

  const std::string table = report_to_table(rows);
  CHECK(table.find("edgelite") != std::string::npos);
  CHECK(table.find("failed") != std::string::npos);
}

TEST_CASE("run benchmark") {
  testing::TempDir dir;
  const Model fmodel = small_model(4);
  save_model(fmodel, dir / "edgelite.edgl");
  Rng rng(5);
  const std::vector<Tensor> calib = {random_batch(1, rng)};
  const QuantizedModel qmodel = quantize_model(fmodel, calibrate(fmodel, calib));
  save_model(qmodel, dir / "edgelite.int8.edgl");
  const MemorySource data = test_split(6, 6);

  BenchConfig cfg;
  cfg.warmup = 1;
  cfg.iters = 3;
  const std::vector<std::filesystem::path> files = {dir / "edgelite.edgl", dir / "edgelite.int8.edgl",
                                                    dir / "missing.edgl"};
  const auto rows = run_benchmark(files, data, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].ok());
  CHECK(rows[1].ok());
  CHECK_FALSE(rows[2].ok());
  CHECK(rows[2].model == "missing");
  CHECK_FALSE(rows[2].error.empty());
  CHECK(rows[1].size_mb <= 0.35 * rows[0].size_mb);
  CHECK(rows[0].size_mb == doctest::Approx(static_cast<double>(serialized_size(fmodel)) / 1e6));
  CHECK(std::abs(rows[0].accuracy - evaluate(fmodel, data, Split::test)) <= 1e-9);
  CHECK(std::abs(rows[1].accuracy - evaluate(qmodel, data, Split::test)) <= 1e-9);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rows[i].mean_s > 0.0);
    CHECK(rows[i].p50_s <= rows[i].p95_s);
    CHECK(rows[i].ram_mb > rows[i].activation_mb);
    CHECK(rows[i].env.cores >= 1);
    CHECK(rows[i].env.threads >= 1);
  }
  CHECK(report_to_json(report_from_json(report_to_json(rows))) == report_to_json(rows));

  FakeClock fake = FakeClock::from_durations(std::vector<double>(3, 0.25));
  cfg.clock = &fake;
  const auto timed = run_benchmark({dir / "edgelite.edgl"}, data, cfg);
  CHECK(timed[0].mean_s == 0.25);
  CHECK(timed[0].cv == 0.0);

  const MemorySource empty;
  CHECK(kind_of([&] { (void)run_benchmark(files, empty, cfg); }) == ErrorKind::data);
}

TEST_CASE("latency repeatability on this machine") {
  const AnyModel model = small_model(7);
  Rng rng(8);
  const Tensor x = random_batch(1, rng);
  SteadyClock clock;
  const LatencyStats a = measure_latency(model, x, 2, 10, clock);
  const LatencyStats b = measure_latency(model, x, 2, 10, clock);
  const double m = (a.mean + b.mean) / 2.0;
  const double sd = std::abs(a.mean - b.mean) / 2.0;
  CHECK(sd / m < 0.25);
}
