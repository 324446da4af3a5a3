#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canet/graph.hpp"
#include "canet/profiler.hpp"

namespace canet {

// Monotonic time source in milliseconds. Injected so the statistics pipeline
// is testable with scripted clocks; real runs use steady_clock_ms.
using Clock = std::function<double()>;

inline double steady_clock_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Nearest-rank percentile on a sorted sample: the ceil(p/100 * n)-th value.
inline double nearest_rank_percentile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty sample");
  const double rank = std::ceil(p / 100.0 * static_cast<double>(sorted.size()));
  const auto idx = static_cast<std::size_t>(std::max(1.0, rank)) - 1;
  return sorted[std::min(idx, sorted.size() - 1)];
}

struct LatencyStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, hence the iters >= 2 gate
  double min = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
};

inline LatencyStats latency_stats(std::vector<double> samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("latency statistics need at least 2 timed iterations");
  }
  LatencyStats s;
  double sum = 0.0;
  for (double v : samples) sum += v;
  s.mean = sum / static_cast<double>(samples.size());
  double sq = 0.0;
  for (double v : samples) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(samples.size() - 1));
  std::sort(samples.begin(), samples.end());
  s.min = samples.front();
  s.p50 = nearest_rank_percentile(samples, 50.0);
  s.p95 = nearest_rank_percentile(samples, 95.0);
  return s;
}

struct BenchReport {
  std::string arch;
  std::string attention;
  std::size_t batch_size = 1;
  std::size_t warmup_iters = 10;
  std::size_t timed_iters = 100;
  LatencyStats latency_ms;
  double throughput_ips = 0.0;
  std::string environment;
  double blinding_checksum = 0.0;  // consumed output reduction; forbids elision
};

// Protocol core: `work` runs warmup times untimed (the clock is not consulted
// at all), then exactly `iters` timed executions with one clock read on each
// side of the call.
template <typename Workload>
std::vector<double> collect_latency_samples(Workload&& work, std::size_t warmup,
                                            std::size_t iters, const Clock& clock) {
  if (iters < 2) {
    throw std::invalid_argument("measure_latency: need at least 2 timed iterations, got " +
                                std::to_string(iters));
  }
  for (std::size_t i = 0; i < warmup; ++i) work();
  std::vector<double> samples;
  samples.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const double t0 = clock();
    work();
    const double t1 = clock();
    samples.push_back(t1 - t0);
  }
  return samples;
}

template <typename Workload>
BenchReport measure_latency_fn(Workload&& work, std::size_t batch_size, std::size_t warmup,
                               std::size_t iters, const Clock& clock,
                               const std::string& environment = "") {
  BenchReport report;
  report.batch_size = batch_size;
  report.warmup_iters = warmup;
  report.timed_iters = iters;
  report.environment = environment;
  report.latency_ms = latency_stats(collect_latency_samples(work, warmup, iters, clock));
  report.throughput_ips =
      static_cast<double>(batch_size) * 1000.0 / report.latency_ms.mean;
  return report;
}

// Times eval-mode forwards over one fixed random input created before the
// loop; host-side preprocessing is deliberately outside the timed region.
template <typename T>
BenchReport measure_latency(ModelGraph<T>& g, std::size_t batch_size, std::size_t warmup,
                            std::size_t iters, const Clock& clock = steady_clock_ms,
                            const std::string& environment = "") {
  if (batch_size < 1) throw std::invalid_argument("measure_latency: batch_size must be >= 1");
  Tensor<T> input({batch_size, 3, 32, 32});
  std::mt19937 rng(1234567);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    input.data()[i] = static_cast<T>(dist(rng));
  }
  double blind = 0.0;
  auto work = [&] {
    auto out = forward(g, input, /*training=*/false);
    blind += static_cast<double>(out.data()[0]) +
             static_cast<double>(out.data()[out.size() - 1]);
  };
  auto report = measure_latency_fn(work, batch_size, warmup, iters, clock, environment);
  report.arch = g.arch;
  report.attention = to_string(g.attention.kind);
  report.blinding_checksum = blind;
  return report;
}

struct ThroughputResult {
  std::size_t batches = 0;
  std::size_t images = 0;
  double elapsed_ms = 0.0;
  double ips = 0.0;
};

// Steady-state batches until the budget elapses; the clock is read once up
// front and once after every batch.
template <typename Workload>
ThroughputResult measure_throughput_fn(Workload&& work, std::size_t batch_size,
                                       double budget_ms, const Clock& clock) {
  if (batch_size < 1) {
    throw std::invalid_argument("measure_throughput: batch_size must be >= 1");
  }
  if (!(budget_ms > 0.0)) {
    throw std::invalid_argument("measure_throughput: budget must be positive");
  }
  const double start = clock();
  work();
  ThroughputResult r;
  r.batches = 1;
  double now = clock();
  if (now - start > budget_ms) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "measure_throughput: first batch took %.3f ms, over the %.3f ms budget",
                  now - start, budget_ms);
    throw std::runtime_error(msg);
  }
  while (now - start < budget_ms) {
    work();
    ++r.batches;
    now = clock();
  }
  r.images = r.batches * batch_size;
  r.elapsed_ms = now - start;
  r.ips = static_cast<double>(r.images) * 1000.0 / r.elapsed_ms;
  return r;
}

template <typename T>
ThroughputResult measure_throughput(ModelGraph<T>& g, std::size_t batch_size, double budget_ms,
                                    const Clock& clock = steady_clock_ms) {
  if (batch_size < 1) {
    throw std::invalid_argument("measure_throughput: batch_size must be >= 1");
  }
  Tensor<T> input({batch_size, 3, 32, 32});
  std::mt19937 rng(7654321);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    input.data()[i] = static_cast<T>(dist(rng));
  }
  double blind = 0.0;
  auto work = [&] {
    auto out = forward(g, input, /*training=*/false);
    blind += static_cast<double>(out.data()[0]);
  };
  auto r = measure_throughput_fn(work, batch_size, budget_ms, clock);
  if (!std::isfinite(blind)) throw std::runtime_error("measure_throughput: non-finite output");
  return r;
}

inline nlohmann::json bench_report_to_json(const BenchReport& r) {
  return nlohmann::json{{"config",
                         {{"arch", r.arch},
                          {"attention", r.attention},
                          {"batch_size", r.batch_size}}},
                        {"warmup_iters", r.warmup_iters},
                        {"timed_iters", r.timed_iters},
                        {"latency_ms",
                         {{"mean", r.latency_ms.mean},
                          {"std", r.latency_ms.std},
                          {"min", r.latency_ms.min},
                          {"p50", r.latency_ms.p50},
                          {"p95", r.latency_ms.p95}}},
                        {"throughput_ips", r.throughput_ips},
                        {"environment", r.environment},
                        {"blinding_checksum", r.blinding_checksum}};
}

inline BenchReport bench_report_from_json(const nlohmann::json& j) {
  BenchReport r;
  r.arch = j.at("config").at("arch").get<std::string>();
  r.attention = j.at("config").at("attention").get<std::string>();
  r.batch_size = j.at("config").at("batch_size").get<std::size_t>();
  r.warmup_iters = j.at("warmup_iters").get<std::size_t>();
  r.timed_iters = j.at("timed_iters").get<std::size_t>();
  const auto& lat = j.at("latency_ms");
  r.latency_ms.mean = lat.at("mean").get<double>();
  r.latency_ms.std = lat.at("std").get<double>();
  r.latency_ms.min = lat.at("min").get<double>();
  r.latency_ms.p50 = lat.at("p50").get<double>();
  r.latency_ms.p95 = lat.at("p95").get<double>();
  r.throughput_ips = j.at("throughput_ips").get<double>();
  r.environment = j.at("environment").get<std::string>();
  r.blinding_checksum = j.value("blinding_checksum", 0.0);
  return r;
}

struct ResultRow {
  std::string arch;
  std::string attention;
  std::optional<double> accuracy;
  std::optional<std::uint64_t> params;
  std::optional<std::uint64_t> flops;
  std::optional<double> latency_ms;
  std::optional<double> throughput_ips;
  std::map<std::string, std::string> sources;  // metric name -> provenance label
};

struct ResultsBundle {
  std::vector<ResultRow> rows;

  ResultRow& row(const std::string& arch, const std::string& attention) {
    for (auto& r : rows) {
      if (r.arch == arch && r.attention == attention) return r;
    }
    rows.push_back(ResultRow{arch, attention, {}, {}, {}, {}, {}, {}});
    return rows.back();
  }
};

namespace detail {

template <typename V>
void merge_metric(ResultRow& row, const std::string& metric, std::optional<V>& slot, V value,
                  const std::string& source) {
  if (slot.has_value() && *slot != value) {
    throw std::runtime_error("results merge: " + metric + " for " + row.arch + "/" +
                             row.attention + " from '" + source + "' conflicts with '" +
                             row.sources[metric] + "'");
  }
  slot = value;
  row.sources[metric] = source;
}

}  // namespace detail

inline void merge_profile(ResultsBundle& bundle, const ProfileReport& report,
                          const std::string& source) {
  auto& row = bundle.row(report.arch, report.attention);
  detail::merge_metric(row, "params", row.params,
                       static_cast<std::uint64_t>(report.total_params), source);
  detail::merge_metric(row, "flops", row.flops,
                       static_cast<std::uint64_t>(report.total_flops), source);
}

inline void merge_accuracy(ResultsBundle& bundle, const std::string& arch,
                           const std::string& attention, double accuracy,
                           const std::string& source) {
  auto& row = bundle.row(arch, attention);
  detail::merge_metric(row, "accuracy", row.accuracy, accuracy, source);
}

inline void merge_bench(ResultsBundle& bundle, const BenchReport& report,
                        const std::string& source) {
  auto& row = bundle.row(report.arch, report.attention);
  detail::merge_metric(row, "latency_ms", row.latency_ms, report.latency_ms.mean, source);
  detail::merge_metric(row, "throughput_ips", row.throughput_ips, report.throughput_ips,
                       source);
}

inline void validate_bundle(const ResultsBundle& bundle) {
  for (std::size_t i = 0; i < bundle.rows.size(); ++i) {
    const auto& r = bundle.rows[i];
    if (r.arch.empty() || r.attention.empty()) {
      throw std::runtime_error("results bundle: row " + std::to_string(i) +
                               " is missing its configuration");
    }
    for (std::size_t j = i + 1; j < bundle.rows.size(); ++j) {
      if (bundle.rows[j].arch == r.arch && bundle.rows[j].attention == r.attention) {
        throw std::runtime_error("results bundle: duplicate rows for " + r.arch + "/" +
                                 r.attention);
      }
    }
    if (r.accuracy && !(std::isfinite(*r.accuracy) && *r.accuracy >= 0.0 &&
                        *r.accuracy <= 1.0)) {
      throw std::runtime_error("results bundle: accuracy out of [0,1] for " + r.arch + "/" +
                               r.attention);
    }
    if (r.latency_ms && !(std::isfinite(*r.latency_ms) && *r.latency_ms > 0.0)) {
      throw std::runtime_error("results bundle: non-positive latency for " + r.arch + "/" +
                               r.attention);
    }
    if (r.throughput_ips && !(std::isfinite(*r.throughput_ips) && *r.throughput_ips > 0.0)) {
      throw std::runtime_error("results bundle: non-positive throughput for " + r.arch + "/" +
                               r.attention);
    }
  }
}

inline nlohmann::json results_bundle_to_json(const ResultsBundle& bundle) {
  nlohmann::json rows = nlohmann::json::array();
  auto opt = [](const auto& v) -> nlohmann::json {
    if (v.has_value()) return *v;
    return nullptr;
  };
  for (const auto& r : bundle.rows) {
    rows.push_back({{"arch", r.arch},
                    {"attention", r.attention},
                    {"accuracy", opt(r.accuracy)},
                    {"params", opt(r.params)},
                    {"flops", opt(r.flops)},
                    {"latency_ms", opt(r.latency_ms)},
                    {"throughput_ips", opt(r.throughput_ips)}});
  }
  return nlohmann::json{{"rows", rows}};
}

inline ResultsBundle results_bundle_from_json(const nlohmann::json& j) {
  ResultsBundle bundle;
  for (const auto& e : j.at("rows")) {
    ResultRow row;
    row.arch = e.at("arch").get<std::string>();
    row.attention = e.at("attention").get<std::string>();
    if (!e.at("accuracy").is_null()) row.accuracy = e.at("accuracy").get<double>();
    if (!e.at("params").is_null()) row.params = e.at("params").get<std::uint64_t>();
    if (!e.at("flops").is_null()) row.flops = e.at("flops").get<std::uint64_t>();
    if (!e.at("latency_ms").is_null()) row.latency_ms = e.at("latency_ms").get<double>();
    if (!e.at("throughput_ips").is_null()) {
      row.throughput_ips = e.at("throughput_ips").get<double>();
    }
    bundle.rows.push_back(std::move(row));
  }
  return bundle;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <typename V>
std::string csv_cell(const std::optional<V>& v) {
  if (!v.has_value()) return "";
  if constexpr (std::is_same_v<V, double>) {
    return format_double(*v);
  } else {
    return std::to_string(*v);
  }
}

inline void write_file_or_throw(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("emit_results: cannot open " + path);
  out << text;
  if (!out) throw std::runtime_error("emit_results: short write on " + path);
}

}  // namespace detail

inline std::string results_to_csv(const ResultsBundle& bundle) {
  std::string out = "arch,attention,accuracy,params,flops,latency_ms,throughput_ips\n";
  for (const auto& r : bundle.rows) {
    out += r.arch + "," + r.attention + "," + detail::csv_cell(r.accuracy) + "," +
           detail::csv_cell(r.params) + "," + detail::csv_cell(r.flops) + "," +
           detail::csv_cell(r.latency_ms) + "," + detail::csv_cell(r.throughput_ips) + "\n";
  }
  return out;
}

struct EmitOutputs {
  std::vector<std::string> files;
  std::vector<std::string> warnings;
};

// Writes the merged table (JSON + CSV) and one x/y series per figure. Points
// whose metrics are absent are omitted from the affected figure with a
// warning; the table keeps them as explicit nulls.
inline EmitOutputs emit_results(const ResultsBundle& bundle, const std::string& dir) {
  validate_bundle(bundle);
  EmitOutputs outputs;
  auto emit = [&](const std::string& name, const std::string& text) {
    const std::string path = dir + "/" + name;
    detail::write_file_or_throw(path, text);
    outputs.files.push_back(path);
  };

  emit("results.json", results_bundle_to_json(bundle).dump(2) + "\n");
  emit("results.csv", results_to_csv(bundle));

  struct FigureSpec {
    const char* file;
    const char* header;
    bool needs_accuracy;
  };
  const FigureSpec figures[] = {
      {"fig_latency.csv", "config,latency_ms", false},
      {"fig_acc_latency.csv", "latency_ms,accuracy,config", true},
      {"fig_acc_params.csv", "params,accuracy,config", true},
      {"fig_acc_flops.csv", "flops,accuracy,config", true},
      {"fig_acc_throughput.csv", "throughput_ips,accuracy,config", true},
  };
  for (const auto& fig : figures) {
    std::string text = std::string(fig.header) + "\n";
    for (const auto& r : bundle.rows) {
      const std::string config = r.arch + "/" + r.attention;
      std::optional<std::string> x;
      const std::string name = fig.file;
      if (name == "fig_latency.csv" || name == "fig_acc_latency.csv") {
        if (r.latency_ms) x = detail::format_double(*r.latency_ms);
      } else if (name == "fig_acc_params.csv") {
        if (r.params) x = std::to_string(*r.params);
      } else if (name == "fig_acc_flops.csv") {
        if (r.flops) x = std::to_string(*r.flops);
      } else {
        if (r.throughput_ips) x = detail::format_double(*r.throughput_ips);
      }
      if (!x.has_value()) {
        outputs.warnings.push_back("omitting " + config + " from " + name +
                                   ": metric not measured");
        continue;
      }
      if (fig.needs_accuracy) {
        if (!r.accuracy.has_value()) {
          outputs.warnings.push_back("omitting " + config + " from " + name +
                                     ": accuracy not measured");
          continue;
        }
        text += *x + "," + detail::format_double(*r.accuracy) + "," + config + "\n";
      } else {
        text += config + "," + *x + "\n";
      }
    }
    emit(fig.file, text);
  }
  return outputs;
}

}  // namespace canet
