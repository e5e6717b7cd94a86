#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsle/model_graph.hpp"

namespace fsle {

enum class TraceColumns { kElectrical, kPower };

inline constexpr std::string_view kElectricalHeader = "timestamp_s,voltage_v,current_a";
inline constexpr std::string_view kPowerHeader = "timestamp_s,power_w";

// Timestamped power samples. Electrical traces keep voltage and current and
// derive power = voltage * current.
struct PowerTrace {
  TraceColumns columns = TraceColumns::kPower;
  double nominal_rate_hz = 5000.0;
  std::vector<double> timestamp_s;
  std::vector<double> voltage_v;  // electrical traces only
  std::vector<double> current_a;  // electrical traces only
  std::vector<double> power_w;

  std::size_t size() const noexcept { return timestamp_s.size(); }
  double start() const;
  double end() const;

  void push_power(double t, double p);
  void push_electrical(double t, double v, double i);
};

// Header must be exactly one of the two accepted forms; LF or CRLF line
// endings. Throws TraceError carrying the 1-based line number.
PowerTrace parse_trace(std::string_view csv);
// Shortest round-trip decimal representation for every value.
std::string serialize_trace(const PowerTrace& trace);
PowerTrace load_trace(const std::filesystem::path& path);

// Integral of the piecewise-linear power signal over [t0, t1], in joules.
double integrate_energy(const PowerTrace& trace, double t0, double t1);
// Time-weighted (trapezoidal) mean power over [t0, t1]; the window must lie
// inside the trace span and have positive length, otherwise kEmptyWindow.
double average_power(const PowerTrace& trace, double t0, double t1);
double average_power(const PowerTrace& trace);

// Sinusoidal ripple around a mean power, sampled uniformly. With an integer
// number of ripple periods over the duration the trapezoidal mean equals
// `power_w` up to rounding. Electrical traces hold `voltage_v` fixed.
struct SyntheticTraceConfig {
  TraceColumns columns = TraceColumns::kPower;
  double power_w = 4.0;
  double voltage_v = 5.0;
  double ripple_w = 0.0;
  double ripple_hz = 50.0;
  double duration_s = 0.2;
  double rate_hz = 5000.0;
  double start_s = 0.0;
};

PowerTrace make_synthetic_trace(const SyntheticTraceConfig& config);

struct EnergyReport {
  double avg_power_w = 0.0;
  double idle_power_w = 0.0;
  double dynamic_power_w = 0.0;  // avg - idle
  double latency_ms = 0.0;
  std::optional<double> throughput_ips;
  double energy_formula_j = 0.0;  // avg_power_w * latency_ms / 1000
  std::optional<double> energy_integrated_j;  // load-trace integral / inferences
  long inferences = 0;
  std::vector<std::string> warnings;
};

// Throughput is taken from `throughput_ips` when given, otherwise derived as
// inferences / load-trace span when the trace covers a counted run; it is
// never derived from the latency. Idle power above load power is kept and
// flagged in `warnings`.
EnergyReport energy_report(const PowerTrace& load, const PowerTrace& idle, double latency_ms,
                           long inferences = 0, std::optional<double> throughput_ips = {});

// 1 - candidate.dynamic / baseline.dynamic.
double dynamic_power_reduction(const EnergyReport& baseline, const EnergyReport& candidate);

nlohmann::json to_json(const EnergyReport& report);

struct BenchResult {
  int warmup = 0;
  std::vector<double> latencies_ms;  // measured runs only, in order
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;  // nearest rank
  double throughput_ips = 0.0;  // measured runs / summed measured time
  bool contaminated = false;  // other engine work was in flight
};

// Times `infer(i)` for i = 0 .. warmup + repetitions - 1, discarding the
// first `warmup` timings. Only the call itself is inside the timed region.
BenchResult bench_inference(const std::function<void(std::size_t)>& infer, int repetitions,
                            int warmup);

// Cycles through `images` in order.
BenchResult bench_model(const ModelGraph& model, std::span<const Tensor> images, int repetitions,
                        int warmup);

nlohmann::json to_json(const BenchResult& result);

}  // namespace fsle
