#include <algorithm>
#include <chrono>
#include <cmath>

#include "fsle/activity.hpp"
#include "fsle/energy.hpp"

namespace fsle {

EnergyReport energy_report(const PowerTrace& load, const PowerTrace& idle, double latency_ms,
                           long inferences, std::optional<double> throughput_ips) {
  if (!(latency_ms > 0.0) || !std::isfinite(latency_ms)) {
    throw Error(ErrorKind::kInvalidArgument, "latency_ms must be positive and finite");
  }
  if (inferences < 0) throw Error(ErrorKind::kInvalidArgument, "inferences must be >= 0");
  if (throughput_ips && !(*throughput_ips > 0.0 && std::isfinite(*throughput_ips))) {
    throw Error(ErrorKind::kInvalidArgument, "throughput_ips must be positive and finite");
  }
  EnergyReport r;
  r.avg_power_w = average_power(load);
  r.idle_power_w = average_power(idle);
  r.dynamic_power_w = r.avg_power_w - r.idle_power_w;
  r.latency_ms = latency_ms;
  r.inferences = inferences;
  r.energy_formula_j = r.avg_power_w * latency_ms / 1000.0;
  if (inferences > 0) {
    r.energy_integrated_j =
        integrate_energy(load, load.start(), load.end()) / static_cast<double>(inferences);
  }
  if (throughput_ips) {
    r.throughput_ips = throughput_ips;
  } else if (inferences > 0) {
    r.throughput_ips = static_cast<double>(inferences) / (load.end() - load.start());
  }
  if (r.idle_power_w > r.avg_power_w) {
    r.warnings.push_back("idle power exceeds load power; possible measurement error");
  }
  return r;
}

double dynamic_power_reduction(const EnergyReport& baseline, const EnergyReport& candidate) {
  if (baseline.dynamic_power_w == 0.0) {
    throw Error(ErrorKind::kInvalidArgument, "baseline dynamic power is zero");
  }
  return 1.0 - candidate.dynamic_power_w / baseline.dynamic_power_w;
}

nlohmann::json to_json(const EnergyReport& r) {
  nlohmann::json j = {{"avg_power_w", r.avg_power_w},
                      {"idle_power_w", r.idle_power_w},
                      {"dynamic_power_w", r.dynamic_power_w},
                      {"latency_ms", r.latency_ms},
                      {"throughput_ips", nullptr},
                      {"energy_per_inference_j", r.energy_formula_j},
                      {"energy_formula_j", r.energy_formula_j},
                      {"energy_integrated_j", nullptr},
                      {"inferences", r.inferences},
                      {"warnings", r.warnings}};
  if (r.throughput_ips) j["throughput_ips"] = *r.throughput_ips;
  if (r.energy_integrated_j) j["energy_integrated_j"] = *r.energy_integrated_j;
  return j;
}

BenchResult bench_inference(const std::function<void(std::size_t)>& infer, int repetitions,
                            int warmup) {
  if (repetitions < 1) throw Error(ErrorKind::kInvalidArgument, "repetitions must be >= 1");
  if (warmup < 0) throw Error(ErrorKind::kInvalidArgument, "warmup must be >= 0");
  using Clock = std::chrono::steady_clock;
  BenchResult r;
  r.warmup = warmup;
  r.latencies_ms.reserve(static_cast<std::size_t>(repetitions));
  const int total = warmup + repetitions;
  for (int i = 0; i < total; ++i) {
    if (EngineActivity::active() > 0) r.contaminated = true;
    const auto t0 = Clock::now();
    infer(static_cast<std::size_t>(i));
    const auto t1 = Clock::now();
    if (EngineActivity::active() > 0) r.contaminated = true;
    if (i >= warmup) {
      r.latencies_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  double sum = 0.0;
  for (double l : r.latencies_ms) sum += l;
  const auto n = static_cast<double>(r.latencies_ms.size());
  r.mean_ms = sum / n;
  std::vector<double> sorted = r.latencies_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  r.median_ms = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(m)));
  r.p95_ms = sorted[std::max<std::size_t>(rank, 1) - 1];
  r.throughput_ips = n / (sum / 1000.0);
  return r;
}

BenchResult bench_model(const ModelGraph& model, std::span<const Tensor> images, int repetitions,
                        int warmup) {
  if (images.empty()) throw Error(ErrorKind::kInvalidArgument, "no benchmark images");
  return bench_inference(
      [&](std::size_t i) {
        const Tensor y = model.forward(images[i % images.size()]);
        if (y.empty()) throw Error(ErrorKind::kShapeMismatch, "empty embedding");
      },
      repetitions, warmup);
}

nlohmann::json to_json(const BenchResult& r) {
  return {{"warmup", r.warmup},
          {"repetitions", r.latencies_ms.size()},
          {"latency_ms", {{"mean", r.mean_ms}, {"median", r.median_ms}, {"p95", r.p95_ms}}},
          {"throughput_ips", r.throughput_ips},
          {"contaminated", r.contaminated},
          {"latencies_ms", r.latencies_ms}};
}

}  // namespace fsle
