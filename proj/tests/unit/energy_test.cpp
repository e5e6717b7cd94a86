#include <chrono>
#include <cmath>
#include <thread>
#include <atomic>
#include <algorithm>

#include <gtest/gtest.h>

#include "fsle/activity.hpp"
#include "fsle/energy.hpp"
#include "fsle/rng.hpp"

namespace fsle {
namespace {

PowerTrace constant(double watts, double duration = 0.1, double start = 0.0) {
  SyntheticTraceConfig c;
  c.power_w = watts;
  c.duration_s = duration;
  c.start_s = start;
  return make_synthetic_trace(c);
}

// Random piecewise-linear trace with irregular sample spacing.
PowerTrace random_trace(Rng& rng, std::size_t n) {
  PowerTrace t;
  double ts = rng.uniform(-5.0, 5.0);
  for (std::size_t i = 0; i < n; ++i) {
    t.push_power(ts, rng.uniform(0.0, 30.0));
    ts += rng.uniform(1e-5, 1e-3);
  }
  return t;
}

// Independent oracle: value of the linear interpolant by binary search, then a
// dense trapezoid rule over a grid that includes every breakpoint, so the
// interpolant is linear on each sub-interval.
double oracle_average(const PowerTrace& tr, double t0, double t1, int dense) {
  auto value = [&](double at) {
    const auto& t = tr.timestamp_s;
    std::size_t lo = 0, hi = t.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      (t[mid] <= at ? lo : hi) = mid;
    }
    const double w = (at - t[lo]) / (t[hi] - t[lo]);
    return (1.0 - w) * tr.power_w[lo] + w * tr.power_w[hi];
  };
  std::vector<double> grid;
  for (int i = 0; i <= dense; ++i) grid.push_back(t0 + (t1 - t0) * i / dense);
  for (double t : tr.timestamp_s) {
    if (t > t0 && t < t1) grid.push_back(t);
  }
  std::sort(grid.begin(), grid.end());
  long double area = 0.0L;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    area += 0.5L * (value(grid[i]) + value(grid[i + 1])) * (grid[i + 1] - grid[i]);
  }
  return static_cast<double>(area / (t1 - t0));
}

template <typename F>
TraceError trace_error(F&& f) {
  try {
    f();
  } catch (const TraceError& e) {
    return e;
  }
  ADD_FAILURE() << "no TraceError";
  return TraceError(TraceErrorKind::kMalformedRow, 0, "none");
}

TEST(TraceParse, ElectricalRowsGivePowerFromVoltageTimesCurrent) {
  const auto t = parse_trace("timestamp_s,voltage_v,current_a\n0.0,5.0,0.8\n0.0002,5.0,0.8\n");
  EXPECT_EQ(t.columns, TraceColumns::kElectrical);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_DOUBLE_EQ(t.power_w[0], 4.0);
  EXPECT_DOUBLE_EQ(t.power_w[1], 4.0);
  EXPECT_DOUBLE_EQ(t.timestamp_s[1], 0.0002);
}

TEST(TraceParse, PowerColumnAndCrlf) {
  const auto t = parse_trace("timestamp_s,power_w\r\n1,2.5\r\n2,3.5");
  EXPECT_EQ(t.columns, TraceColumns::kPower);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.power_w[1], 3.5);
}

TEST(TraceParse, HeaderIsExact) {
  for (const char* bad : {"timestamp,power_w\n", "timestamp_s, power_w\n", "power_w,timestamp_s\n",
                          "TIMESTAMP_S,POWER_W\n", "timestamp_s,power_w,extra\n", ""}) {
    const auto e = trace_error([&] { parse_trace(bad); });
    EXPECT_EQ(e.trace_kind(), TraceErrorKind::kUnknownHeader) << bad;
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(TraceParse, NonMonotoneTimestampReportsLine) {
  const auto e = trace_error([] { parse_trace("timestamp_s,power_w\n0,1\n1,1\n1,2\n"); });
  EXPECT_EQ(e.trace_kind(), TraceErrorKind::kNonMonotoneTimestamp);
  EXPECT_EQ(e.line(), 4u);
  const auto back = trace_error([] { parse_trace("timestamp_s,power_w\n0,1\n-1,1\n"); });
  EXPECT_EQ(back.line(), 3u);
}

TEST(TraceParse, MalformedRows) {
  struct Case {
    const char* text;
    std::size_t line;
  };
  for (const auto& c : {Case{"timestamp_s,power_w\n0,1,2\n", 2},
                        Case{"timestamp_s,power_w\n0\n", 2},
                        Case{"timestamp_s,power_w\n0,abc\n", 2},
                        Case{"timestamp_s,power_w\n0,1\n1,\n", 3},
                        Case{"timestamp_s,power_w\n0,1\n1, 2\n", 3},
                        Case{"timestamp_s,power_w\n0,nan\n", 2},
                        Case{"timestamp_s,power_w\n0,inf\n", 2},
                        Case{"timestamp_s,voltage_v,current_a\n0,5\n", 2},
                        Case{"timestamp_s,power_w\n0,1\n\n1,2\n", 3}}) {
    const auto e = trace_error([&] { parse_trace(c.text); });
    EXPECT_EQ(e.trace_kind(), TraceErrorKind::kMalformedRow) << c.text;
    EXPECT_EQ(e.line(), c.line) << c.text;
    EXPECT_EQ(e.kind(), ErrorKind::kTrace);
  }
}

TEST(TraceParse, RoundTripFuzzPreservesEveryValue) {
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    PowerTrace t;
    t.columns = rng.uniform01() < 0.5 ? TraceColumns::kPower : TraceColumns::kElectrical;
    const std::size_t n = rng.uniform_index(40);
    double ts = rng.uniform(-1e3, 1e3);
    for (std::size_t i = 0; i < n; ++i) {
      ts = std::nextafter(ts, INFINITY) + rng.uniform(0.0, 1e-2) * (trial % 3);
      // Magnitudes spanning the double range exercise long mantissas.
      const double v = rng.normal() * std::pow(10.0, rng.uniform(-300.0, 300.0));
      if (t.columns == TraceColumns::kPower) {
        t.push_power(ts, v);
      } else {
        t.push_electrical(ts, rng.uniform(-20.0, 20.0), v);
      }
    }
    const auto back = parse_trace(serialize_trace(t));
    ASSERT_EQ(back.columns, t.columns);
    ASSERT_EQ(back.timestamp_s, t.timestamp_s);
    ASSERT_EQ(back.power_w, t.power_w);
    ASSERT_EQ(back.voltage_v, t.voltage_v);
    ASSERT_EQ(back.current_a, t.current_a);
  }
}

TEST(AveragePower, ConstantTrace) { EXPECT_DOUBLE_EQ(average_power(constant(4.0)), 4.0); }

TEST(AveragePower, RampAveragesToMidpoint) {
  PowerTrace t;
  t.push_power(0.0, 0.0);
  t.push_power(1.0, 10.0);
  EXPECT_DOUBLE_EQ(average_power(t), 5.0);
  EXPECT_DOUBLE_EQ(average_power(t, 0.25, 0.75), 5.0);
  EXPECT_DOUBLE_EQ(average_power(t, 0.0, 0.5), 2.5);
}

TEST(AveragePower, TrapezoidNotSampleMean) {
  // Uneven spacing: sample mean is 4, time-weighted mean is not.
  PowerTrace t;
  t.push_power(0.0, 2.0);
  t.push_power(0.1, 2.0);
  t.push_power(1.0, 8.0);
  EXPECT_NEAR(average_power(t), (0.1 * 2.0 + 0.9 * 5.0) / 1.0, 1e-15);
}

TEST(AveragePower, WindowErrors) {
  const auto t = constant(4.0, 0.1, 1.0);
  for (auto [a, b] : {std::pair{1.05, 1.05}, std::pair{1.06, 1.05}, std::pair{0.9, 1.05},
                      std::pair{1.0, 1.2}}) {
    try {
      average_power(t, a, b);
      ADD_FAILURE() << a << " " << b;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kEmptyWindow);
    }
  }
  PowerTrace single;
  single.push_power(0.0, 1.0);
  EXPECT_THROW(average_power(single), Error);
}

TEST(AveragePower, MatchesDenseResamplingOracle) {
  Rng rng(43);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = random_trace(rng, 2 + rng.uniform_index(60));
    const double span = t.end() - t.start();
    double a = t.start() + rng.uniform(0.0, 0.5) * span;
    double b = t.end() - rng.uniform(0.0, 0.5) * span;
    if (trial % 4 == 0) {
      a = t.start();
      b = t.end();
    }
    const double got = average_power(t, a, b);
    const double want = oracle_average(t, a, b, 997);
    EXPECT_NEAR(got, want, 1e-9 * std::abs(want)) << trial;
  }
}

TEST(AveragePower, TranslationInvariant) {
  Rng rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = random_trace(rng, 50);
    PowerTrace moved = t;
    const double shift = rng.uniform(-100.0, 100.0);
    for (double& ts : moved.timestamp_s) ts += shift;
    const double a = average_power(t);
    EXPECT_NEAR(average_power(moved), a, 1e-9 * a);
  }
}

TEST(AveragePower, RefinementInvariant) {
  // Inserting samples on the interpolant leaves the signal, and the mean, unchanged.
  Rng rng(45);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = random_trace(rng, 30);
    PowerTrace fine;
    const int factor = 1 + static_cast<int>(rng.uniform_index(8));
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
      for (int s = 0; s < factor; ++s) {
        const double w = static_cast<double>(s) / factor;
        fine.push_power(t.timestamp_s[k] + w * (t.timestamp_s[k + 1] - t.timestamp_s[k]),
                        t.power_w[k] + w * (t.power_w[k + 1] - t.power_w[k]));
      }
    }
    fine.push_power(t.end(), t.power_w.back());
    const double a = average_power(t);
    EXPECT_NEAR(average_power(fine), a, 1e-9 * a);
  }
}

TEST(SyntheticTrace, WholeRipplePeriodsAverageToMean) {
  SyntheticTraceConfig c;
  c.power_w = 19.9;
  c.ripple_w = 0.5;
  c.ripple_hz = 50.0;
  c.duration_s = 0.2;
  const auto t = make_synthetic_trace(c);
  EXPECT_EQ(t.size(), 1001u);
  EXPECT_NEAR(average_power(t), 19.9, 1e-12);
  c.columns = TraceColumns::kElectrical;
  c.power_w = 4.0;
  c.voltage_v = 5.0;
  c.ripple_w = 0.0;
  const auto e = make_synthetic_trace(c);
  EXPECT_DOUBLE_EQ(e.current_a[0], 0.8);
  EXPECT_DOUBLE_EQ(average_power(e), 4.0);
}

TEST(EnergyReport, TableRowsFromFormula) {
  const auto idle = constant(4.0);
  const auto resnet = energy_report(constant(19.9), idle, 3.6);
  const auto mobilevit = energy_report(constant(14.0), idle, 2.6);
  EXPECT_NEAR(resnet.energy_formula_j, 0.07164, 1e-12);
  EXPECT_NEAR(mobilevit.energy_formula_j, 0.0364, 1e-12);
  EXPECT_NEAR(resnet.energy_formula_j, 0.072, 0.0005);
  EXPECT_NEAR(mobilevit.energy_formula_j, 0.036, 0.0005);
  EXPECT_NEAR(resnet.dynamic_power_w, 15.9, 1e-12);
  EXPECT_NEAR(mobilevit.dynamic_power_w, 10.0, 1e-12);
  const double reduction = dynamic_power_reduction(resnet, mobilevit);
  EXPECT_NEAR(reduction, 1.0 - 10.0 / 15.9, 1e-12);
  EXPECT_NEAR(reduction, 0.371, 0.0005);
  EXPECT_NEAR(reduction, 0.37, 0.005);
}

TEST(EnergyReport, InvariantsHoldExactly) {
  Rng rng(46);
  for (int trial = 0; trial < 200; ++trial) {
    const auto load = random_trace(rng, 20);
    const auto idle = random_trace(rng, 20);
    const double latency = rng.uniform(0.1, 50.0);
    const auto r = energy_report(load, idle, latency);
    EXPECT_EQ(r.energy_formula_j, r.avg_power_w * latency / 1000.0);
    EXPECT_EQ(r.dynamic_power_w, r.avg_power_w - r.idle_power_w);
    EXPECT_EQ(r.warnings.empty(), r.idle_power_w <= r.avg_power_w);
  }
}

TEST(EnergyReport, IdleEqualToLoadGivesZeroDynamic) {
  const auto r = energy_report(constant(4.0), constant(4.0), 1.0);
  EXPECT_EQ(r.dynamic_power_w, 0.0);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(EnergyReport, IdleAboveLoadIsFlaggedNotFatal) {
  const auto r = energy_report(constant(3.0), constant(4.0), 1.0);
  EXPECT_NEAR(r.dynamic_power_w, -1.0, 1e-12);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("measurement error"), std::string::npos);
}

TEST(EnergyReport, IntegratedEnergyAndThroughputFromCountedRun) {
  // 0.1 s at 19.9 W covering 28 inferences.
  const auto r = energy_report(constant(19.9), constant(4.0), 3.6, 28);
  ASSERT_TRUE(r.energy_integrated_j.has_value());
  EXPECT_NEAR(*r.energy_integrated_j, 19.9 * 0.1 / 28, 1e-12);
  ASSERT_TRUE(r.throughput_ips.has_value());
  EXPECT_NEAR(*r.throughput_ips, 280.0, 1e-9);
  const auto j = to_json(r);
  EXPECT_EQ(j["energy_per_inference_j"], j["energy_formula_j"]);
  EXPECT_EQ(j["inferences"], 28);

  const auto bare = energy_report(constant(19.9), constant(4.0), 3.6);
  EXPECT_FALSE(bare.energy_integrated_j.has_value());
  EXPECT_FALSE(bare.throughput_ips.has_value());
  EXPECT_TRUE(to_json(bare)["throughput_ips"].is_null());
  // Explicit throughput wins and is kept independent of latency.
  const auto given = energy_report(constant(19.9), constant(4.0), 3.6, 0, 280.0);
  EXPECT_EQ(*given.throughput_ips, 280.0);
}

TEST(EnergyReport, RejectsBadArguments) {
  EXPECT_THROW(energy_report(constant(1.0), constant(1.0), 0.0), Error);
  EXPECT_THROW(energy_report(constant(1.0), constant(1.0), -1.0), Error);
  EXPECT_THROW(energy_report(constant(1.0), constant(1.0), NAN), Error);
  EXPECT_THROW(energy_report(constant(1.0), constant(1.0), 1.0, -1), Error);
  EXPECT_THROW(energy_report(constant(1.0), constant(1.0), 1.0, 0, 0.0), Error);
}

TEST(TableConsistency, ThroughputAgainstLatency) {
  // Reported throughput and latency were measured independently; the
  // MobileViT row is only consistent to 3%.
  const double resnet_implied = 1000.0 / 3.6;
  const double mobilevit_implied = 1000.0 / 2.6;
  EXPECT_LT(std::abs(280.0 - resnet_implied) / resnet_implied, 0.02);
  EXPECT_LT(std::abs(392.0 - mobilevit_implied) / mobilevit_implied, 0.03);
  EXPECT_GT(std::abs(392.0 - mobilevit_implied) / mobilevit_implied, 0.015);
}

TEST(Bench, SingleRunThroughputIsInverseLatency) {
  const auto r = bench_inference([](std::size_t) {}, 1, 0);
  ASSERT_EQ(r.latencies_ms.size(), 1u);
  EXPECT_DOUBLE_EQ(r.throughput_ips, 1000.0 / r.latencies_ms[0]);
  EXPECT_EQ(r.mean_ms, r.median_ms);
  EXPECT_EQ(r.mean_ms, r.p95_ms);
}

TEST(Bench, WarmupIsDiscardedAndIndicesAdvance) {
  std::vector<std::size_t> seen;
  const auto r = bench_inference([&](std::size_t i) { seen.push_back(i); }, 5, 3);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(r.latencies_ms.size(), 5u);
  EXPECT_EQ(r.warmup, 3);
}

TEST(Bench, ControlledDelayWithinTwentyPercent) {
  const auto r = bench_inference(
      [](std::size_t) { std::this_thread::sleep_for(std::chrono::milliseconds(10)); }, 10, 1);
  EXPECT_NEAR(r.mean_ms, 10.0, 2.0);
  EXPECT_NEAR(r.median_ms, 10.0, 2.0);
  EXPECT_NEAR(r.throughput_ips, 100.0, 20.0);
  EXPECT_GE(r.p95_ms, r.median_ms);
  EXPECT_FALSE(r.contaminated);
}

TEST(Bench, StatisticsFromKnownLatencies) {
  // Delay grows with the index; statistics are checked against the sorted samples
  // so scheduler overshoot under load cannot reorder the expectation.
  const auto r = bench_inference(
      [](std::size_t i) { std::this_thread::sleep_for(std::chrono::milliseconds(10 * (i + 1))); },
      4, 0);
  ASSERT_EQ(r.latencies_ms.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_GE(r.latencies_ms[i], 10.0 * static_cast<double>(i + 1));
  std::vector<double> sorted = r.latencies_ms;
  std::ranges::sort(sorted);
  EXPECT_DOUBLE_EQ(r.median_ms, 0.5 * (sorted[1] + sorted[2]));
  EXPECT_DOUBLE_EQ(r.p95_ms, sorted[3]);
}

TEST(Bench, ConcurrentEngineWorkIsFlagged) {
  EXPECT_FALSE(bench_inference([](std::size_t) {}, 3, 0).contaminated);
  std::atomic<bool> started = false;
  std::atomic<bool> stop = false;
  std::jthread worker([&] {
    const EngineActivity::Scope busy;
    started = true;
    while (!stop) std::this_thread::yield();
  });
  while (!started) std::this_thread::yield();
  EXPECT_TRUE(bench_inference([](std::size_t) {}, 2, 0).contaminated);
  stop = true;
}

TEST(Bench, RejectsBadArguments) {
  EXPECT_THROW(bench_inference([](std::size_t) {}, 0, 0), Error);
  EXPECT_THROW(bench_inference([](std::size_t) {}, 1, -1), Error);
}

}  // namespace
}  // namespace fsle
