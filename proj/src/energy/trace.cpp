#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fsle/energy.hpp"

namespace fsle {
namespace {

double parse_field(std::string_view text, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw TraceError(TraceErrorKind::kMalformedRow, line,
                     "invalid " + std::string(column) + " '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view row) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = row.find(',', start);
    out.push_back(row.substr(start, comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

void append(std::string& out, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace

double PowerTrace::start() const {
  if (timestamp_s.empty()) throw Error(ErrorKind::kEmptyWindow, "trace has no samples");
  return timestamp_s.front();
}

double PowerTrace::end() const {
  if (timestamp_s.empty()) throw Error(ErrorKind::kEmptyWindow, "trace has no samples");
  return timestamp_s.back();
}

void PowerTrace::push_power(double t, double p) {
  timestamp_s.push_back(t);
  power_w.push_back(p);
}

void PowerTrace::push_electrical(double t, double v, double i) {
  timestamp_s.push_back(t);
  voltage_v.push_back(v);
  current_a.push_back(i);
  power_w.push_back(v * i);
}

PowerTrace parse_trace(std::string_view csv) {
  PowerTrace trace;
  std::size_t line = 0;
  std::size_t pos = 0;
  bool saw_blank = false;
  while (pos < csv.size()) {
    std::size_t eol = csv.find('\n', pos);
    if (eol == std::string_view::npos) eol = csv.size();
    std::string_view row = csv.substr(pos, eol - pos);
    pos = eol + 1;
    ++line;
    if (!row.empty() && row.back() == '\r') row.remove_suffix(1);

    if (line == 1) {
      if (row == kElectricalHeader) {
        trace.columns = TraceColumns::kElectrical;
      } else if (row == kPowerHeader) {
        trace.columns = TraceColumns::kPower;
      } else {
        throw TraceError(TraceErrorKind::kUnknownHeader, 1,
                         "header must be '" + std::string(kElectricalHeader) + "' or '" +
                             std::string(kPowerHeader) + "'");
      }
      continue;
    }
    if (row.empty()) {
      saw_blank = true;
      continue;
    }
    if (saw_blank) {
      throw TraceError(TraceErrorKind::kMalformedRow, line - 1, "blank line inside trace");
    }
    const auto fields = split(row);
    const std::size_t want = trace.columns == TraceColumns::kElectrical ? 3 : 2;
    if (fields.size() != want) {
      throw TraceError(TraceErrorKind::kMalformedRow, line,
                       "expected " + std::to_string(want) + " fields, found " +
                           std::to_string(fields.size()));
    }
    const double t = parse_field(fields[0], line, "timestamp_s");
    if (!trace.timestamp_s.empty() && !(t > trace.timestamp_s.back())) {
      throw TraceError(TraceErrorKind::kNonMonotoneTimestamp, line,
                       "timestamp does not increase");
    }
    if (trace.columns == TraceColumns::kElectrical) {
      trace.push_electrical(t, parse_field(fields[1], line, "voltage_v"),
                            parse_field(fields[2], line, "current_a"));
    } else {
      trace.push_power(t, parse_field(fields[1], line, "power_w"));
    }
  }
  if (line == 0) throw TraceError(TraceErrorKind::kUnknownHeader, 1, "trace is empty");
  return trace;
}

std::string serialize_trace(const PowerTrace& trace) {
  const bool electrical = trace.columns == TraceColumns::kElectrical;
  std::string out(electrical ? kElectricalHeader : kPowerHeader);
  out += '\n';
  for (std::size_t i = 0; i < trace.size(); ++i) {
    append(out, trace.timestamp_s[i]);
    out += ',';
    if (electrical) {
      append(out, trace.voltage_v[i]);
      out += ',';
      append(out, trace.current_a[i]);
    } else {
      append(out, trace.power_w[i]);
    }
    out += '\n';
  }
  return out;
}

PowerTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_trace(text.str());
}

double integrate_energy(const PowerTrace& trace, double t0, double t1) {
  if (trace.size() < 2) {
    throw Error(ErrorKind::kEmptyWindow, "trace needs at least two samples to integrate");
  }
  if (!(t1 > t0)) throw Error(ErrorKind::kEmptyWindow, "window has no duration");
  if (t0 < trace.start() || t1 > trace.end()) {
    throw Error(ErrorKind::kEmptyWindow, "window lies outside the trace span");
  }
  const auto& t = trace.timestamp_s;
  const auto& p = trace.power_w;
  auto lerp = [&](std::size_t k, double at) {
    return p[k] + (p[k + 1] - p[k]) * ((at - t[k]) / (t[k + 1] - t[k]));
  };
  double energy = 0.0;
  for (std::size_t k = 0; k + 1 < trace.size(); ++k) {
    if (t[k + 1] <= t0) continue;
    if (t[k] >= t1) break;
    const double a = std::max(t[k], t0);
    const double b = std::min(t[k + 1], t1);
    const double pa = a == t[k] ? p[k] : lerp(k, a);
    const double pb = b == t[k + 1] ? p[k + 1] : lerp(k, b);
    energy += 0.5 * (pa + pb) * (b - a);
  }
  return energy;
}

double average_power(const PowerTrace& trace, double t0, double t1) {
  return integrate_energy(trace, t0, t1) / (t1 - t0);
}

double average_power(const PowerTrace& trace) {
  if (trace.size() < 2) {
    throw Error(ErrorKind::kEmptyWindow, "trace needs at least two samples to average");
  }
  return average_power(trace, trace.start(), trace.end());
}

PowerTrace make_synthetic_trace(const SyntheticTraceConfig& c) {
  if (!(c.rate_hz > 0.0) || !(c.duration_s > 0.0) || !std::isfinite(c.power_w) ||
      !std::isfinite(c.ripple_w) || !std::isfinite(c.start_s)) {
    throw Error(ErrorKind::kInvalidArgument, "invalid synthetic trace settings");
  }
  if (c.columns == TraceColumns::kElectrical && !(c.voltage_v > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "voltage_v must be positive");
  }
  PowerTrace trace;
  trace.columns = c.columns;
  trace.nominal_rate_hz = c.rate_hz;
  const auto samples = static_cast<std::size_t>(std::llround(c.duration_s * c.rate_hz)) + 1;
  for (std::size_t k = 0; k < samples; ++k) {
    const double dt = static_cast<double>(k) / c.rate_hz;
    const double p =
        c.power_w + c.ripple_w * std::sin(2.0 * std::numbers::pi * c.ripple_hz * dt);
    if (c.columns == TraceColumns::kElectrical) {
      trace.push_electrical(c.start_s + dt, c.voltage_v, p / c.voltage_v);
    } else {
      trace.push_power(c.start_s + dt, p);
    }
  }
  return trace;
}

}  // namespace fsle
