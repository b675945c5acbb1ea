#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include "fluxtalk/errors.hpp"

namespace fluxtalk {

enum class ScanKind { kSpectroscopy, kMzlc, kRamsey, kCzSwap };

inline const char* to_string(ScanKind k) {
  switch (k) {
    case ScanKind::kSpectroscopy: return "spectroscopy";
    case ScanKind::kMzlc: return "mzlc";
    case ScanKind::kRamsey: return "ramsey";
    case ScanKind::kCzSwap: return "cz_swap";
  }
  return "?";
}

inline ScanKind scan_kind_from_string(const std::string& s) {
  if (s == "spectroscopy") return ScanKind::kSpectroscopy;
  if (s == "mzlc") return ScanKind::kMzlc;
  if (s == "ramsey") return ScanKind::kRamsey;
  if (s == "cz_swap") return ScanKind::kCzSwap;
  fail(ErrorKind::kConfig, "unknown scan kind '" + s + "'");
}

struct Axis {
  std::string name;
  std::string unit;
  std::vector<double> values;
  // Same grid expressed as normalized flux pi*Phi/Phi0, when meaningful.
  std::vector<double> normalized_flux;

  std::size_t size() const noexcept { return values.size(); }

  bool uniform(double rel_tol = 1e-9) const {
    if (values.size() < 2) return false;
    const double step = values[1] - values[0];
    for (std::size_t i = 2; i < values.size(); ++i) {
      if (std::abs(values[i] - values[i - 1] - step) > rel_tol * std::abs(step) + 1e-15) {
        return false;
      }
    }
    return true;
  }

  double step() const { return values.size() < 2 ? 0.0 : values[1] - values[0]; }
};

struct ScanMeta {
  std::string probe_label;
  std::optional<std::string> source_label;
  std::optional<double> drive_freq_mhz;
  // Fixed probe bias for Ramsey scans.
  std::optional<double> probe_bias_v;
  std::uint64_t seed = 0;
};

// 2D measurement: signal[iy][ix] at (x_axis.values[ix], y_axis.values[iy]).
struct ScanMap {
  ScanKind kind = ScanKind::kSpectroscopy;
  Axis x_axis;
  Axis y_axis;
  std::vector<std::vector<double>> signal;
  ScanMeta meta;

  double at(std::size_t iy, std::size_t ix) const { return signal[iy][ix]; }

  std::vector<double> column(std::size_t ix) const {
    std::vector<double> c(signal.size());
    for (std::size_t iy = 0; iy < signal.size(); ++iy) c[iy] = signal[iy][ix];
    return c;
  }

  void validate() const {
    if (signal.size() != y_axis.size()) fail(ErrorKind::kDimension, "scan rows != len(y_axis)");
    for (const auto& row : signal) {
      if (row.size() != x_axis.size()) fail(ErrorKind::kDimension, "scan cols != len(x_axis)");
      for (double v : row) {
        if (!std::isfinite(v)) fail(ErrorKind::kDomain, "scan contains non-finite values");
      }
    }
  }

  // {kind}_{probe}[_{source}]
  std::string file_stem() const {
    std::string s = std::string(to_string(kind)) + "_" + meta.probe_label;
    if (meta.source_label) s += "_" + *meta.source_label;
    return s;
  }
};

// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) return "nan";
  return std::string(buf, res.ptr);
}

// CSV layout: first row = x values (after an empty corner cell), first column
// = y values, body = signal.
inline void write_csv(std::ostream& os, const ScanMap& scan) {
  for (double x : scan.x_axis.values) os << ',' << format_double(x);
  os << '\n';
  for (std::size_t iy = 0; iy < scan.y_axis.size(); ++iy) {
    os << format_double(scan.y_axis.values[iy]);
    for (double v : scan.signal[iy]) os << ',' << format_double(v);
    os << '\n';
  }
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = lo;
    return v;
  }
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return v;
}

}  // namespace fluxtalk
