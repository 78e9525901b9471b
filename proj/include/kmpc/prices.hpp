#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kmpc/rng.hpp"

namespace kmpc {

// Hourly electricity prices. Timestamps are unix seconds at the start of each
// delivery hour; the series must be gap-free and strictly increasing.
struct PriceSeries {
  std::vector<double> values;
  std::vector<std::int64_t> timestamps;

  std::size_t size() const { return values.size(); }
  // price at hour t, holding the final value past the end of the series
  double at_padded(long t) const {
    if (values.empty()) return 0.0;
    if (t < 0) return values.front();
    return values[std::min<std::size_t>(static_cast<std::size_t>(t), values.size() - 1)];
  }
  std::vector<double> window(long t, int len) const {
    std::vector<double> w(len);
    for (int i = 0; i < len; ++i) w[i] = at_padded(t + i);
    return w;
  }
  double mean() const;
  double stddev() const;
};

// CSV with two columns: ISO-8601 timestamp, price. Rejects out-of-order,
// duplicated, or missing hours, listing the offending timestamps.
PriceSeries load_prices(const std::string& csv_path);

void save_prices_csv(const PriceSeries& series, const std::string& csv_path);

struct SynthPriceConfig {
  double base = 10.0;
  double daily_amplitude = 4.0;
  double weekly_amplitude = 2.0;
  double noise_std = 1.5;
  std::int64_t start_timestamp = 1514764800;  // 2018-01-01T00:00:00Z
};

// Daily + weekly sinusoids plus Gaussian noise clipped at 3 sigma; prices are
// clamped to be nonnegative. Deterministic per rng seed.
PriceSeries synth_prices(int n_hours, Rng& rng, const SynthPriceConfig& cfg = {});

}  // namespace kmpc
