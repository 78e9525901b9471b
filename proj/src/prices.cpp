#include "kmpc/prices.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kmpc {

namespace {

constexpr std::int64_t kHour = 3600;

std::int64_t parse_iso8601(const std::string& s) {
  int y, mo, d, h, mi;
  int sec = 0;
  int n = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &h, &mi, &sec);
  if (n < 5) {
    n = std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h, &mi, &sec);
    if (n < 5) throw std::runtime_error("prices: cannot parse timestamp '" + s + "'");
  }
  std::tm tm{};
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = sec;
  return static_cast<std::int64_t>(timegm(&tm));
}

std::string format_iso8601(std::int64_t t) {
  std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

}  // namespace

double PriceSeries::mean() const {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double PriceSeries::stddev() const {
  if (values.size() < 2) return 1.0;
  double m = mean();
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size()));
}

PriceSeries load_prices(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw std::runtime_error("prices: cannot open '" + csv_path + "'");

  PriceSeries out;
  std::vector<std::string> bad;
  std::string line;
  long line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    // header line, if any
    if (line_no == 1 && line.find_first_of("0123456789") != 0) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("prices: line " + std::to_string(line_no) + " has no comma: '" + line + "'");
    std::string ts_str = line.substr(0, comma);
    std::string price_str = line.substr(comma + 1);
    std::int64_t ts = parse_iso8601(ts_str);
    double price = std::stod(price_str);
    out.timestamps.push_back(ts);
    out.values.push_back(price);
  }
  if (out.values.empty()) throw std::runtime_error("prices: no rows in '" + csv_path + "'");

  for (std::size_t i = 1; i < out.timestamps.size(); ++i) {
    std::int64_t dt = out.timestamps[i] - out.timestamps[i - 1];
    if (dt <= 0)
      bad.push_back("out-of-order or duplicate hour at " + format_iso8601(out.timestamps[i]));
    else if (dt != kHour)
      bad.push_back("missing hour(s) before " + format_iso8601(out.timestamps[i]));
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "prices: malformed series in '" << csv_path << "':";
    for (const auto& b : bad) os << "\n  " << b;
    throw std::runtime_error(os.str());
  }
  return out;
}

void save_prices_csv(const PriceSeries& series, const std::string& csv_path) {
  std::ofstream f(csv_path, std::ios::trunc);
  if (!f) throw std::runtime_error("prices: cannot open '" + csv_path + "' for writing");
  f << "timestamp,price\n";
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", series.values[i]);
    f << format_iso8601(series.timestamps[i]) << ',' << buf << '\n';
  }
}

PriceSeries synth_prices(int n_hours, Rng& rng, const SynthPriceConfig& cfg) {
  PriceSeries out;
  out.values.reserve(n_hours);
  out.timestamps.reserve(n_hours);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (int t = 0; t < n_hours; ++t) {
    double daily = cfg.daily_amplitude * std::sin(two_pi * (t % 24) / 24.0);
    double weekly = cfg.weekly_amplitude * std::sin(two_pi * (t % 168) / 168.0);
    double noise = rng.normal(0.0, cfg.noise_std);
    noise = std::clamp(noise, -3.0 * cfg.noise_std, 3.0 * cfg.noise_std);
    out.values.push_back(std::max(0.0, cfg.base + daily + weekly + noise));
    out.timestamps.push_back(cfg.start_timestamp + static_cast<std::int64_t>(t) * kHour);
  }
  return out;
}

}  // namespace kmpc
