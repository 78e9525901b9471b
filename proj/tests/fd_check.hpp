#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace kmpc_test {

// Central finite differences of a scalar function of a flat parameter vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double x0 = x[i];
    x[i] = x0 + eps;
    double fp = f(x);
    x[i] = x0 - eps;
    double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// relative error ||a-b||_inf / max(1e-12, ||b||_inf, denom_floor)
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b, double denom_floor = 1e-9) {
  double num = 0.0, den = denom_floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::fabs(a[i] - b[i]));
    den = std::max(den, std::fabs(b[i]));
  }
  return num / den;
}

// directional derivative check: (f(x+eps d) - f(x-eps d)) / (2 eps)
inline double directional_diff(const std::function<double(const std::vector<double>&)>& f,
                               const std::vector<double>& x, const std::vector<double>& d, double eps) {
  std::vector<double> xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += eps * d[i];
    xm[i] -= eps * d[i];
  }
  return (f(xp) - f(xm)) / (2.0 * eps);
}

}  // namespace kmpc_test
