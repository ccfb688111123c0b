#pragma once

// Shared statistical helpers for the test suites.

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ardent/random.hpp"

namespace testing_support {

// Upper tail of the chi-square goodness-of-fit statistic against `expected` probabilities.
inline double chi_square_p(const std::vector<std::size_t>& observed, const std::vector<double>& expected) {
  double n = 0.0;
  for (auto o : observed) n += static_cast<double>(o);
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = n * expected[i];
    stat += (static_cast<double>(observed[i]) - e) * (static_cast<double>(observed[i]) - e) / e;
  }
  boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

// Asymptotic Kolmogorov tail Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
inline double kolmogorov_tail(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline double ks_p_from_d(double d, double n_eff) {
  const double s = std::sqrt(n_eff);
  return kolmogorov_tail((s + 0.12 + 0.11 / s) * d);
}

// One-sample KS test against the standard normal CDF after standardizing with (mean, sd).
inline double ks_normal_p(std::vector<double> xs, double mean, double sd) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = 0.5 * std::erfc(-(xs[i] - mean) / (sd * std::sqrt(2.0)));
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return ks_p_from_d(d, n);
}

inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return ks_p_from_d(d, na * nb / (na + nb));
}

inline std::vector<double> random_simplex(std::size_t n, ardent::Rng& rng) {
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (double& v : p) s += (v = ex(rng));
  for (double& v : p) v /= s;
  return p;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("ardent_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing_support
