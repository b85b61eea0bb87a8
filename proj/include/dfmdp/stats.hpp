// Summary statistics across instances and seeds.
#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace dfmdp {

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// Mean and standard error (sample standard deviation / √n); n = 1 gives 0.
inline MeanStderr mean_stderr(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_stderr: no values");
  MeanStderr out;
  out.n = xs.size();
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stderr_ = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return out;
}

struct PairedTest {
  double mean_diff = 0.0;
  double t = 0.0;
  double p_value = 1.0;  // H1: mean(a − b) > 0
  std::size_t n = 0;
};

/// One-sided paired t-test of a over b.
inline PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: unequal sample sizes");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const auto s = mean_stderr(d);
  PairedTest out;
  out.n = d.size();
  out.mean_diff = s.mean;
  if (s.stderr_ == 0.0) {
    out.t = s.mean > 0.0 ? std::numeric_limits<double>::infinity()
                         : (s.mean < 0.0 ? -std::numeric_limits<double>::infinity() : 0.0);
    out.p_value = s.mean > 0.0 ? 0.0 : (s.mean < 0.0 ? 1.0 : 0.5);
    return out;
  }
  out.t = s.mean / s.stderr_;
  const boost::math::students_t dist(static_cast<double>(d.size() - 1));
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t));
  return out;
}

}  // namespace dfmdp
