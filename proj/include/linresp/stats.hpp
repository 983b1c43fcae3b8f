#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "linresp/error.hpp"

namespace linresp {

inline constexpr int kDefaultBatches = 32;
inline constexpr int kMinBatches = 20;

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Mean computed relative to the first sample, so a constant sequence
/// returns that constant bit-exactly.
inline double shifted_mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double origin = xs.front();
  double acc = 0.0;
  for (double x : xs) acc += x - origin;
  return origin + acc / static_cast<double>(xs.size());
}

/// Standard error of the mean of `batch_means` treated as independent draws.
inline double spread_error(std::span<const double> batch_means) {
  const std::size_t b = batch_means.size();
  if (b < 2) return 0.0;
  const double m = shifted_mean(batch_means);
  double ss = 0.0;
  for (double x : batch_means) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(b - 1) / static_cast<double>(b));
}

/// Batch index of sample `k` out of `total` split into `batches` contiguous
/// groups of (nearly) equal size.
inline std::size_t batch_of(std::size_t k, std::size_t total, std::size_t batches) {
  return k * batches / total;
}

/// Batch-means estimate of the mean of a correlated sequence.
inline Estimate batch_means(std::span<const double> samples, int batches = kDefaultBatches) {
  require(!samples.empty(), "batch_means: empty sample");
  require(batches >= 1, "batch_means: batches must be positive");
  const std::size_t n = samples.size();
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(batches), n);
  const double origin = samples.front();
  std::vector<double> sums(b, 0.0);
  std::vector<std::size_t> counts(b, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = batch_of(k, n, b);
    sums[i] += samples[k] - origin;
    ++counts[i];
  }
  std::vector<double> means(b);
  for (std::size_t i = 0; i < b; ++i) means[i] = origin + sums[i] / static_cast<double>(counts[i]);
  return {shifted_mean(samples), spread_error(means)};
}

/// Accumulates several channels of per-sample values into contiguous batches
/// when the total sample count is known up front. Sums can be merged from
/// partial accumulators in a fixed order.
class BatchAccumulator {
 public:
  BatchAccumulator(std::size_t channels, std::size_t total, std::size_t batches)
      : channels_(channels),
        total_(total),
        batches_(std::max<std::size_t>(1, std::min(batches, total))),
        sums_(batches_ * channels, 0.0),
        counts_(batches_, 0) {}

  std::size_t channels() const { return channels_; }
  std::size_t batches() const { return batches_; }
  std::size_t total() const { return total_; }

  double* row_for(std::size_t sample_index) {
    const std::size_t b = batch_of(sample_index, total_, batches_);
    ++counts_[b];
    return sums_.data() + b * channels_;
  }

  void merge(const BatchAccumulator& other) {
    for (std::size_t i = 0; i < sums_.size(); ++i) sums_[i] += other.sums_[i];
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  /// batch_values[b][c] = mean of channel c within batch b.
  std::vector<std::vector<double>> batch_values() const {
    std::vector<std::vector<double>> out(batches_, std::vector<double>(channels_, 0.0));
    for (std::size_t b = 0; b < batches_; ++b) {
      const double n = static_cast<double>(counts_[b]);
      for (std::size_t c = 0; c < channels_; ++c)
        out[b][c] = counts_[b] ? sums_[b * channels_ + c] / n : 0.0;
    }
    return out;
  }

  std::vector<Estimate> estimates() const {
    std::vector<Estimate> out(channels_);
    std::size_t n = 0;
    for (auto c : counts_) n += c;
    const auto values = batch_values();
    std::vector<double> column;
    for (std::size_t c = 0; c < channels_; ++c) {
      double total = 0.0;
      column.clear();
      for (std::size_t b = 0; b < batches_; ++b) {
        total += sums_[b * channels_ + c];
        if (counts_[b]) column.push_back(values[b][c]);
      }
      out[c].value = n ? total / static_cast<double>(n) : 0.0;
      out[c].std_error = spread_error(column);
    }
    return out;
  }

 private:
  std::size_t channels_;
  std::size_t total_;
  std::size_t batches_;
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_error = 0.0;
  double intercept_error = 0.0;
  double r_squared = 0.0;
  double residual_rms = 0.0;
  std::size_t points = 0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LinearFit linear_fit(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), "linear_fit: size mismatch");
  require(xs.size() >= 2, "linear_fit: need at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx <= 0.0) fail(ErrorKind::numerical_degeneracy, "linear_fit: abscissae coincide");
  LinearFit fit;
  fit.points = xs.size();
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - fit.intercept - fit.slope * xs[i];
    rss += r * r;
  }
  fit.residual_rms = std::sqrt(rss / n);
  fit.r_squared = syy > 0.0 ? 1.0 - rss / syy : 1.0;
  if (xs.size() > 2) {
    const double s2 = rss / (n - 2.0);
    fit.slope_error = std::sqrt(s2 / sxx);
    fit.intercept_error = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  return fit;
}

/// Weighted least squares with per-point standard deviations. The slope
/// error is inflated by sqrt(reduced chi^2) when the scatter exceeds the
/// stated errors. Falls back to ordinary least squares if any sigma is zero.
inline LinearFit weighted_linear_fit(std::span<const double> xs, std::span<const double> ys,
                                     std::span<const double> sigmas) {
  require(xs.size() == ys.size() && xs.size() == sigmas.size(), "weighted_linear_fit: size mismatch");
  require(xs.size() >= 2, "weighted_linear_fit: need at least two points");
  for (double s : sigmas)
    if (!(s > 0.0)) return linear_fit(xs, ys);
  double sw = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double w = 1.0 / (sigmas[i] * sigmas[i]);
    sw += w;
    mx += w * xs[i];
    my += w * ys[i];
  }
  mx /= sw;
  my /= sw;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double w = 1.0 / (sigmas[i] * sigmas[i]);
    sxx += w * (xs[i] - mx) * (xs[i] - mx);
    sxy += w * (xs[i] - mx) * (ys[i] - my);
    syy += w * (ys[i] - my) * (ys[i] - my);
  }
  if (sxx <= 0.0) fail(ErrorKind::numerical_degeneracy, "weighted_linear_fit: abscissae coincide");
  LinearFit fit;
  fit.points = xs.size();
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double chi2 = 0.0, rss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - fit.intercept - fit.slope * xs[i];
    chi2 += r * r / (sigmas[i] * sigmas[i]);
    rss += r * r;
  }
  const double n = static_cast<double>(xs.size());
  fit.residual_rms = std::sqrt(rss / n);
  fit.r_squared = syy > 0.0 ? 1.0 - chi2 / syy : 1.0;
  const double inflate = xs.size() > 2 ? std::max(1.0, std::sqrt(chi2 / (n - 2.0))) : 1.0;
  fit.slope_error = inflate * std::sqrt(1.0 / sxx);
  fit.intercept_error = inflate * std::sqrt(1.0 / sw + mx * mx / sxx);
  return fit;
}

/// Kolmogorov-Smirnov distance between the empirical law of `xs` and U[0,1).
inline double ks_distance_uniform(std::vector<double> xs) {
  require(!xs.empty(), "ks_distance_uniform: empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x = std::clamp(xs[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - x, x - static_cast<double>(i) / n});
  }
  return d;
}

/// Two-sided quantile from a sample (linear interpolation).
inline double quantile(std::vector<double> xs, double q) {
  require(!xs.empty(), "quantile: empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return xs[lo] * (1.0 - t) + xs[hi] * t;
}

/// |a - b| in units of combined standard error; 0 when both are exact and equal.
inline double sigma_distance(const Estimate& a, const Estimate& b) {
  const double diff = std::abs(a.value - b.value);
  const double se = std::hypot(a.std_error, b.std_error);
  if (se == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / se;
}

}  // namespace linresp
