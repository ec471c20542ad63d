#include "covnz/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "covnz/linalg.hpp"

namespace covnz {

namespace {

// Centered log of v: c_i = mean_j log(v_i / v_j). Mathematically equal to
// log v_i - mean(log v), but the ratio form cancels a common scale factor
// of v before the logarithm is taken.
std::vector<double> centered_log(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> c(n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = std::log(v[i] / v[j]);
    c[i] = pairwise_sum(row) / static_cast<double>(n);
  }
  return c;
}

double dot_pairwise(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> prod(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) prod[i] = a[i] * b[i];
  return pairwise_sum(prod);
}

}  // namespace

FitResult ols_loglog(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InsufficientData("ols_loglog: length mismatch");
  std::vector<double> xs, ys;
  int dropped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0 && y[i] > 0.0 && std::isfinite(x[i]) && std::isfinite(y[i])) {
      xs.push_back(x[i]);
      ys.push_back(y[i]);
    } else {
      ++dropped;
    }
  }
  const std::size_t n = xs.size();
  if (n < 2) throw InsufficientData("ols_loglog: fewer than 2 usable points");

  const std::vector<double> dx = centered_log(xs);
  const std::vector<double> dy = centered_log(ys);
  const double sxx = dot_pairwise(dx, dx);
  const double sxy = dot_pairwise(dx, dy);
  const double syy = dot_pairwise(dy, dy);
  if (sxx <= 0.0) throw InsufficientData("ols_loglog: x values are all equal");

  FitResult fit;
  fit.slope = sxy / sxx;
  fit.n_points = static_cast<int>(n);
  fit.n_dropped = dropped;

  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  const double mx = pairwise_sum(lx) / static_cast<double>(n);
  const double my = pairwise_sum(ly) / static_cast<double>(n);
  fit.intercept = my - fit.slope * mx;

  if (syy <= 0.0) {
    fit.r_squared = 1.0;  // zero residual: slope 0 reproduces y exactly
  } else {
    fit.r_squared = std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
  }
  return fit;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InsufficientData("spearman: need two equal-length series");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const std::size_t n = x.size();
  const double mean = 0.5 * static_cast<double>(n + 1);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rx[i] - mean;
    const double b = ry[i] - mean;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace covnz
