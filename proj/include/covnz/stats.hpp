#pragma once

#include <optional>
#include <span>

#include "covnz/error.hpp"

namespace covnz {

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;  // for the uncentered log-log fit
  double r_squared = 0.0;
  int n_points = 0;
  int n_dropped = 0;  // non-positive or non-finite pairs removed before fitting
};

// Ordinary least squares on (log x, log y) after mean-centering both logs.
// Pairs with a non-positive or non-finite coordinate are dropped (counted in
// n_dropped). Centering is computed from pairwise log-ratios, which keeps the
// slope invariant under exact rescaling of either series.
FitResult ols_loglog(std::span<const double> x, std::span<const double> y);

// Spearman rank correlation with average ranks on ties. A constant input
// series has no defined rank correlation; that case reports nullopt instead
// of throwing.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

}  // namespace covnz
