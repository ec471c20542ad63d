#include "covnz/synthetic.hpp"

#include <cmath>
#include <limits>

#include "covnz/parallel.hpp"
#include "covnz/spectral.hpp"

namespace covnz {

SymMatrix spiked_covariance(const SpikedSpec& spec) {
  if (spec.spikes < 1 || spec.spikes > spec.dim)
    throw InvalidSpikes("spiked_covariance: need 1 <= M <= D");
  Rng rng(Rng::derive(spec.seed, 0x5Bu));
  // Q diag(spike x M, bulk x (D-M)) Q^T = bulk I + (spike - bulk) Q_M Q_M^T,
  // so only the leading M Haar columns are ever needed.
  const Matrix f = haar_frame(spec.dim, spec.spikes, rng);
  Matrix c = Matrix::Zero(spec.dim, spec.dim);
  c.selfadjointView<Eigen::Lower>().rankUpdate(f, spec.spike_value - spec.bulk);
  SymMatrix out = SymMatrix::from_lower(c);
  if (spec.bulk != 0.0) {
    Matrix with_bulk = out.mat();
    with_bulk.diagonal().array() += spec.bulk;
    out = SymMatrix::from_lower(with_bulk);
  }
  return out;
}

RsmResult random_shifts_model(const SymMatrix& h, double sigma, int trials,
                              std::uint64_t seed, int top_n) {
  if (trials < 2) throw InsufficientData("random_shifts_model: need >= 2 trials");
  const EigenDecomposition eig = sym_eig(h);
  if (eig.values.minCoeff() < -1e-10 * std::abs(eig.values.maxCoeff()))
    throw InvalidMatrix("random_shifts_model: H must be PSD");
  const int d = static_cast<int>(h.dim());
  top_n = std::min(top_n, d);

  auto acc = parallel_reduce_chunks<Matrix>(
      trials, 256, Matrix(Matrix::Zero(d, d)),
      [&](std::size_t lo, std::size_t hi) {
        Matrix part = Matrix::Zero(d, d);
        Vector dw(d);
        for (std::size_t t = lo; t < hi; ++t) {
          Rng rng(Rng::derive(seed, 0x77u, t));
          for (int i = 0; i < d; ++i) dw[i] = sigma * rng.normal();
          const Vector eps = h.mat() * dw;
          part.selfadjointView<Eigen::Lower>().rankUpdate(eps, 1.0);
        }
        return part;
      },
      [](Matrix& a, const Matrix& b) { a += b; });

  RsmResult out;
  out.c_emp = SymMatrix::from_lower(acc / static_cast<double>(trials));
  const SymMatrix projected = project(out.c_emp, eig.vectors, d);
  const Vector c_diag = projected.diagonal();
  try {
    out.fit = power_law(eig.values, c_diag, top_n);
  } catch (const InsufficientData&) {
    out.fit.n_points = 0;  // flat spectrum: no slope to fit
    out.fit.slope = std::numeric_limits<double>::quiet_NaN();
  }
  out.ratio.resize(top_n);
  for (int i = 0; i < top_n; ++i)
    out.ratio[i] = c_diag[i] / (sigma * sigma * eig.values[i] * eig.values[i]);
  return out;
}

void EnsembleSpec::validate() const {
  if (samples < 2) throw InsufficientData("ensemble: need P >= 2");
  if (modes < 2) throw InvalidDimension("ensemble: need n >= 2");
  if (rel_spread < 0.0 || kappa_sigma < 0.0)
    throw InvalidDimension("ensemble: spreads must be >= 0");
  if (mode == EnsembleMode::perfect_alignment && mean_decades <= 0.0)
    throw InvalidDimension("ensemble: perfect alignment needs a positive mean range");
  if (mode == EnsembleMode::degenerate && dim <= modes)
    throw InvalidDimension("ensemble: degenerate mode needs dim > modes");
}

namespace {

// Log-normal with the requested mean and coefficient of variation.
double lognormal(Rng& rng, double mean, double cv) {
  if (cv == 0.0) return mean;
  const double s2 = std::log1p(cv * cv);
  return mean * std::exp(std::sqrt(s2) * rng.normal() - 0.5 * s2);
}

EnsembleResult perfect_alignment(const EnsembleSpec& spec) {
  const int n = spec.modes, p = spec.samples;
  Vector mean_first = Vector::Zero(n), mean_second = Vector::Zero(n);
  double mu_k = 0.0, mu_k2 = 0.0;
  for (int s = 0; s < p; ++s) {
    Rng rng(Rng::derive(spec.seed, 0xA1u, static_cast<std::uint64_t>(s)));
    for (int i = 0; i < n; ++i) {
      const double mi =
          spec.kappa_mean * std::pow(10.0, -spec.mean_decades * i / (n - 1.0));
      const double k = lognormal(rng, mi, spec.rel_spread);
      mean_first[i] += k;
      mean_second[i] += k * k;
      mu_k += k;
      mu_k2 += k * k;
    }
  }
  EnsembleResult out;
  out.h_diag = mean_first / p;
  out.c2_diag = mean_second / p;
  out.fit = power_law(out.h_diag, out.c2_diag, n);
  out.mu_kappa = mu_k / (static_cast<double>(p) * n);
  out.mu_kappa_sq = mu_k2 / (static_cast<double>(p) * n);
  return out;
}

EnsembleResult degenerate_ensemble(const EnsembleSpec& spec) {
  const int d = spec.dim, n = spec.modes, p = spec.samples;
  const double cv = spec.kappa_sigma / spec.kappa_mean;

  struct Partial {
    Vector first, second;
    double mu_k = 0.0, mu_k2 = 0.0;
  };
  auto total = parallel_reduce_chunks<Partial>(
      p, 16, Partial{Vector::Zero(d), Vector::Zero(d)},
      [&](std::size_t lo, std::size_t hi) {
        Partial part{Vector::Zero(d), Vector::Zero(d)};
        Matrix frame(d, n);
        for (std::size_t s = lo; s < hi; ++s) {
          Rng rng(Rng::derive(spec.seed, 0xA2u, s));
          // Tilt each aligned axis e_m into the bulk by a random small angle;
          // bulk components get polynomially decaying weights so the leakage
          // profile spans a range of magnitudes.
          for (int m = 0; m < n; ++m) {
            const double phi = spec.jitter_max * rng.uniform();
            Vector r = Vector::Zero(d);
            for (int j = n; j < d; ++j)
              r[j] = rng.normal() / std::pow(static_cast<double>(j - n + 1), spec.bulk_decay);
            r /= r.norm();
            frame.col(m) = Vector::Zero(d);
            frame.col(m)[m] = std::cos(phi);
            frame.col(m) += std::sin(phi) * r;
          }
          // Gram-Schmidt; the columns are near-orthogonal already.
          for (int m = 0; m < n; ++m) {
            for (int q = 0; q < m; ++q)
              frame.col(m) -= frame.col(q).dot(frame.col(m)) * frame.col(q);
            frame.col(m) /= frame.col(m).norm();
          }
          for (int m = 0; m < n; ++m) {
            const double k = lognormal(rng, spec.kappa_mean, cv);
            part.mu_k += k;
            part.mu_k2 += k * k;
            const Vector sq = frame.col(m).cwiseProduct(frame.col(m));
            part.first += k * sq;
            part.second += k * k * sq;
          }
        }
        return part;
      },
      [](Partial& a, const Partial& b) {
        a.first += b.first;
        a.second += b.second;
        a.mu_k += b.mu_k;
        a.mu_k2 += b.mu_k2;
      });

  EnsembleResult out;
  out.h_diag = total.first / p;
  out.c2_diag = total.second / p;
  out.fit = power_law(out.h_diag, out.c2_diag, d);
  out.mu_kappa = total.mu_k / (static_cast<double>(p) * n);
  out.mu_kappa_sq = total.mu_k2 / (static_cast<double>(p) * n);
  return out;
}

}  // namespace

EnsembleResult ensemble_covariance(const EnsembleSpec& spec) {
  spec.validate();
  return spec.mode == EnsembleMode::perfect_alignment ? perfect_alignment(spec)
                                                      : degenerate_ensemble(spec);
}

}  // namespace covnz
