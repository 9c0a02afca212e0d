#pragma once

// Brute-force reference computations shared by the test suites. Each one is
// written directly from its textbook definition, independent of the library.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace oracle {

using cplx = std::complex<double>;
inline constexpr double kPi = std::numbers::pi;

inline std::vector<double> sine(double f, double fs, double seconds, double amp = 1.0, double phase = 0.0) {
  const auto n = static_cast<std::size_t>(std::llround(fs * seconds));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * kPi * f * double(i) / fs + phase);
  return x;
}

/// X[k] = sum_t x[t] exp(-j 2 pi k t / N).
inline cplx dft_bin(const std::vector<double>& x, double k) {
  cplx acc{};
  const double n = double(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) acc += x[t] * std::polar(1.0, -2.0 * kPi * k * double(t) / n);
  return acc;
}

/// Analytic signal by a direct O(N^2) DFT: keep DC and Nyquist, double the
/// positive frequencies, drop the negative ones.
inline std::vector<cplx> analytic(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<cplx> spec(n);
  for (std::size_t k = 0; k < n; ++k) spec[k] = dft_bin(x, double(k));
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n) spec[k] *= 2.0;
    else if (2 * k > n) spec[k] = 0.0;
  }
  std::vector<cplx> z(n);
  for (std::size_t t = 0; t < n; ++t) {
    cplx acc{};
    for (std::size_t k = 0; k < n; ++k) acc += spec[k] * std::polar(1.0, 2.0 * kPi * double(k * t % n) / double(n));
    z[t] = acc / double(n);
  }
  return z;
}

/// Zeroth-order modified Bessel function by its power series.
inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 200; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

/// Kaiser window normalized to unit sum.
inline std::vector<double> kaiser(std::size_t len, double beta) {
  std::vector<double> w(len);
  double total = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double r = 2.0 * double(i) / double(len - 1) - 1.0;
    w[i] = bessel_i0(beta * std::sqrt(1.0 - r * r)) / bessel_i0(beta);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

/// |sum_tau h(tau) sum_mu g(mu) z(n+mu+tau) z*(n+mu-tau) exp(-j 4 pi k tau / N)|
/// with zero padding outside the signal.
inline double spwvd_point(const std::vector<cplx>& z, const std::vector<double>& g, const std::vector<double>& h,
                          std::ptrdiff_t n, std::size_t k, std::size_t nbins) {
  const auto lg = std::ptrdiff_t(g.size() / 2), lh = std::ptrdiff_t(h.size() / 2);
  const auto len = std::ptrdiff_t(z.size());
  auto at = [&](std::ptrdiff_t i) { return (i < 0 || i >= len) ? cplx{} : z[std::size_t(i)]; };
  cplx total{};
  for (std::ptrdiff_t tau = -lh; tau <= lh; ++tau) {
    cplx inner{};
    for (std::ptrdiff_t mu = -lg; mu <= lg; ++mu)
      inner += g[std::size_t(mu + lg)] * at(n + mu + tau) * std::conj(at(n + mu - tau));
    total += h[std::size_t(tau + lh)] * inner * std::polar(1.0, -4.0 * kPi * double(k) * double(tau) / double(nbins));
  }
  return std::abs(total);
}

}  // namespace oracle
