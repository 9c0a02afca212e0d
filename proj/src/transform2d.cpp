#include "pulsemap/transform2d.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "pulsemap/error.hpp"

namespace pulsemap {

using cplx = std::complex<double>;

const char* map_kind_name(MapKind k) {
  switch (k) {
    case MapKind::Toeplitz: return "toeplitz";
    case MapKind::SPWVD: return "spwvd";
    case MapKind::Scalogram: return "scalogram";
  }
  return "?";
}

MapKind parse_map_kind(const std::string& s) {
  if (s == "toeplitz") return MapKind::Toeplitz;
  if (s == "spwvd") return MapKind::SPWVD;
  if (s == "scalogram") return MapKind::Scalogram;
  throw ConfigError("unknown transform method '" + s + "' (expected toeplitz|spwvd|scalogram)");
}

// ---------------------------------------------------------------------------
// Toeplitz spatiotemporal map

TimeFreqMap toeplitz_map(const Segment& segment) {
  const std::size_t p = segment.samples.size();
  if (p < 4 || p % 2 != 0)
    throw DataError("Toeplitz map needs an even segment of at least 4 samples, got " +
                    std::to_string(p));
  const std::size_t half = p / 2;
  TimeFreqMap map;
  map.kind = MapKind::Toeplitz;
  map.values.resize(static_cast<Eigen::Index>(half), static_cast<Eigen::Index>(half));
  for (std::size_t i = 0; i < half; ++i)
    for (std::size_t j = 0; j < half; ++j)
      map.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          segment.samples[i + j];
  map.row_axis.resize(half);
  map.col_axis.resize(half);
  const double fs = segment.sample_rate_hz > 0 ? segment.sample_rate_hz : 1.0;
  for (std::size_t i = 0; i < half; ++i) {
    map.row_axis[i] = double(i);
    map.col_axis[i] = double(i) / fs;
  }
  return map;
}

// ---------------------------------------------------------------------------
// Smoothed pseudo Wigner-Ville distribution

std::vector<double> kaiser_window(std::size_t length, double beta) {
  std::vector<double> w(length, 1.0);
  if (length == 1) return w;
  const double denom = std::cyl_bessel_i(0.0, beta);
  for (std::size_t n = 0; n < length; ++n) {
    const double r = 2.0 * double(n) / double(length - 1) - 1.0;
    w[n] = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

SmoothingWindows SmoothingWindows::kaiser(std::size_t length, double beta) {
  if (length % 2 == 0 || length == 0) throw ConfigError("smoothing window length must be odd");
  auto w = kaiser_window(length, beta);
  double sum = 0.0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return {w, w, beta};
}

std::vector<cplx> analytic_signal(const std::vector<double>& x) {
  const std::size_t n = x.size();
  Eigen::FFT<double> fft;
  std::vector<cplx> spec;
  fft.fwd(spec, x);
  spec.resize(n);  // Eigen may return the half spectrum for real input.
  if (spec.size() == n && n > 1) {
    // Rebuild the full spectrum from Hermitian symmetry when only half was filled.
    for (std::size_t k = n / 2 + 1; k < n; ++k) spec[k] = std::conj(spec[n - k]);
  }
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n)
      spec[k] *= 2.0;
    else if (2 * k > n)
      spec[k] = 0.0;
  }
  std::vector<cplx> z;
  fft.inv(z, spec);
  return z;
}

TimeFreqMap spwvd_map(const Segment& segment, const SmoothingWindows& windows,
                      std::size_t n_freq_bins) {
  const auto& g = windows.time_window;
  const auto& h = windows.freq_window;
  if (g.size() % 2 == 0 || h.size() % 2 == 0 || g.empty() || h.empty())
    throw ConfigError("smoothing windows must have odd length");
  if (n_freq_bins < 32 || (n_freq_bins & (n_freq_bins - 1)) != 0)
    throw ConfigError("n_freq_bins must be a power of two >= 32");
  const std::size_t min_len = g.size() + h.size();
  const std::size_t len = segment.samples.size();
  if (len < min_len)
    throw DataError("SPWVD needs at least " + std::to_string(min_len) + " samples, got " +
                    std::to_string(len));

  const auto z = analytic_signal(segment.samples);
  const auto lg = static_cast<std::ptrdiff_t>(g.size() / 2);
  const auto lh = static_cast<std::ptrdiff_t>(h.size() / 2);
  const auto n_len = static_cast<std::ptrdiff_t>(len);
  auto at = [&](std::ptrdiff_t i) { return (i < 0 || i >= n_len) ? cplx{} : z[std::size_t(i)]; };

  const std::size_t n_rows = n_freq_bins / 2 + 1;
  // twiddle[m] = exp(-j 2 pi m / N); the lag kernel uses index 2 k tau mod N.
  std::vector<cplx> twiddle(n_freq_bins);
  for (std::size_t m = 0; m < n_freq_bins; ++m)
    twiddle[m] = std::polar(1.0, -2.0 * std::numbers::pi * double(m) / double(n_freq_bins));

  TimeFreqMap map;
  map.kind = MapKind::SPWVD;
  map.values.resize(static_cast<Eigen::Index>(n_rows), n_len);
  std::vector<cplx> kernel(h.size());
  const auto nbins = static_cast<std::ptrdiff_t>(n_freq_bins);
  for (std::ptrdiff_t n = 0; n < n_len; ++n) {
    for (std::ptrdiff_t tau = -lh; tau <= lh; ++tau) {
      cplx acc{};
      for (std::ptrdiff_t mu = -lg; mu <= lg; ++mu)
        acc += g[std::size_t(mu + lg)] * at(n + mu + tau) * std::conj(at(n + mu - tau));
      kernel[std::size_t(tau + lh)] = h[std::size_t(tau + lh)] * acc;
    }
    for (std::size_t k = 0; k < n_rows; ++k) {
      cplx sum{};
      for (std::ptrdiff_t tau = -lh; tau <= lh; ++tau) {
        auto idx = (2 * static_cast<std::ptrdiff_t>(k) * tau) % nbins;
        if (idx < 0) idx += nbins;
        sum += kernel[std::size_t(tau + lh)] * twiddle[std::size_t(idx)];
      }
      map.values(static_cast<Eigen::Index>(k), n) = std::abs(sum);
    }
  }
  const double fs = segment.sample_rate_hz;
  map.row_axis.resize(n_rows);
  for (std::size_t k = 0; k < n_rows; ++k) map.row_axis[k] = double(k) * fs / double(n_freq_bins);
  map.col_axis.resize(len);
  for (std::size_t n = 0; n < len; ++n) map.col_axis[n] = double(n) / fs;
  return map;
}

// ---------------------------------------------------------------------------
// Morse wavelet scalogram

double morse_response(double omega, double gamma, double beta) {
  if (omega <= 0.0) return 0.0;
  const double log_a = std::log(2.0) + (beta / gamma) * (1.0 + std::log(gamma) - std::log(beta));
  return std::exp(log_a + beta * std::log(omega) - std::pow(omega, gamma));
}

std::vector<double> scalogram_frequencies(std::size_t n_samples, double sample_rate_hz,
                                          int voices_per_octave) {
  if (voices_per_octave < 1) throw ConfigError("voices_per_octave must be at least 1");
  const double duration = double(n_samples) / sample_rate_hz;
  const double f_max = sample_rate_hz / 2.0;
  const double f_min = 2.0 / duration;
  std::vector<double> freqs;
  for (int j = 0;; ++j) {
    const double f = f_max * std::exp2(-double(j) / voices_per_octave);
    if (f < f_min * (1.0 - 1e-12)) break;
    freqs.push_back(f);
  }
  return freqs;
}

TimeFreqMap cwt_scalogram(const Segment& segment, const ScalogramOptions& options) {
  const std::size_t len = segment.samples.size();
  if (len < 32) throw DataError("scalogram needs at least 32 samples, got " + std::to_string(len));
  if (!(options.time_bandwidth > options.gamma) || !(options.gamma > 0.0))
    throw ConfigError("Morse parameters need time_bandwidth > gamma > 0");
  const double fs = segment.sample_rate_hz;
  const double gamma = options.gamma;
  const double beta = options.time_bandwidth / gamma;
  const double omega_peak = std::pow(beta / gamma, 1.0 / gamma);

  std::size_t nfft = 1;
  while (nfft < 2 * len) nfft <<= 1;
  std::vector<cplx> padded(nfft, cplx{});
  for (std::size_t i = 0; i < len; ++i) padded[i] = segment.samples[i];

  Eigen::FFT<double> fft;
  std::vector<cplx> spec;
  fft.fwd(spec, padded);

  const auto freqs = scalogram_frequencies(len, fs, options.voices_per_octave);
  TimeFreqMap map;
  map.kind = MapKind::Scalogram;
  map.values.resize(static_cast<Eigen::Index>(freqs.size()), static_cast<Eigen::Index>(len));
  std::vector<cplx> prod(nfft), coeffs;
  for (std::size_t r = 0; r < freqs.size(); ++r) {
    const double scale = omega_peak / (2.0 * std::numbers::pi * freqs[r] / fs);
    std::fill(prod.begin(), prod.end(), cplx{});
    for (std::size_t m = 1; m <= nfft / 2; ++m) {
      const double omega = 2.0 * std::numbers::pi * double(m) / double(nfft);
      prod[m] = spec[m] * morse_response(scale * omega, gamma, beta);
    }
    fft.inv(coeffs, prod);
    for (std::size_t n = 0; n < len; ++n)
      map.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(n)) = std::abs(coeffs[n]);
  }
  map.row_axis = freqs;
  map.col_axis.resize(len);
  for (std::size_t n = 0; n < len; ++n) map.col_axis[n] = double(n) / fs;
  return map;
}

// ---------------------------------------------------------------------------
// Rendering

Matrix normalize_minmax(const Matrix& m) {
  if (m.size() == 0) throw DataError("cannot normalize an empty map");
  if (!m.allFinite()) throw DataError("map contains non-finite values");
  const double lo = m.minCoeff();
  const double hi = m.maxCoeff();
  if (!(hi > lo)) return Matrix::Zero(m.rows(), m.cols());
  return ((m.array() - lo) / (hi - lo)).matrix();
}

namespace {

// Corner-aligned source coordinate: output index i maps to i * (in - 1) / (out - 1).
double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (out <= 1 || in <= 1) return 0.0;
  return double(i) * double(in - 1) / double(out - 1);
}

}  // namespace

Matrix resize_bilinear(const Matrix& m, std::size_t out_h, std::size_t out_w) {
  const auto in_h = static_cast<std::size_t>(m.rows());
  const auto in_w = static_cast<std::size_t>(m.cols());
  Matrix out(static_cast<Eigen::Index>(out_h), static_cast<Eigen::Index>(out_w));
  for (std::size_t i = 0; i < out_h; ++i) {
    const double sy = source_coord(i, in_h, out_h);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double fy = sy - double(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double sx = source_coord(j, in_w, out_w);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double fx = sx - double(x0);
      auto px = [&](std::size_t y, std::size_t x) {
        return m(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
      };
      const double top = px(y0, x0) + fx * (px(y0, x1) - px(y0, x0));
      const double bottom = px(y1, x0) + fx * (px(y1, x1) - px(y1, x0));
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = top + fy * (bottom - top);
    }
  }
  return out;
}

ImageTensor render_image(const TimeFreqMap& map, std::size_t size) {
  if (size == 0) throw ConfigError("image size must be positive");
  const Matrix gray = normalize_minmax(resize_bilinear(map.values, size, size));
  ImageTensor img;
  img.height = size;
  img.width = size;
  img.channels = 3;
  img.values.resize(size * size * 3);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double v = std::clamp(gray(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)), 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = v;
    }
  return img;
}

ImageTensor resize_image(const ImageTensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.height == out_h && img.width == out_w) return img;
  ImageTensor out;
  out.height = out_h;
  out.width = out_w;
  out.channels = img.channels;
  out.values.resize(out_h * out_w * img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) {
    Matrix plane(static_cast<Eigen::Index>(img.height), static_cast<Eigen::Index>(img.width));
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        plane(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = img.at(y, x, c);
    const Matrix r = resize_bilinear(plane, out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        out.at(y, x, c) = r(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
  }
  return out;
}

TimeFreqMap image_as_map(const ImageTensor& img) {
  TimeFreqMap map;
  map.values.resize(static_cast<Eigen::Index>(img.height), static_cast<Eigen::Index>(img.width));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      map.values(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = img.at(y, x, 0);
  map.row_axis.resize(img.height);
  map.col_axis.resize(img.width);
  for (std::size_t i = 0; i < img.height; ++i) map.row_axis[i] = double(i);
  for (std::size_t i = 0; i < img.width; ++i) map.col_axis[i] = double(i);
  return map;
}

}  // namespace pulsemap
