#pragma once

#include <cstddef>
#include <vector>

#include "pulsemap/signal.hpp"
#include "pulsemap/tensor.hpp"

namespace pulsemap {

enum class MapKind { Toeplitz, SPWVD, Scalogram };

const char* map_kind_name(MapKind k);
MapKind parse_map_kind(const std::string& s);

/// A 2D representation of a segment. Rows are lag (Toeplitz) or frequency
/// (SPWVD ascending from 0 Hz, Scalogram descending from Nyquist); columns are
/// time.
struct TimeFreqMap {
  Matrix values;
  std::vector<double> row_axis;
  std::vector<double> col_axis;
  MapKind kind = MapKind::Toeplitz;
};

/// Kaiser time and lag smoothing windows, each normalized to unit sum.
struct SmoothingWindows {
  std::vector<double> time_window;
  std::vector<double> freq_window;
  double beta = 8.6;

  static SmoothingWindows kaiser(std::size_t length = 31, double beta = 8.6);
};

std::vector<double> kaiser_window(std::size_t length, double beta);

/// Interleaved HWC image with values in [0, 1].
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> values;

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return values[(y * width + x) * channels + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return values[(y * width + x) * channels + c];
  }
};

inline constexpr std::size_t kImageSize = 224;

TimeFreqMap toeplitz_map(const Segment& segment);

TimeFreqMap spwvd_map(const Segment& segment, const SmoothingWindows& windows,
                      std::size_t n_freq_bins = 256);

/// FFT-based analytic signal (one-sided spectrum doubling).
std::vector<std::complex<double>> analytic_signal(const std::vector<double>& x);

struct ScalogramOptions {
  double gamma = 3.0;
  double time_bandwidth = 60.0;
  int voices_per_octave = 10;
};

/// Frequencies (Hz) of the scalogram rows: fs/2 * 2^(-j/voices) down to 2/duration.
std::vector<double> scalogram_frequencies(std::size_t n_samples, double sample_rate_hz,
                                          int voices_per_octave);

/// Frequency response of the analytic Morse wavelet, peak-normalized to 2.
double morse_response(double omega, double gamma, double beta);

TimeFreqMap cwt_scalogram(const Segment& segment, const ScalogramOptions& options = {});

/// Corner-aligned bilinear resize to size x size, then per-image min-max
/// normalization, grayscale replicated over three channels.
ImageTensor render_image(const TimeFreqMap& map, std::size_t size = kImageSize);

/// Min-max normalized copy of a matrix (constant input -> zeros).
Matrix normalize_minmax(const Matrix& m);

/// Corner-aligned bilinear resize of a single-channel matrix.
Matrix resize_bilinear(const Matrix& m, std::size_t out_h, std::size_t out_w);

/// Resizes each channel of an image.
ImageTensor resize_image(const ImageTensor& img, std::size_t out_h, std::size_t out_w);

/// Reinterprets channel 0 of an image as a map (used to re-render an image).
TimeFreqMap image_as_map(const ImageTensor& img);

}  // namespace pulsemap
