#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace pulsemap {

enum class Modality { ECG, PPG };

const char* modality_name(Modality m);
Modality parse_modality(const std::string& s);

/// Uniformly sampled biosignal trace.
struct Signal {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;
  std::string subject_id;
  Modality modality = Modality::ECG;

  /// Throws DataError when the invariants (non-empty, fs > 0, finite) fail.
  void validate() const;
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

enum class FilterKind { Notch, Highpass, Lowpass, SmoothSubtract };

/// For Notch `q_or_order` is the quality factor; for Highpass/Lowpass it is the
/// Butterworth order. SmoothSubtract uses a centered moving average whose
/// length is 1/cutoff_hz seconds (4 Hz -> 0.25 s).
struct FilterSpec {
  FilterKind kind = FilterKind::Highpass;
  double cutoff_hz = 1.0;
  double q_or_order = 4.0;

  static FilterSpec notch(double hz, double q = 30.0) { return {FilterKind::Notch, hz, q}; }
  static FilterSpec highpass(double hz, int order = 4) { return {FilterKind::Highpass, hz, double(order)}; }
  static FilterSpec lowpass(double hz, int order = 4) { return {FilterKind::Lowpass, hz, double(order)}; }
  static FilterSpec smooth_subtract(double window_s = 0.25) {
    return {FilterKind::SmoothSubtract, 1.0 / window_s, 1.0};
  }
};

/// A filter whose corner lies at or above Nyquist is not applied; the caller
/// gets the input back with `skipped` set and a human-readable warning.
struct FilterResult {
  Signal signal;
  bool skipped = false;
  std::string warning;
};

struct Segment {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;
  std::size_t source_index = 0;
  double duration_s = 0.0;
};

struct NormalizationParams {
  double person_min = 0.0;
  double person_max = 1.0;
  double alpha = 1000.0;

  void validate() const;
};

enum class SignalFormat { HeaderedText, TwoColumnCSV };

Signal load_signal(const std::filesystem::path& path, SignalFormat format);
Signal parse_headered_text(const std::string& text);
Signal parse_two_column_csv(const std::string& text);
void save_signal(const std::filesystem::path& path, const Signal& signal);

FilterResult apply_filter(const Signal& signal, const FilterSpec& spec);

/// Subtracts the least-squares polynomial of the given order. The fit runs on
/// time rescaled to [-1, 1] in a Legendre basis, so order 50 stays well posed.
Signal detrend_polynomial(const Signal& signal, int order);

std::vector<std::size_t> detect_peaks(const Signal& signal, double min_distance_s,
                                      double min_prominence);
/// 0.3 x interquartile range of the samples.
double default_prominence(const Signal& signal);

/// Number of samples a window of `duration_s` spans: floor(duration * fs),
/// dropped to the next even count.
std::size_t window_samples(double duration_s, double sample_rate_hz);

std::vector<Segment> segment_fixed(const Signal& signal, double duration_s);
std::vector<Segment> segment_pulses(const Signal& signal, const std::vector<std::size_t>& peaks,
                                    double duration_s);

Segment normalize_personal(const Segment& segment, const NormalizationParams& params);
/// Min/max over all samples of the given segments.
NormalizationParams personal_range(const std::vector<Segment>& segments, double alpha = 1000.0);

}  // namespace pulsemap
