#include "pulsemap/signal.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "pulsemap/error.hpp"

namespace pulsemap {

const char* modality_name(Modality m) { return m == Modality::ECG ? "ECG" : "PPG"; }

Modality parse_modality(const std::string& s) {
  if (s == "ECG" || s == "ecg") return Modality::ECG;
  if (s == "PPG" || s == "ppg") return Modality::PPG;
  throw ParseError("unknown modality '" + s + "'");
}

void Signal::validate() const {
  if (samples.empty()) throw DataError("signal has no samples");
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
    throw DataError("sample rate must be positive");
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!std::isfinite(samples[i]))
      throw DataError("non-finite sample at index " + std::to_string(i));
}

void NormalizationParams::validate() const {
  if (!(person_max > person_min))
    throw DataError("personal normalization needs person_max > person_min");
  if (!(alpha > 0.0)) throw DataError("normalization alpha must be positive");
}

// ---------------------------------------------------------------------------
// File formats

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& tok, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": not a number: '" + tok + "'");
  }
  if (used != tok.size())
    throw ParseError("line " + std::to_string(line_no) + ": trailing garbage in '" + tok + "'");
  return v;
}

}  // namespace

Signal parse_headered_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty signal file");
  std::istringstream header(trim(line));
  std::string hash, key;
  header >> hash >> key;
  if (hash != "#" || key != "fs") throw ParseError("header must start with '# fs'");
  std::string fs_tok;
  if (!(header >> fs_tok)) throw ParseError("header is missing the sample rate");
  Signal sig;
  sig.sample_rate_hz = parse_number(fs_tok, 1);
  if (!(sig.sample_rate_hz > 0.0) || !std::isfinite(sig.sample_rate_hz))
    throw ParseError("sample rate must be positive, got " + fs_tok);
  std::string mod_tok;
  if (header >> mod_tok) sig.modality = parse_modality(mod_tok);
  std::string subject;
  if (header >> subject) sig.subject_id = subject;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty()) continue;
    double v = parse_number(t, line_no);
    if (!std::isfinite(v)) throw DataError("non-finite sample on line " + std::to_string(line_no));
    sig.samples.push_back(v);
  }
  if (sig.samples.empty()) throw DataError("signal file has no samples");
  return sig;
}

Signal parse_two_column_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<double> times;
  Signal sig;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty()) continue;
    auto comma = t.find(',');
    if (comma == std::string::npos)
      throw ParseError("line " + std::to_string(line_no) + ": expected 'time_s,value'");
    auto a = trim(t.substr(0, comma));
    auto b = trim(t.substr(comma + 1));
    if (line_no == 1 && a == "time_s") continue;
    double ts = parse_number(a, line_no);
    double v = parse_number(b, line_no);
    if (!std::isfinite(ts) || !std::isfinite(v))
      throw DataError("non-finite value on line " + std::to_string(line_no));
    times.push_back(ts);
    sig.samples.push_back(v);
  }
  if (times.size() < 2) throw DataError("two-column CSV needs at least two rows");
  const double period = (times.back() - times.front()) / double(times.size() - 1);
  if (!(period > 0.0)) throw DataError("timestamps must increase");
  for (std::size_t i = 1; i < times.size(); ++i) {
    double gap = times[i] - times[i - 1];
    if (gap < 0.5 * period || gap > 1.5 * period)
      throw DataError("nonuniform sampling between rows " + std::to_string(i) + " and " +
                      std::to_string(i + 1));
  }
  sig.sample_rate_hz = 1.0 / period;
  sig.modality = Modality::PPG;
  return sig;
}

Signal load_signal(const std::filesystem::path& path, SignalFormat format) {
  auto text = read_file(path);
  Signal sig = format == SignalFormat::HeaderedText ? parse_headered_text(text)
                                                    : parse_two_column_csv(text);
  if (sig.subject_id.empty()) sig.subject_id = path.stem().string();
  return sig;
}

void save_signal(const std::filesystem::path& path, const Signal& signal) {
  signal.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", signal.sample_rate_hz);
  out << "# fs " << buf << ' ' << modality_name(signal.modality);
  if (!signal.subject_id.empty()) out << ' ' << signal.subject_id;
  out << '\n';
  for (double v : signal.samples) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Filtering: second-order sections run forward then backward.

namespace {

struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 3> a{1.0, 0.0, 0.0};  // a[0] == 1
};

using Sos = std::vector<Biquad>;

Biquad rbj_notch(double f0, double q, double fs) {
  const double w0 = 2.0 * std::numbers::pi * f0 / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b = {1.0 / a0, -2.0 * c / a0, 1.0 / a0};
  s.a = {1.0, -2.0 * c / a0, (1.0 - alpha) / a0};
  return s;
}

// Bilinear transform of n2 s^2 + n1 s + n0 over d2 s^2 + d1 s + d0 with s = k (1 - z^-1) / (1 + z^-1).
Biquad bilinear(std::array<double, 3> n, std::array<double, 3> d, double k) {
  const double k2 = k * k;
  auto map = [&](const std::array<double, 3>& p) {
    return std::array<double, 3>{p[2] * k2 + p[1] * k + p[0], 2.0 * (p[0] - p[2] * k2),
                                 p[2] * k2 - p[1] * k + p[0]};
  };
  auto bn = map(n);
  auto ad = map(d);
  Biquad s;
  for (int i = 0; i < 3; ++i) {
    s.b[i] = bn[i] / ad[0];
    s.a[i] = ad[i] / ad[0];
  }
  return s;
}

Sos butterworth(int order, double fc, double fs, bool highpass) {
  const double k = 2.0 * fs;
  const double wc = k * std::tan(std::numbers::pi * fc / fs);
  Sos sos;
  for (int i = 0; i < order / 2; ++i) {
    // Conjugate pole pair on the unit circle scaled by wc.
    const double theta = std::numbers::pi * (2.0 * i + order + 1) / (2.0 * order);
    const double re = std::cos(theta);
    std::array<double, 3> den{wc * wc, -2.0 * re * wc, 1.0};
    std::array<double, 3> num = highpass ? std::array<double, 3>{0.0, 0.0, 1.0}
                                         : std::array<double, 3>{wc * wc, 0.0, 0.0};
    sos.push_back(bilinear(num, den, k));
  }
  if (order % 2 == 1) {
    // Real pole: wc / (s + wc) or s / (s + wc), mapped with a (1 + z^-1) multiplier.
    const double a0 = k + wc;
    Biquad s;
    s.a = {1.0, (wc - k) / a0, 0.0};
    if (highpass)
      s.b = {k / a0, -k / a0, 0.0};
    else
      s.b = {wc / a0, wc / a0, 0.0};
    sos.push_back(s);
  }
  return sos;
}

// Steady-state transposed direct-form II state for a unit step input.
std::vector<std::array<double, 2>> sos_step_state(const Sos& sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double x = 1.0;
  for (std::size_t i = 0; i < sos.size(); ++i) {
    const auto& s = sos[i];
    const double gain = (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
    const double y = gain * x;
    const double z2 = s.b[2] * x - s.a[2] * y;
    const double z1 = s.b[1] * x - s.a[1] * y + z2;
    zi[i] = {z1, z2};
    x = y;
  }
  return zi;
}

void sos_run(const Sos& sos, std::vector<double>& x, double x0) {
  auto zi = sos_step_state(sos);
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto& q = sos[s];
    double z1 = zi[s][0] * x0;
    double z2 = zi[s][1] * x0;
    for (double& v : x) {
      const double in = v;
      const double out = q.b[0] * in + z1;
      z1 = q.b[1] * in - q.a[1] * out + z2;
      z2 = q.b[2] * in - q.a[2] * out;
      v = out;
    }
    x0 *= (q.b[0] + q.b[1] + q.b[2]) / (q.a[0] + q.a[1] + q.a[2]);
  }
}

// Zero-phase filtering with odd-extension padding and steady-state initial
// conditions, so a constant input passes through a DC-blocking filter as zero.
std::vector<double> filtfilt(const Sos& sos, const std::vector<double>& in) {
  const std::size_t n = in.size();
  std::size_t pad = 3 * (2 * sos.size() + 1);
  if (n <= 1) return in;
  pad = std::min(pad, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * in[0] - in[i]);
  ext.insert(ext.end(), in.begin(), in.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * in[n - 1] - in[n - 1 - i]);

  sos_run(sos, ext, ext.front());
  std::reverse(ext.begin(), ext.end());
  sos_run(sos, ext, ext.front());
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::vector<double> moving_average(const std::vector<double>& x, std::size_t window) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  const std::size_t half = window / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t lo = i >= half ? i - half : 0;
    std::size_t hi = std::min(n, i + half + 1);
    out[i] = (prefix[hi] - prefix[lo]) / double(hi - lo);
  }
  return out;
}

}  // namespace

FilterResult apply_filter(const Signal& signal, const FilterSpec& spec) {
  signal.validate();
  if (!(spec.cutoff_hz > 0.0)) throw DataError("filter cutoff must be positive");
  const double nyquist = signal.sample_rate_hz / 2.0;
  FilterResult result{signal, false, {}};

  if (spec.kind == FilterKind::SmoothSubtract) {
    auto window = static_cast<std::size_t>(std::lround(signal.sample_rate_hz / spec.cutoff_hz));
    window = std::max<std::size_t>(window, 1);
    auto smooth = moving_average(signal.samples, window);
    for (std::size_t i = 0; i < smooth.size(); ++i) result.signal.samples[i] -= smooth[i];
    return result;
  }

  if (spec.cutoff_hz >= nyquist) {
    result.skipped = true;
    std::ostringstream msg;
    msg << "cutoff " << spec.cutoff_hz << " Hz is at or above Nyquist (" << nyquist
        << " Hz); filter not applied";
    result.warning = msg.str();
    return result;
  }

  Sos sos;
  switch (spec.kind) {
    case FilterKind::Notch:
      if (!(spec.q_or_order > 0.0)) throw DataError("notch Q must be positive");
      sos.push_back(rbj_notch(spec.cutoff_hz, spec.q_or_order, signal.sample_rate_hz));
      break;
    case FilterKind::Highpass:
    case FilterKind::Lowpass: {
      const int order = static_cast<int>(std::lround(spec.q_or_order));
      if (order < 1) throw DataError("filter order must be at least 1");
      sos = butterworth(order, spec.cutoff_hz, signal.sample_rate_hz,
                        spec.kind == FilterKind::Highpass);
      break;
    }
    case FilterKind::SmoothSubtract: break;
  }
  result.signal.samples = filtfilt(sos, signal.samples);
  return result;
}

// ---------------------------------------------------------------------------

Signal detrend_polynomial(const Signal& signal, int order) {
  signal.validate();
  if (order < 1) throw DataError("detrend order must be at least 1");
  const auto n = static_cast<Eigen::Index>(signal.samples.size());
  if (n <= order) throw DataError("signal too short for a polynomial of order " + std::to_string(order));

  Eigen::MatrixXd basis(n, order + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : -1.0 + 2.0 * double(i) / double(n - 1);
    basis(i, 0) = 1.0;
    basis(i, 1) = t;
    for (int k = 2; k <= order; ++k)
      basis(i, k) = ((2.0 * k - 1.0) * t * basis(i, k - 1) - (k - 1.0) * basis(i, k - 2)) / k;
  }
  Eigen::Map<const Eigen::VectorXd> y(signal.samples.data(), n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
  Eigen::VectorXd coef = qr.solve(y);
  Eigen::VectorXd resid = y - basis * coef;

  Signal out = signal;
  for (Eigen::Index i = 0; i < n; ++i) out.samples[i] = resid(i);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double prominence_at(const std::vector<double>& x, std::size_t peak) {
  const double h = x[peak];
  double left_min = h;
  for (std::size_t i = peak; i-- > 0;) {
    if (x[i] > h) break;
    left_min = std::min(left_min, x[i]);
  }
  double right_min = h;
  for (std::size_t i = peak + 1; i < x.size(); ++i) {
    if (x[i] > h) break;
    right_min = std::min(right_min, x[i]);
  }
  return h - std::max(left_min, right_min);
}

}  // namespace

std::vector<std::size_t> detect_peaks(const Signal& signal, double min_distance_s,
                                      double min_prominence) {
  signal.validate();
  const auto& x = signal.samples;
  const double dist_f = min_distance_s * signal.sample_rate_hz;
  if (dist_f < 1.0) throw DataError("min_distance must span at least one sample");
  const auto distance = static_cast<std::size_t>(std::ceil(dist_f - 1e-9));

  // Candidates: strict rise on the left, no rise on the right.
  std::vector<std::size_t> cand;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if (!(x[i - 1] < x[i] && x[i] >= x[i + 1])) continue;
    const double prom = prominence_at(x, i);
    if (prom > 0.0 && prom >= min_prominence) cand.push_back(i);
  }

  // Keep the tallest peaks first, discarding neighbours closer than `distance`.
  std::vector<std::size_t> order(cand.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[cand[a]] > x[cand[b]]; });
  std::vector<bool> keep(cand.size(), true);
  for (std::size_t oi : order) {
    if (!keep[oi]) continue;
    for (std::size_t j = oi; j-- > 0 && cand[oi] - cand[j] < distance;) keep[j] = false;
    for (std::size_t j = oi + 1; j < cand.size() && cand[j] - cand[oi] < distance; ++j)
      keep[j] = false;
  }
  std::vector<std::size_t> peaks;
  for (std::size_t i = 0; i < cand.size(); ++i)
    if (keep[i]) peaks.push_back(cand[i]);
  return peaks;
}

double default_prominence(const Signal& signal) {
  signal.validate();
  auto v = signal.samples;
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * double(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
  };
  return 0.3 * (quantile(0.75) - quantile(0.25));
}

// ---------------------------------------------------------------------------

std::size_t window_samples(double duration_s, double sample_rate_hz) {
  auto n = static_cast<std::size_t>(std::floor(duration_s * sample_rate_hz + 1e-9));
  return n - n % 2;
}

std::vector<Segment> segment_fixed(const Signal& signal, double duration_s) {
  signal.validate();
  if (!(duration_s > 0.0)) throw DataError("segment duration must be positive");
  const std::size_t w = window_samples(duration_s, signal.sample_rate_hz);
  std::vector<Segment> out;
  if (w == 0) return out;
  for (std::size_t start = 0; start + w <= signal.samples.size(); start += w) {
    Segment seg;
    seg.samples.assign(signal.samples.begin() + static_cast<std::ptrdiff_t>(start),
                       signal.samples.begin() + static_cast<std::ptrdiff_t>(start + w));
    seg.sample_rate_hz = signal.sample_rate_hz;
    seg.source_index = start;
    seg.duration_s = double(w) / signal.sample_rate_hz;
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<Segment> segment_pulses(const Signal& signal, const std::vector<std::size_t>& peaks,
                                    double duration_s) {
  signal.validate();
  const std::size_t w = window_samples(duration_s, signal.sample_rate_hz);
  if (w < 2) throw DataError("pulse window must span at least two samples");
  const std::size_t half = w / 2;
  std::vector<Segment> out;
  for (std::size_t p : peaks) {
    if (p < half || p + half > signal.samples.size()) continue;
    Segment seg;
    seg.samples.assign(signal.samples.begin() + static_cast<std::ptrdiff_t>(p - half),
                       signal.samples.begin() + static_cast<std::ptrdiff_t>(p + half));
    seg.sample_rate_hz = signal.sample_rate_hz;
    seg.source_index = p - half;
    seg.duration_s = double(w) / signal.sample_rate_hz;
    out.push_back(std::move(seg));
  }
  return out;
}

Segment normalize_personal(const Segment& segment, const NormalizationParams& params) {
  params.validate();
  Segment out = segment;
  const double span = params.person_max - params.person_min;
  for (double& v : out.samples) v = (v - params.person_min) / span * params.alpha;
  return out;
}

NormalizationParams personal_range(const std::vector<Segment>& segments, double alpha) {
  NormalizationParams p{std::numeric_limits<double>::infinity(),
                        -std::numeric_limits<double>::infinity(), alpha};
  for (const auto& s : segments)
    for (double v : s.samples) {
      p.person_min = std::min(p.person_min, v);
      p.person_max = std::max(p.person_max, v);
    }
  p.validate();
  return p;
}

}  // namespace pulsemap
