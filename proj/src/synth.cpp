#include "pulsemap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <tuple>

#include "pulsemap/error.hpp"
#include "pulsemap/rng.hpp"

namespace pulsemap {

void SynthSpec::validate() const {
  if (n_subjects < 1) throw ConfigError("synth needs at least one subject");
  if (per_subject < 1) throw ConfigError("synth needs at least one example per subject");
  if (!(sample_rate_hz > 0.0)) throw ConfigError("synth sample rate must be positive");
  if (!(duration_s > 0.0)) throw ConfigError("synth duration must be positive");
  if (image_size < 4) throw ConfigError("synth image_size must be at least 4");
  if (texture_period < 2) throw ConfigError("synth texture_period must be at least 2");
  if (!(noise >= 0.0) || !(pixel_noise >= 0.0) || !(subject_spread >= 0.0)) throw ConfigError("synth noise levels must be non-negative");
}

double synth_pulse_rate(double arousal_level) { return 1.0 + arousal_level; }

namespace {

constexpr double kPi = std::numbers::pi;

double rating_for(int cls, ClassScheme scheme, Rng& rng) {
  if (scheme == ClassScheme::Binary)
    return cls == 0 ? double(1 + rng.below(4)) : double(6 + rng.below(4));
  return double(1 + 3 * cls + int(rng.below(3)));
}

double level_of(double rating, ClassScheme scheme) {
  return double(class_of(rating, scheme)) / double(n_classes(scheme) - 1);
}

Segment pulse_train(double rate, double width_s, double amplitude, double phase, double noise,
                    const SynthSpec& spec, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
  Segment seg;
  seg.sample_rate_hz = spec.sample_rate_hz;
  seg.duration_s = double(n) / spec.sample_rate_hz;
  seg.samples.assign(n, 0.0);
  const double period = 1.0 / rate;
  for (double c = phase * period - period; c < seg.duration_s + period; c += period) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (double(i) / spec.sample_rate_hz - c) / width_s;
      if (std::abs(d) < 6.0) seg.samples[i] += amplitude * std::exp(-0.5 * d * d);
    }
  }
  for (double& v : seg.samples) v += noise * amplitude * rng.normal();
  return seg;
}

// Plane wave with an integer number of cycles (kx, ky) per `period` pixels,
// so every period x period tile of the image holds the same pattern.
ImageTensor grating(int kx, int ky, std::size_t period, double contrast, double phase, double noise,
                    std::size_t size, Rng& rng) {
  ImageTensor img;
  img.height = img.width = size;
  img.values.assign(size * size * 3, 0.0);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (double(kx) * double(x) + double(ky) * double(y)) / double(period);
      const double base = 0.5 + 0.5 * contrast * std::sin(2.0 * kPi * (u + phase));
      for (std::size_t c = 0; c < 3; ++c) {
        const double tint = 1.0 - 0.1 * double(c);
        img.at(y, x, c) = std::clamp(base * tint + noise * rng.normal(), 0.0, 1.0);
      }
    }
  return img;
}

}  // namespace

std::vector<Example> synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int nc = n_classes(spec.scheme);
  std::vector<Example> out;
  for (int s = 0; s < spec.n_subjects; ++s) {
    char id[32];
    std::snprintf(id, sizeof id, "s%02d", s + 1);
    Rng subject_rng(derive_seed(seed, {0x5b, std::uint64_t(s)}));
    const double rate_offset = spec.subject_spread * (2.0 * subject_rng.uniform() - 1.0);
    for (int e = 0; e < spec.per_subject; ++e) {
      Rng rng(derive_seed(seed, {0xe8, std::uint64_t(s), std::uint64_t(e)}));
      Example ex;
      ex.subject_id = id;
      ex.valence = rating_for(e % nc, spec.scheme, rng);
      ex.arousal = rating_for((e / nc) % nc, spec.scheme, rng);
      const double v = level_of(ex.valence, spec.scheme);
      const double a = level_of(ex.arousal, spec.scheme);
      const double latent = rng.uniform();

      const double rate = synth_pulse_rate(a) + rate_offset;
      ex.bio = pulse_train(rate, 0.03 + 0.03 * v, 0.6 + 0.8 * v, latent, spec.noise, spec, rng);
      ex.bio.source_index = out.size();

      // Valence turns the wave from vertical stripes towards horizontal ones;
      // arousal multiplies its frequency.
      const int mult = 1 + class_of(ex.arousal, spec.scheme);
      const int vc = class_of(ex.valence, spec.scheme);
      const int kx = vc == nc - 1 ? 0 : mult;
      const int ky = vc == 0 ? 0 : mult;
      ex.face = grating(kx, ky, spec.texture_period, 0.5 + 0.4 * a, latent, spec.pixel_noise,
                        spec.image_size, rng);
      out.push_back(std::move(ex));
    }
  }
  if (spec.shuffle_labels) {
    std::vector<std::pair<double, double>> ratings;
    for (const auto& ex : out) ratings.emplace_back(ex.valence, ex.arousal);
    Rng rng(derive_seed(seed, {0x5f1e}));
    rng.shuffle(ratings.begin(), ratings.end());
    for (std::size_t i = 0; i < out.size(); ++i) std::tie(out[i].valence, out[i].arousal) = ratings[i];
  }
  return out;
}

}  // namespace pulsemap
