#pragma once

#include <cstdint>
#include <vector>

#include "pulsemap/dataset.hpp"
#include "pulsemap/train.hpp"

namespace pulsemap {

struct SynthSpec {
  int n_subjects = 4;
  int per_subject = 8;
  ClassScheme scheme = ClassScheme::Binary;
  double sample_rate_hz = 16.0;
  double duration_s = 4.0;
  std::size_t image_size = 32;
  double noise = 0.02;            // pulse-train noise relative to amplitude
  double pixel_noise = 0.01;      // face image noise
  double subject_spread = 0.0;    // per-subject pulse-rate offset, Hz
  std::size_t texture_period = 8; // face pattern repeats every this many pixels
  /// Permute the (valence, arousal) ratings across examples after the
  /// signals were generated, leaving no usable label signal.
  bool shuffle_labels = false;

  void validate() const;
};

/// Pulse rate (Hz) for a normalized arousal level in [0, 1].
double synth_pulse_rate(double arousal_level);

/// Ratings are balanced per subject over both axes. Biosensor: Gaussian pulse
/// train whose rate follows arousal and whose width and amplitude follow
/// valence. Face: sinusoidal grating whose orientation follows valence and
/// whose spatial frequency and contrast follow arousal. A per-example latent
/// phase is shared by the two streams of a pair.
std::vector<Example> synth_generate(const SynthSpec& spec, std::uint64_t seed);

}  // namespace pulsemap
