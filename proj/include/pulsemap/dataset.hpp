#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pulsemap/params.hpp"
#include "pulsemap/signal.hpp"
#include "pulsemap/train.hpp"
#include "pulsemap/transform2d.hpp"

namespace pulsemap {

/// One raw paired recording: a face image and a biosensor segment with ratings.
struct Example {
  ImageTensor face;
  Segment bio;
  std::string subject_id;
  double valence = 5.0;
  double arousal = 5.0;
};

/// Layout: `<root>/<subject>/face_####.ppm`, `bio_####.txt` and `labels.csv`
/// with columns `index,valence,arousal`. Subjects are visited in name order.
void write_dataset(const std::filesystem::path& root, const std::vector<Example>& examples);
std::vector<Example> read_dataset(const std::filesystem::path& root);

std::vector<std::string> subject_ids(const std::vector<Example>& examples);

struct PrepConfig {
  MapKind method = MapKind::Scalogram;
  ScalogramOptions scalogram;
  std::size_t spwvd_window = 31;
  double spwvd_beta = 8.6;
  std::size_t spwvd_bins = 256;
  /// Scale each biosensor segment by its subject's own min/max before the transform.
  bool personal_normalization = true;
  double alpha = 1000.0;
};

/// Map of one biosensor segment, after optional normalization.
TimeFreqMap transform_segment(const Segment& segment, const PrepConfig& prep);

/// Transforms, renders and patchifies every example at the model's image and
/// patch size. Work is spread over `preprocessing_threads()` workers; the
/// output order always matches the input order.
std::vector<PreparedExample> prepare_examples(const std::vector<Example>& examples,
                                              const TransformerConfig& model, const PrepConfig& prep);

/// PULSEMAP_THREADS if set to a positive integer, else the hardware count.
std::size_t preprocessing_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// thrown (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace pulsemap
