#pragma once

#include <filesystem>
#include <string>

#include "pulsemap/dataset.hpp"
#include "pulsemap/params.hpp"
#include "pulsemap/train.hpp"

namespace pulsemap {

/// Everything a CLI run needs besides paths. Missing keys keep these defaults,
/// which are the full-size model and the published training recipe.
struct RunConfig {
  TransformerConfig model;
  TrainConfig train;
  PrepConfig prep;
  ClassScheme scheme = ClassScheme::Binary;
  int folds = 10;

  void validate() const;
};

/// Flat JSON object. The optional key "preset" ("full" or "desk") picks the
/// model base before the other keys apply. Unknown keys are rejected.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

std::string config_to_json(const RunConfig& config);

}  // namespace pulsemap
