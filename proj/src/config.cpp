#include "pulsemap/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "pulsemap/error.hpp"

namespace pulsemap {

using nlohmann::json;

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (folds < 1) throw ConfigError("folds must be at least 1");
  if (model.n_classes != n_classes(scheme))
    throw ConfigError("n_classes=" + std::to_string(model.n_classes) + " does not match the " +
                      scheme_name(scheme) + " scheme");
  if (!(prep.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (prep.scalogram.voices_per_octave < 1) throw ConfigError("scalogram_voices must be at least 1");
}

namespace {

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("'" + key + "' must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("'" + key + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
    } else {
      if (!v.is_string()) throw ConfigError("'" + key + "' must be a string");
    }
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("'" + key + "': " + e.what());
  }
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

template <typename T, typename F>
Setter field(F pick) {
  return [pick](RunConfig& c, const json& v, const std::string& key) { pick(c) = as<T>(v, key); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"d_model", field<int>([](RunConfig& c) -> int& { return c.model.d_model; })},
      {"enc_layers", field<int>([](RunConfig& c) -> int& { return c.model.enc_layers; })},
      {"dec_layers", field<int>([](RunConfig& c) -> int& { return c.model.dec_layers; })},
      {"d_decoder", field<int>([](RunConfig& c) -> int& { return c.model.d_decoder; })},
      {"n_heads_enc", field<int>([](RunConfig& c) -> int& { return c.model.n_heads_enc; })},
      {"n_heads_dec", field<int>([](RunConfig& c) -> int& { return c.model.n_heads_dec; })},
      {"mlp_ratio", field<double>([](RunConfig& c) -> double& { return c.model.mlp_ratio; })},
      {"image_size", field<int>([](RunConfig& c) -> int& { return c.model.image_size; })},
      {"patch_size", field<int>([](RunConfig& c) -> int& { return c.model.patch_size; })},
      {"mask_ratio", field<double>([](RunConfig& c) -> double& { return c.model.mask_ratio; })},
      {"lambda_m", field<double>([](RunConfig& c) -> double& { return c.model.lambda_m; })},
      {"lambda_c", field<double>([](RunConfig& c) -> double& { return c.model.lambda_c; })},
      {"head_hidden", field<int>([](RunConfig& c) -> int& { return c.model.head_hidden; })},
      {"strict_eq5", field<bool>([](RunConfig& c) -> bool& { return c.model.strict_eq5; })},
      {"layer_norm_eps", field<double>([](RunConfig& c) -> double& { return c.model.layer_norm_eps; })},
      {"batch_size", field<int>([](RunConfig& c) -> int& { return c.train.batch_size; })},
      {"base_lr", field<double>([](RunConfig& c) -> double& { return c.train.base_lr; })},
      {"finetune_lr", field<double>([](RunConfig& c) -> double& { return c.train.finetune_lr; })},
      {"weight_decay", field<double>([](RunConfig& c) -> double& { return c.train.weight_decay; })},
      {"lr_floor_fraction",
       field<double>([](RunConfig& c) -> double& { return c.train.lr_floor_fraction; })},
      {"total_steps", field<std::int64_t>([](RunConfig& c) -> std::int64_t& { return c.train.total_steps; })},
      {"seed", field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.train.seed; })},
      {"beta1", field<double>([](RunConfig& c) -> double& { return c.train.beta1; })},
      {"beta2", field<double>([](RunConfig& c) -> double& { return c.train.beta2; })},
      {"epsilon", field<double>([](RunConfig& c) -> double& { return c.train.epsilon; })},
      {"finetune_epochs", field<int>([](RunConfig& c) -> int& { return c.train.finetune_epochs; })},
      {"freeze_encoder", field<bool>([](RunConfig& c) -> bool& { return c.train.freeze_encoder; })},
      {"checkpoint_every",
       field<std::int64_t>([](RunConfig& c) -> std::int64_t& { return c.train.checkpoint_every; })},
      {"folds", field<int>([](RunConfig& c) -> int& { return c.folds; })},
      {"personal_normalization",
       field<bool>([](RunConfig& c) -> bool& { return c.prep.personal_normalization; })},
      {"alpha", field<double>([](RunConfig& c) -> double& { return c.prep.alpha; })},
      {"scalogram_voices",
       field<int>([](RunConfig& c) -> int& { return c.prep.scalogram.voices_per_octave; })},
      {"spwvd_window", field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.prep.spwvd_window; })},
      {"spwvd_bins", field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.prep.spwvd_bins; })},
      {"method",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.prep.method = parse_map_kind(as<std::string>(v, k));
       }},
      {"init",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.model.init = parse_init_scheme(as<std::string>(v, k));
       }},
      {"scheme",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.scheme = parse_scheme(as<std::string>(v, k));
         c.model.n_classes = n_classes(c.scheme);
       }},
  };
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  if (j.contains("preset")) {
    const auto preset = as<std::string>(j["preset"], "preset");
    if (preset == "desk")
      c.model = TransformerConfig::desk();
    else if (preset != "full")
      throw ConfigError("unknown preset '" + preset + "' (expected full|desk)");
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(c, value, key);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& c) {
  json j = {
      {"d_model", c.model.d_model},
      {"enc_layers", c.model.enc_layers},
      {"dec_layers", c.model.dec_layers},
      {"d_decoder", c.model.d_decoder},
      {"n_heads_enc", c.model.n_heads_enc},
      {"n_heads_dec", c.model.n_heads_dec},
      {"mlp_ratio", c.model.mlp_ratio},
      {"image_size", c.model.image_size},
      {"patch_size", c.model.patch_size},
      {"mask_ratio", c.model.mask_ratio},
      {"lambda_m", c.model.lambda_m},
      {"lambda_c", c.model.lambda_c},
      {"head_hidden", c.model.head_hidden},
      {"strict_eq5", c.model.strict_eq5},
      {"layer_norm_eps", c.model.layer_norm_eps},
      {"init", init_scheme_name(c.model.init)},
      {"batch_size", c.train.batch_size},
      {"base_lr", c.train.base_lr},
      {"finetune_lr", c.train.finetune_lr},
      {"weight_decay", c.train.weight_decay},
      {"lr_floor_fraction", c.train.lr_floor_fraction},
      {"total_steps", c.train.total_steps},
      {"seed", c.train.seed},
      {"beta1", c.train.beta1},
      {"beta2", c.train.beta2},
      {"epsilon", c.train.epsilon},
      {"finetune_epochs", c.train.finetune_epochs},
      {"freeze_encoder", c.train.freeze_encoder},
      {"checkpoint_every", c.train.checkpoint_every},
      {"folds", c.folds},
      {"personal_normalization", c.prep.personal_normalization},
      {"alpha", c.prep.alpha},
      {"scalogram_voices", c.prep.scalogram.voices_per_octave},
      {"spwvd_window", c.prep.spwvd_window},
      {"spwvd_bins", c.prep.spwvd_bins},
      {"method", map_kind_name(c.prep.method)},
      {"scheme", scheme_name(c.scheme)},
  };
  return j.dump(2) + "\n";
}

}  // namespace pulsemap
