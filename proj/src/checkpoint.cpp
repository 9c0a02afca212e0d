#include "pulsemap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "pulsemap/error.hpp"

namespace pulsemap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

void write_tensors(const fs::path& file, const ParamStore& store) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  for (const auto& e : store.entries())
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      const float f = static_cast<float>(e.value.data()[i]);
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  if (!out) throw DataError("write failed for " + file.string());
}

void read_tensors(const fs::path& file, ParamStore& store) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + file.string());
  for (auto& e : store.entries())
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      std::uint32_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
        throw ConfigError(file.string() + " is shorter than its manifest");
      e.value.data()[i] = double(std::bit_cast<float>(to_le(bits)));
    }
  if (in.peek() != std::char_traits<char>::eof())
    throw ConfigError(file.string() + " is longer than its manifest");
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParamStore& params, const AdamState* optimizer,
                     std::int64_t step) {
  fs::create_directories(dir);
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : params.entries()) {
    manifest.push_back({{"name", e.name},
                        {"shape", {e.value.rows(), e.value.cols()}},
                        {"dtype", "f32"},
                        {"byte_offset", offset}});
    offset += static_cast<std::uint64_t>(e.value.size()) * 4;
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(1) << '\n';
  write_tensors(dir / "weights.bin", params);
  json state = {{"step", step}, {"has_optimizer", optimizer != nullptr}};
  if (optimizer) {
    write_tensors(dir / "adam_m.bin", optimizer->m);
    write_tensors(dir / "adam_v.bin", optimizer->v);
    state["adam_step"] = optimizer->step;
  }
  std::ofstream(dir / "state.json") << state.dump(1) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir, const TransformerConfig& config) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ConfigError("checkpoint at " + dir.string() + " has no manifest.json");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest.json: " + std::string(e.what()));
  }
  if (!manifest.is_array()) throw ConfigError("manifest.json must be an array");

  Checkpoint ck;
  std::uint64_t offset = 0;
  try {
    for (const auto& item : manifest) {
      const auto name = item.at("name").get<std::string>();
      const auto shape = item.at("shape").get<std::vector<std::int64_t>>();
      if (item.at("dtype").get<std::string>() != "f32")
        throw ConfigError("tensor '" + name + "' is not f32");
      if (shape.size() != 2) throw ConfigError("tensor '" + name + "' must be two-dimensional");
      if (item.at("byte_offset").get<std::uint64_t>() != offset)
        throw ConfigError("tensor '" + name + "' has an unexpected byte_offset");
      // Roles are not stored; recover them from a freshly laid-out store below.
      ck.params.add(name, shape[0], shape[1], ParamRole::Weight);
      offset += static_cast<std::uint64_t>(shape[0] * shape[1]) * 4;
    }
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest entry: " + std::string(e.what()));
  }
  validate_manifest(ck.params, config);
  {
    const ParamStore layout = zero_params(config);
    for (std::size_t i = 0; i < layout.size(); ++i) ck.params.entries()[i].role = layout.entries()[i].role;
  }
  read_tensors(dir / "weights.bin", ck.params);
  ck.params.check_finite("checkpoint");

  std::ifstream sf(dir / "state.json");
  if (sf) {
    json state;
    sf >> state;
    ck.step = state.value("step", std::int64_t{0});
    if (state.value("has_optimizer", false)) {
      AdamState opt = AdamState::zeros_like(ck.params);
      read_tensors(dir / "adam_m.bin", opt.m);
      read_tensors(dir / "adam_v.bin", opt.v);
      opt.step = state.value("adam_step", std::int64_t{0});
      ck.optimizer = std::move(opt);
    }
  }
  return ck;
}

}  // namespace pulsemap
