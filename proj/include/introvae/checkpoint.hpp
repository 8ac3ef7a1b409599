#pragma once

// Binary checkpoint container: a JSON metadata header followed by raw
// little-endian arrays.
//
//   bytes 0..15   "INTROVAE-CKPT-1\n"
//   u64           header length H
//   H bytes       JSON: {"meta": {...}, "arrays": [{name, dtype, shape, offset, nbytes}, ...]}
//   ...           array payloads, concatenated in header order

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "introvae/core_math.hpp"
#include "introvae/errors.hpp"
#include "introvae/networks.hpp"

namespace introvae {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

struct NamedArray {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  std::vector<int> shape;
  std::vector<std::uint8_t> bytes;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  template <class T>
  void put(std::string name, std::vector<int> shape, std::span<const T> values) {
    NamedArray a{std::move(name), dtype_name<T>(), std::move(shape), std::vector<std::uint8_t>(values.size_bytes())};
    if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), values.size_bytes());
    arrays.push_back(std::move(a));
  }

  const NamedArray& find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw LoadError("checkpoint has no array '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }

  template <class T>
  std::vector<T> get(const std::string& name) const {
    const auto& a = find(name);
    if (a.dtype != dtype_name<T>()) throw LoadError("array '" + name + "' has dtype " + a.dtype);
    if (a.bytes.size() % sizeof(T) != 0) throw LoadError("array '" + name + "' is truncated");
    std::vector<T> out(a.bytes.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
    return out;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr char kCheckpointMagic[17] = "INTROVAE-CKPT-1\n";

// Writes to a temporary sibling and renames, so a crash never leaves a
// half-written checkpoint under the final name.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["meta"] = ck.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ck.arrays) {
    header["arrays"].push_back(
        {{"name", a.name}, {"dtype", a.dtype}, {"shape", a.shape}, {"offset", offset}, {"nbytes", a.bytes.size()}});
    offset += a.bytes.size();
  }
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw TrainingAbort("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, 16);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& a : ck.arrays) out.write(reinterpret_cast<const char*>(a.bytes.data()), std::streamsize(a.bytes.size()));
    out.flush();
    if (!out) throw TrainingAbort("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[16];
  in.read(magic, 16);
  if (!in || std::memcmp(magic, kCheckpointMagic, 16) != 0) throw LoadError("not a checkpoint file: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ULL << 32)) throw LoadError("corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  if (!in) throw LoadError("truncated checkpoint header");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.meta = header.at("meta");
    for (const auto& e : header.at("arrays")) {
      NamedArray a{e.at("name").get<std::string>(), e.at("dtype").get<std::string>(),
                   e.at("shape").get<std::vector<int>>(), {}};
      a.bytes.resize(e.at("nbytes").get<std::size_t>());
      in.read(reinterpret_cast<char*>(a.bytes.data()), std::streamsize(a.bytes.size()));
      if (!in) throw LoadError("truncated array '" + a.name + "'");
      ck.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt checkpoint header: ") + e.what());
  }
  return ck;
}

inline nlohmann::json to_json(const NetConfig& c) {
  return {{"resolution", c.resolution},
          {"image_channels", c.image_channels},
          {"latent_dim", c.latent_dim},
          {"channels", c.channels},
          {"activation_slope", c.activation_slope}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.image_channels = j.at("image_channels").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.activation_slope = j.at("activation_slope").get<double>();
  return c;
}

inline nlohmann::json to_json(const HyperParams& h) {
  return {{"margin", h.margin},           {"alpha", h.alpha},       {"beta", h.beta},
          {"latent_dim", h.latent_dim},   {"lr", h.learning_rate},  {"batch_size", h.batch_size},
          {"adam_beta1", h.adam_beta1},   {"adam_beta2", h.adam_beta2}, {"adam_eps", h.adam_eps}};
}

inline HyperParams hyper_params_from_json(const nlohmann::json& j) {
  HyperParams h;
  h.margin = j.at("margin").get<double>();
  h.alpha = j.at("alpha").get<double>();
  h.beta = j.at("beta").get<double>();
  h.latent_dim = j.at("latent_dim").get<int>();
  h.learning_rate = j.at("lr").get<double>();
  h.batch_size = j.at("batch_size").get<int>();
  h.adam_beta1 = j.at("adam_beta1").get<double>();
  h.adam_beta2 = j.at("adam_beta2").get<double>();
  h.adam_eps = j.at("adam_eps").get<double>();
  return h;
}

template <class T>
void put_params(Checkpoint& ck, const std::string& prefix, const ParamStore<T>& ps) {
  for (const auto& p : ps.params()) ck.put<T>(prefix + p.name, p.shape, p.value);
}

// Restores a store built from `cfg` and `role`, checking names and shapes.
template <class T>
ParamStore<T> get_params(const Checkpoint& ck, const std::string& prefix, const NetConfig& cfg, NetRole role) {
  ParamStore<T> ps = role == NetRole::encoder ? build_encoder<T>(cfg, 0) : build_generator<T>(cfg, 0);
  for (auto& p : ps.params()) {
    const auto& a = ck.find(prefix + p.name);
    if (a.shape != p.shape) throw LoadError("shape mismatch for '" + prefix + p.name + "'");
    p.value = ck.get<T>(prefix + p.name);
    if (p.value.size() != p.grad.size()) throw LoadError("size mismatch for '" + prefix + p.name + "'");
  }
  return ps;
}

}  // namespace introvae
