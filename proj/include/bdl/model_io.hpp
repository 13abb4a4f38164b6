#pragma once

// Model files are JSON written in one canonical form:
//   {"config":{...},"format_version":1,"layers":[{"name","shape","values"},...]}
// Keys sorted, layers in ParamSet order, one layer per line, every float as
// "%.16e" (17 significant digits, round-trips bitwise). The digest is the
// SHA-256 of exactly these bytes.

#include <cstdio>
#include <string>

#include "bdl/digest.hpp"
#include "bdl/net.hpp"
#include "json.hpp"

namespace bdl {

inline constexpr int kModelFormatVersion = 1;

class ModelFormatError : public Error {
 public:
  using Error::Error;
};
class ModelVersionError : public Error {
 public:
  using Error::Error;
};
class ModelShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-negative integer; JSON built in code stores small literals as signed.
inline bool is_count(const nlohmann::json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0);
}

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.16e", v);
  out.append(buf, static_cast<std::size_t>(n));
}

inline void append_nested(std::string& out, const double*& p, const Tensor::Shape& shape, std::size_t axis) {
  out.push_back('[');
  for (std::size_t i = 0; i < shape[axis]; ++i) {
    if (i) out.push_back(',');
    if (axis + 1 == shape.size()) {
      append_double(out, *p++);
    } else {
      append_nested(out, p, shape, axis + 1);
    }
  }
  out.push_back(']');
}

inline void flatten_nested(const nlohmann::json& j, const Tensor::Shape& shape, std::size_t axis,
                           std::vector<double>& out, const std::string& layer) {
  if (!j.is_array() || j.size() != shape[axis])
    throw ModelShapeError("model layer '" + layer + "': values do not match declared shape " +
                          Tensor::shape_string(shape) + " at axis " + std::to_string(axis));
  for (const auto& e : j) {
    if (axis + 1 == shape.size()) {
      if (!e.is_number())
        throw ModelFormatError("model layer '" + layer + "': non-numeric value");
      out.push_back(e.get<double>());
    } else {
      flatten_nested(e, shape, axis + 1, out, layer);
    }
  }
}

}  // namespace detail

inline nlohmann::json config_to_json(const NetConfig& c) {
  nlohmann::json bank = nlohmann::json::array();
  for (const auto& f : c.c4_bank) bank.push_back({{"count", f.count}, {"kh", f.kh}, {"kw", f.kw}});
  return {{"window_h", c.window_h}, {"window_w", c.window_w}, {"in_channels", c.in_channels},
          {"c2_maps", c.c2_maps},   {"c2_kernel", c.c2_kernel}, {"pool", c.pool},
          {"c4_bank", bank},        {"fc_out", c.fc_out}};
}

/// Unknown keys are rejected. Without `defaults` every key is required (model
/// files); with it, missing keys fall back to those values (run configs).
inline NetConfig config_from_json(const nlohmann::json& j, const NetConfig* defaults = nullptr) {
  require(j.is_object(), "net config must be an object");
  const bool allow_partial = defaults != nullptr;
  NetConfig c = allow_partial ? *defaults : NetConfig{};
  static const std::vector<std::string> known = {"window_h", "window_w", "in_channels", "c2_maps",
                                                 "c2_kernel", "pool", "c4_bank", "fc_out"};
  for (auto it = j.begin(); it != j.end(); ++it)
    require(std::find(known.begin(), known.end(), it.key()) != known.end(),
            "net config: unknown key '" + it.key() + "'");
  auto get = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) {
      require(allow_partial, std::string("net config: missing key '") + key + "'");
      return;
    }
    require(is_count(j[key]), std::string("net config: '") + key + "' must be a non-negative integer");
    dst = j[key].get<std::size_t>();
  };
  get("window_h", c.window_h);
  get("window_w", c.window_w);
  get("in_channels", c.in_channels);
  get("c2_maps", c.c2_maps);
  get("c2_kernel", c.c2_kernel);
  get("pool", c.pool);
  get("fc_out", c.fc_out);
  if (j.contains("c4_bank")) {
    require(j["c4_bank"].is_array(), "net config: 'c4_bank' must be an array");
    c.c4_bank.clear();
    for (const auto& e : j["c4_bank"]) {
      require(e.is_object() && e.size() == 3 && e.contains("count") && e.contains("kh") && e.contains("kw"),
              "net config: c4_bank entries need exactly {count, kh, kw}");
      for (const char* k : {"count", "kh", "kw"})
        require(is_count(e[k]), std::string("net config: c4_bank '") + k + "' must be a non-negative integer");
      c.c4_bank.push_back({e["count"].get<std::size_t>(), e["kh"].get<std::size_t>(), e["kw"].get<std::size_t>()});
    }
  } else {
    require(allow_partial, "net config: missing key 'c4_bank'");
  }
  return c;
}

inline std::string serialize(const Network& net) {
  std::string out = "{\"config\":";
  out += config_to_json(net.config).dump();  // nlohmann objects iterate in sorted key order
  out += ",\"format_version\":" + std::to_string(kModelFormatVersion) + ",\"layers\":[";
  bool first = true;
  net.params.for_each([&](const std::string& name, const Tensor& t) {
    out += first ? "\n" : ",\n";
    first = false;
    out += "{\"name\":\"" + name + "\",\"shape\":[";
    for (std::size_t i = 0; i < t.rank(); ++i) {
      if (i) out.push_back(',');
      out += std::to_string(t.dim(i));
    }
    out += "],\"values\":";
    const double* p = t.data();
    detail::append_nested(out, p, t.shape(), 0);
    out += "}";
  });
  out += "\n]}\n";
  return out;
}

inline std::string digest(const Network& net) { return sha256_hex(serialize(net)); }

inline Network deserialize(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j.contains("config") || !j.contains("layers"))
    throw ModelFormatError("model file must contain format_version, config and layers");
  if (!j["format_version"].is_number_integer() || j["format_version"].get<long long>() != kModelFormatVersion)
    throw ModelVersionError("unsupported model format_version " + j["format_version"].dump() +
                            " (expected " + std::to_string(kModelFormatVersion) + ")");
  NetConfig cfg;
  try {
    cfg = config_from_json(j["config"]);
    cfg.validate();
  } catch (const Error& e) {
    throw ModelFormatError(std::string("model config: ") + e.what());
  }
  Network net{cfg, ParamSet::zeros(cfg)};
  const auto& layers = j["layers"];
  if (!layers.is_array()) throw ModelFormatError("model 'layers' must be an array");
  std::size_t idx = 0;
  net.params.for_each([&](const std::string& name, Tensor& t) {
    if (idx >= layers.size()) throw ModelFormatError("model file is missing layer '" + name + "'");
    const auto& l = layers[idx++];
    if (!l.is_object() || !l.contains("name") || !l.contains("shape") || !l.contains("values"))
      throw ModelFormatError("model layer " + std::to_string(idx - 1) + " lacks name/shape/values");
    if (l["name"] != name)
      throw ModelFormatError("model layer " + std::to_string(idx - 1) + " is '" +
                             l["name"].dump() + "', expected '" + name + "'");
    Tensor::Shape shape;
    for (const auto& d : l["shape"]) {
      if (!is_count(d)) throw ModelShapeError("model layer '" + name + "': bad shape entry");
      shape.push_back(d.get<std::size_t>());
    }
    if (shape != t.shape())
      throw ModelShapeError("model layer '" + name + "': shape " + Tensor::shape_string(shape) +
                            " does not match config, expected " + t.shape_string());
    std::vector<double> values;
    values.reserve(t.size());
    detail::flatten_nested(l["values"], shape, 0, values, name);
    t = Tensor(shape, std::move(values));
  });
  if (idx != layers.size()) throw ModelFormatError("model file has unexpected extra layers");
  net.params.for_each([](const std::string& name, const Tensor& t) {
    if (!all_finite(t)) throw ModelFormatError("model layer '" + name + "' contains non-finite values");
  });
  return net;
}

inline void save(const Network& net, const std::string& path) { write_file(path, serialize(net)); }
inline Network load(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace bdl
