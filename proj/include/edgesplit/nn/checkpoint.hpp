#pragma once

// Checkpoint format (JSON text):
//   {"format": "edgesplit-checkpoint", "version": 1,
//    "stores": {"<store>": [{"name", "rows", "cols", "values": [row-major]}]},
//    "rng": {"<stream>": "<engine state>"},
//    "extra": {...}}
// Values are written with round-trip precision, so save/load is exact.

#include <algorithm>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "edgesplit/nn/autodiff.hpp"
#include "edgesplit/nn/optim.hpp"

namespace edgesplit::nn {

inline nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto* p : store.all()) {
    std::vector<double> values(p->value.data(), p->value.data() + p->value.size());
    arr.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"values", values}});
  }
  return arr;
}

/// Loads values into an existing store; names and shapes must match exactly.
inline void params_from_json(ParamStore& store, const nlohmann::json& arr) {
  if (!arr.is_array() || arr.size() != store.size()) {
    throw ShapeError("checkpoint: parameter count does not match the network");
  }
  for (const auto& e : arr) {
    const auto name = e.at("name").get<std::string>();
    if (!store.contains(name)) throw ShapeError("checkpoint: unknown parameter '" + name + "'");
    auto& p = store.get(name);
    const auto rows = e.at("rows").get<Index>(), cols = e.at("cols").get<Index>();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw ShapeError("checkpoint: shape mismatch for '" + name + "'");
    }
    const auto values = e.at("values").get<std::vector<double>>();
    if (static_cast<Index>(values.size()) != rows * cols) throw ShapeError("checkpoint: value count for '" + name + "'");
    for (Index n = 0; n < rows * cols; ++n) p.value.data()[n] = values[static_cast<std::size_t>(n)];
  }
}

/// Adam step count and first/second moments, in parameter order.
inline nlohmann::json optimizer_to_json(const Adam& opt) {
  nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
  for (const auto& mo : opt.moments()) {
    m.push_back(std::vector<double>(mo.m.data(), mo.m.data() + mo.m.size()));
    v.push_back(std::vector<double>(mo.v.data(), mo.v.data() + mo.v.size()));
  }
  return {{"steps", opt.steps()}, {"m", m}, {"v", v}};
}

inline void optimizer_from_json(Adam& opt, const nlohmann::json& j) {
  auto& moments = opt.moments();
  const auto& m = j.at("m");
  const auto& v = j.at("v");
  if (m.size() != moments.size() || v.size() != moments.size()) {
    throw ShapeError("checkpoint: optimizer state does not match the network");
  }
  for (std::size_t n = 0; n < moments.size(); ++n) {
    const auto mv = m[n].get<std::vector<double>>();
    const auto vv = v[n].get<std::vector<double>>();
    if (static_cast<Index>(mv.size()) != moments[n].m.size() || static_cast<Index>(vv.size()) != moments[n].v.size()) {
      throw ShapeError("checkpoint: optimizer moment shape mismatch");
    }
    std::copy(mv.begin(), mv.end(), moments[n].m.data());
    std::copy(vv.begin(), vv.end(), moments[n].v.data());
  }
  opt.set_steps(j.at("steps").get<long>());
}

struct Checkpoint {
  std::map<std::string, nlohmann::json> stores;
  std::map<std::string, std::string> rng;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "edgesplit-checkpoint";
    j["version"] = 1;
    j["stores"] = stores;
    j["rng"] = rng;
    j["extra"] = extra;
    return j;
  }

  static Checkpoint from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "edgesplit-checkpoint") throw ShapeError("not an edgesplit checkpoint");
    if (j.value("version", 0) != 1) throw ShapeError("unsupported checkpoint version");
    Checkpoint c;
    for (auto& [k, v] : j.at("stores").items()) c.stores[k] = v;
    for (auto& [k, v] : j.at("rng").items()) c.rng[k] = v.get<std::string>();
    c.extra = j.value("extra", nlohmann::json::object());
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path);
    out << to_json().dump() << '\n';
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read checkpoint " + path);
    return from_json(nlohmann::json::parse(in));
  }
};

}  // namespace edgesplit::nn
