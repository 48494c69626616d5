#pragma once

// JSON catalog files.
//
//   {
//     "format": "edgesplit-catalog", "version": 1,
//     "models": [
//       { "model_id": 0, "name": "vgg16-s0",
//         "raw_input_bytes": 602112, "total_bytes": 553433888,
//         "leakage_table": [1.0, ..., 0.0],                 // L+1 entries
//         "layers": [ {"kind": "conv",  "flops": ..., "param_bytes": ..., "out_dims": [112, 112, 64]},
//                     {"kind": "dense", "flops": ..., "param_bytes": ..., "out_dims": [4096]} ] } ] }
//
// out_bytes is never stored; it is recomputed from out_dims with 4-byte elements.

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "edgesplit/error.hpp"
#include "edgesplit/model_profiles.hpp"

namespace edgesplit {

inline constexpr const char* kCatalogFormat = "edgesplit-catalog";
inline constexpr int kCatalogVersion = 1;

inline nlohmann::json catalog_to_json(const Catalog& catalog) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& p : catalog) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : p.layers) {
      nlohmann::json dims;
      if (const auto* c = std::get_if<ConvDims>(&layer.out_dims)) {
        dims = {c->h, c->w, c->c};
      } else {
        dims = {std::get<DenseDims>(layer.out_dims).v};
      }
      layers.push_back({{"kind", layer.kind == LayerKind::conv ? "conv" : "dense"},
                        {"flops", layer.flops},
                        {"param_bytes", layer.param_bytes},
                        {"out_dims", dims}});
    }
    models.push_back({{"model_id", p.model_id},
                      {"name", p.name},
                      {"raw_input_bytes", p.raw_input_bytes},
                      {"total_bytes", p.total_bytes},
                      {"leakage_table", p.leakage_table},
                      {"layers", layers}});
  }
  return {{"format", kCatalogFormat}, {"version", kCatalogVersion}, {"models", models}};
}

inline Catalog catalog_from_json(const nlohmann::json& doc) {
  Catalog catalog;
  try {
    if (doc.value("format", std::string{}) != kCatalogFormat) {
      throw ConfigError("catalog: missing or wrong \"format\" tag");
    }
    if (doc.at("version").get<int>() != kCatalogVersion) {
      throw ConfigError("catalog: unsupported version");
    }
    for (const auto& m : doc.at("models")) {
      ModelProfile p;
      p.model_id = m.at("model_id").get<int>();
      p.name = m.value("name", std::string{});
      p.raw_input_bytes = m.at("raw_input_bytes").get<std::int64_t>();
      p.total_bytes = m.at("total_bytes").get<std::int64_t>();
      p.leakage_table = m.at("leakage_table").get<std::vector<double>>();
      int index = 0;
      for (const auto& l : m.at("layers")) {
        ++index;
        const auto kind = l.at("kind").get<std::string>();
        const auto dims = l.at("out_dims").get<std::vector<std::int64_t>>();
        const std::string where = "catalog: model " + std::to_string(p.model_id) + " layer " + std::to_string(index);
        LayerKind k;
        OutDims out;
        if (kind == "conv") {
          if (dims.size() != 3) throw InvariantError(where + ": conv out_dims must be [H, W, C]");
          k = LayerKind::conv;
          out = ConvDims{dims[0], dims[1], dims[2]};
        } else if (kind == "dense") {
          if (dims.size() != 1) throw InvariantError(where + ": dense out_dims must be [V]");
          k = LayerKind::dense;
          out = DenseDims{dims[0]};
        } else {
          throw InvariantError(where + ": unknown kind '" + kind + "'");
        }
        for (auto d : dims) {
          if (d < 0) throw InvariantError(where + ": negative dimension");
        }
        p.layers.push_back(LayerProfile::make(k, l.at("flops").get<std::int64_t>(),
                                              l.at("param_bytes").get<std::int64_t>(), out));
      }
      validate_profile(p);
      catalog.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("catalog parse error: ") + e.what());
  }
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (catalog[i].model_id != static_cast<int>(i)) {
      throw InvariantError("catalog: model ids must be 0..I-1 in order (found " +
                           std::to_string(catalog[i].model_id) + " at position " + std::to_string(i) + ")");
    }
  }
  return catalog;
}

inline Catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open catalog file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("catalog parse error in '" + path + "': " + e.what());
  }
  return catalog_from_json(doc);
}

inline void save_catalog(const Catalog& catalog, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write catalog file '" + path + "'");
  out << catalog_to_json(catalog).dump(2) << "\n";
}

}  // namespace edgesplit
