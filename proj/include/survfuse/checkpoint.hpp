#pragma once

// JSON model checkpoints. Doubles are written in shortest round-trip form,
// so save -> load reproduces every weight bit for bit.

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "survfuse/data_io.hpp"
#include "survfuse/error.hpp"
#include "survfuse/models.hpp"
#include "survfuse/survival.hpp"

namespace survfuse::ckpt {

inline constexpr const char* kFormat = "survfuse-checkpoint";
inline constexpr int kVersion = 1;

using Json = nlohmann::ordered_json;

struct Checkpoint {
  std::unique_ptr<models::SurvivalModel> model;
  std::vector<std::string> feature_names;          // molecular columns the model reads, in order
  std::optional<data::Standardizer> standardizer;  // fitted on the training cohort
  std::optional<surv::TimeBins> bins;
  Json config;                                     // resolved run config, free-form
};

inline Json dims_to_json(const models::ModelDims& d) {
  return Json{{"wsi_in", d.wsi_in},         {"mol_in", d.mol_in},
              {"projection", d.projection}, {"attention", d.attention},
              {"rep", d.rep},               {"snn_hidden", d.snn_hidden},
              {"fusion_hidden", d.fusion_hidden}, {"dropout_keep", d.dropout_keep}};
}

inline models::ModelDims dims_from_json(const Json& j) {
  models::ModelDims d;
  d.wsi_in = j.at("wsi_in").get<std::size_t>();
  d.mol_in = j.at("mol_in").get<std::size_t>();
  d.projection = j.at("projection").get<std::size_t>();
  d.attention = j.at("attention").get<std::size_t>();
  d.rep = j.at("rep").get<std::size_t>();
  d.snn_hidden = j.at("snn_hidden").get<std::size_t>();
  d.fusion_hidden = j.at("fusion_hidden").get<std::size_t>();
  d.dropout_keep = j.at("dropout_keep").get<double>();
  return d;
}

inline Json to_json(const Checkpoint& c) {
  if (!c.model) throw PreconditionError("checkpoint without a model");
  Json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["kind"] = std::string(models::to_string(c.model->kind()));
  j["dims"] = dims_to_json(c.model->dims());
  j["feature_names"] = c.feature_names;
  if (c.standardizer) {
    std::vector<int> active(c.standardizer->active.begin(), c.standardizer->active.end());
    j["standardizer"] = Json{{"mean", c.standardizer->mean}, {"scale", c.standardizer->scale}, {"active", active}};
  } else {
    j["standardizer"] = nullptr;
  }
  if (c.bins) {
    j["bins"] = std::vector<double>(c.bins->cuts.begin(), c.bins->cuts.end());
  } else {
    j["bins"] = nullptr;
  }
  j["config"] = c.config.is_null() ? Json::object() : c.config;
  Json tensors = Json::array();
  for (const auto& p : c.model->parameters()) {
    tensors.push_back(Json{{"name", p.name},
                           {"shape", p.tensor.shape()},
                           {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}});
  }
  j["tensors"] = std::move(tensors);
  return j;
}

inline Checkpoint from_json(const Json& j, const std::string& source) {
  try {
    if (j.at("format").get<std::string>() != kFormat) throw DataError(source + ": not a survfuse checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kVersion) throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    const auto kind = models::parse_model_kind(j.at("kind").get<std::string>());
    c.model = models::make_model(kind, dims_from_json(j.at("dims")), 0);
    c.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    if (!j.at("standardizer").is_null()) {
      const auto& s = j.at("standardizer");
      data::Standardizer st;
      st.mean = s.at("mean").get<std::vector<double>>();
      st.scale = s.at("scale").get<std::vector<double>>();
      for (int a : s.at("active").get<std::vector<int>>()) st.active.push_back(a != 0);
      if (st.mean.size() != st.scale.size() || st.mean.size() != st.active.size()) {
        throw DataError(source + ": standardizer vectors differ in length");
      }
      c.standardizer = std::move(st);
    }
    if (!j.at("bins").is_null()) {
      const auto cuts = j.at("bins").get<std::vector<double>>();
      if (cuts.size() != surv::kNumBins - 1) throw DataError(source + ": expected 3 bin cuts");
      surv::TimeBins b;
      std::copy(cuts.begin(), cuts.end(), b.cuts.begin());
      c.bins = b;
    }
    c.config = j.at("config");

    auto params = c.model->parameters();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != params.size()) {
      throw DataError(source + ": checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != params[i].name) {
        throw DataError(source + ": tensor " + std::to_string(i) + " is '" + t.at("name").get<std::string>() +
                        "', expected '" + params[i].name + "'");
      }
      if (t.at("shape").get<ad::Shape>() != params[i].tensor.shape()) {
        throw DataError(source + ": shape mismatch for " + params[i].name);
      }
      const auto values = t.at("values").get<std::vector<double>>();
      if (values.size() != params[i].tensor.size()) throw DataError(source + ": value count mismatch for " + params[i].name);
      auto dst = params[i].tensor.values_mut();
      std::copy(values.begin(), values.end(), dst.begin());
    }
    if (!c.feature_names.empty() && c.feature_names.size() != c.model->dims().mol_in) {
      throw DataError(source + ": feature_names length does not match the model's molecular dim");
    }
    return c;
  } catch (const Json::exception& e) {
    throw DataError(source + ": malformed checkpoint: " + e.what());
  }
}

inline void save(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << to_json(c).dump(1) << '\n';
}

inline Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open checkpoint");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  return from_json(j, path.string());
}

// Reorders/restricts a cohort's molecular columns to the checkpoint's
// feature list and applies its standardizer.
inline data::Cohort align_cohort(const data::Cohort& cohort, const Checkpoint& c) {
  data::Cohort out = cohort;
  if (!c.feature_names.empty()) {
    std::vector<std::size_t> idx;
    for (const auto& name : c.feature_names) {
      auto it = std::find(cohort.meta.names.begin(), cohort.meta.names.end(), name);
      if (it == cohort.meta.names.end()) throw DataError("cohort lacks molecular feature '" + name + "' used by the model");
      idx.push_back(static_cast<std::size_t>(it - cohort.meta.names.begin()));
    }
    out.meta = {};
    for (std::size_t i : idx) {
      out.meta.names.push_back(cohort.meta.names[i]);
      out.meta.kinds.push_back(cohort.meta.kinds[i]);
    }
    for (auto& p : out.patients) {
      std::vector<double> v;
      for (std::size_t i : idx) v.push_back(p.molecular[i]);
      p.molecular = ad::Tensor::vector(std::move(v));
    }
  }
  if (c.standardizer) out.patients = data::standardize_records(out.patients, *c.standardizer);
  if (out.embed_dim != c.model->dims().wsi_in || out.mol_dim() != c.model->dims().mol_in) {
    throw DataError("cohort dims (d=" + std::to_string(out.embed_dim) + ", p=" + std::to_string(out.mol_dim()) +
                    ") do not match the checkpoint (d=" + std::to_string(c.model->dims().wsi_in) +
                    ", p=" + std::to_string(c.model->dims().mol_in) + ")");
  }
  return out;
}

}  // namespace survfuse::ckpt
