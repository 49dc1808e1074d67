#pragma once

// Run configuration shared by every CLI command. Parsed from JSON with a
// closed schema: unknown keys and wrongly typed values are usage errors.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "survfuse/error.hpp"
#include "survfuse/models.hpp"
#include "survfuse/stats.hpp"
#include "survfuse/synthetic.hpp"
#include "survfuse/training.hpp"

namespace survfuse::config {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
  std::uint64_t seed = 0;
  std::string model = "mmf";
  std::string data;
  std::size_t folds = 5;
  train::TrainConfig train;
  models::ModelDims dims;
  std::size_t bootstrap_replicates = 1000;
  double bootstrap_level = 0.95;
  std::string risk_groups = "median";
  bool filter_enabled = false;
  double filter_freq_threshold = 0.05;
  std::size_t filter_rna_top_k = 2000;
  synth::SyntheticSpec synthetic;
  int explain_steps = 50;
  double explain_top_frac = 0.01;

  void validate() const {
    models::parse_model_kind(model);
    if (folds < 2) throw UsageError("config: folds must be >= 2");
    train.validate();
    if (dims.projection == 0 || dims.attention == 0 || dims.rep == 0 || dims.snn_hidden == 0 || dims.fusion_hidden == 0) {
      throw UsageError("config: model widths must be positive");
    }
    nn::alpha_dropout_affine(dims.dropout_keep);
    if (bootstrap_replicates < 2) throw UsageError("config: bootstrap.replicates must be >= 2");
    if (!(bootstrap_level > 0 && bootstrap_level < 1)) throw UsageError("config: bootstrap.level must lie in (0, 1)");
    if (risk_groups != "median" && risk_groups != "quartile") {
      throw UsageError("config: risk_groups must be 'median' or 'quartile'");
    }
    if (!(filter_freq_threshold >= 0 && filter_freq_threshold < 1)) throw UsageError("config: filter.freq_threshold must lie in [0, 1)");
    synthetic.validate();
    if (explain_steps < 2) throw UsageError("config: explain.steps must be >= 2");
    if (!(explain_top_frac > 0 && explain_top_frac <= 1)) throw UsageError("config: explain.top_frac must lie in (0, 1]");
  }

  stats::GroupScheme scheme() const {
    return risk_groups == "quartile" ? stats::GroupScheme::quartile : stats::GroupScheme::median;
  }
};

namespace detail {

class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: '" + path_ + "' must be an object");
  }

  // Rejects keys no read() or has() asked about.
  void done() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw UsageError("config: unknown key '" + qualified(key) + "'");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const Json& child(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_number()) throw type_error(key, "a number");
    out = v.get<double>();
  }

  template <typename U>
    requires std::is_unsigned_v<U>
  void read(const std::string& key, U& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw type_error(key, "a nonnegative integer");
    out = v.get<U>();
  }

  void read(const std::string& key, int& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_number_integer()) throw type_error(key, "an integer");
    out = v.get<int>();
  }

  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) throw type_error(key, "a boolean");
    out = v.get<bool>();
  }

  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_string()) throw type_error(key, "a string");
    out = v.get<std::string>();
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  UsageError type_error(const std::string& key, const char* what) const {
    return UsageError("config: '" + qualified(key) + "' must be " + what);
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig from_json(const Json& j) {
  RunConfig c;
  {
    detail::Reader r(j, "");
    r.read("seed", c.seed);
    r.read("model", c.model);
    r.read("data", c.data);
    r.read("folds", c.folds);
    r.read("risk_groups", c.risk_groups);
    if (r.has("train")) {
      detail::Reader t(r.child("train"), "train");
      t.read("lr", c.train.lr);
      t.read("beta1", c.train.beta1);
      t.read("beta2", c.train.beta2);
      t.read("adam_eps", c.train.adam_eps);
      t.read("l2", c.train.l2);
      t.read("l1", c.train.l1);
      t.read("epochs", c.train.epochs);
      t.read("beta_loss", c.train.beta_loss);
      t.read("grad_accum", c.train.grad_accum);
      t.read("standardize", c.train.standardize);
      t.done();
    }
    if (r.has("dims")) {
      detail::Reader d(r.child("dims"), "dims");
      d.read("projection", c.dims.projection);
      d.read("attention", c.dims.attention);
      d.read("rep", c.dims.rep);
      d.read("snn_hidden", c.dims.snn_hidden);
      d.read("fusion_hidden", c.dims.fusion_hidden);
      d.read("dropout_keep", c.dims.dropout_keep);
      d.done();
    }
    if (r.has("bootstrap")) {
      detail::Reader b(r.child("bootstrap"), "bootstrap");
      b.read("replicates", c.bootstrap_replicates);
      b.read("level", c.bootstrap_level);
      b.done();
    }
    if (r.has("filter")) {
      detail::Reader f(r.child("filter"), "filter");
      f.read("enabled", c.filter_enabled);
      f.read("freq_threshold", c.filter_freq_threshold);
      f.read("rna_top_k", c.filter_rna_top_k);
      f.done();
    }
    if (r.has("synthetic")) {
      detail::Reader s(r.child("synthetic"), "synthetic");
      s.read("n", c.synthetic.n_patients);
      s.read("bag_size", c.synthetic.bag_size);
      s.read("d", c.synthetic.d);
      s.read("p", c.synthetic.p);
      s.read("w_wsi", c.synthetic.w_wsi);
      s.read("w_mol", c.synthetic.w_mol);
      s.read("w_inter", c.synthetic.w_inter);
      s.read("censor_frac", c.synthetic.censor_frac);
      s.read("time_scale", c.synthetic.time_scale);
      s.read("informative_frac", c.synthetic.informative_frac);
      s.read("signal_dims", c.synthetic.signal_dims);
      s.read("signal_noise", c.synthetic.signal_noise);
      s.done();
    }
    if (r.has("explain")) {
      detail::Reader e(r.child("explain"), "explain");
      e.read("steps", c.explain_steps);
      e.read("top_frac", c.explain_top_frac);
      e.done();
    }
    r.done();
  }
  return c;
}

inline Json to_json(const RunConfig& c) {
  return Json{
      {"seed", c.seed},
      {"model", c.model},
      {"data", c.data},
      {"folds", c.folds},
      {"risk_groups", c.risk_groups},
      {"train", Json{{"lr", c.train.lr},
                     {"beta1", c.train.beta1},
                     {"beta2", c.train.beta2},
                     {"adam_eps", c.train.adam_eps},
                     {"l2", c.train.l2},
                     {"l1", c.train.l1},
                     {"epochs", c.train.epochs},
                     {"beta_loss", c.train.beta_loss},
                     {"grad_accum", c.train.grad_accum},
                     {"standardize", c.train.standardize}}},
      {"dims", Json{{"projection", c.dims.projection},
                    {"attention", c.dims.attention},
                    {"rep", c.dims.rep},
                    {"snn_hidden", c.dims.snn_hidden},
                    {"fusion_hidden", c.dims.fusion_hidden},
                    {"dropout_keep", c.dims.dropout_keep}}},
      {"bootstrap", Json{{"replicates", c.bootstrap_replicates}, {"level", c.bootstrap_level}}},
      {"filter", Json{{"enabled", c.filter_enabled},
                      {"freq_threshold", c.filter_freq_threshold},
                      {"rna_top_k", c.filter_rna_top_k}}},
      {"synthetic", Json{{"n", c.synthetic.n_patients},
                         {"bag_size", c.synthetic.bag_size},
                         {"d", c.synthetic.d},
                         {"p", c.synthetic.p},
                         {"w_wsi", c.synthetic.w_wsi},
                         {"w_mol", c.synthetic.w_mol},
                         {"w_inter", c.synthetic.w_inter},
                         {"censor_frac", c.synthetic.censor_frac},
                         {"time_scale", c.synthetic.time_scale},
                         {"informative_frac", c.synthetic.informative_frac},
                         {"signal_dims", c.synthetic.signal_dims},
                         {"signal_noise", c.synthetic.signal_noise}}},
      {"explain", Json{{"steps", c.explain_steps}, {"top_frac", c.explain_top_frac}}},
  };
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw UsageError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

// RJC_SEED, when set, replaces the configured seed.
inline void apply_env(RunConfig& c) {
  if (const char* s = std::getenv("RJC_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*end != '\0' || s[0] == '-') throw UsageError("RJC_SEED must be a nonnegative integer, got '" + std::string(s) + "'");
    c.seed = v;
  }
}

}  // namespace survfuse::config
