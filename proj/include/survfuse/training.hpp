#pragma once

// Adam with additive L1/L2 penalties, the single-patient training loop and
// censorship-stratified k-fold cross-validation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "survfuse/data_io.hpp"
#include "survfuse/error.hpp"
#include "survfuse/models.hpp"
#include "survfuse/random.hpp"
#include "survfuse/stats.hpp"
#include "survfuse/survival.hpp"
#include "survfuse/tensor.hpp"

namespace survfuse::train {

using ad::Tensor;
using data::PatientRecord;
using models::ModelKind;
using models::SurvivalModel;

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double l2 = 1e-5;
  double l1 = 1e-4;
  int epochs = 20;
  double beta_loss = 0.0;
  std::uint64_t seed = 0;
  int grad_accum = 1;
  bool standardize = true;

  void validate() const {
    if (!(lr >= 0) || !(l1 >= 0) || !(l2 >= 0) || !(adam_eps >= 0)) throw ParameterError("rates must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ParameterError("Adam betas must lie in [0, 1)");
    if (epochs < 1) throw ParameterError("epochs must be >= 1");
    if (grad_accum < 1) throw ParameterError("grad_accum must be >= 1");
    if (!(beta_loss >= 0 && beta_loss <= 1)) throw ParameterError("beta_loss must lie in [0, 1]");
  }
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

// One Adam update on g' = g + l2*w + l1*sign(w).
inline void adam_step(std::span<const nn::NamedParam> params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("Adam state tracks a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor.size()) {
      throw DimensionError("Adam state shape mismatch for " + params[i].name);
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = params[i].tensor;
    auto values = w.values_mut();
    auto grad = w.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double wk = values[k];
      const double sign = wk > 0 ? 1.0 : (wk < 0 ? -1.0 : 0.0);
      const double g = grad[k] + cfg.l2 * wk + cfg.l1 * sign;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      values[k] = wk - cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

inline std::vector<surv::SurvivalLabel> binned_labels(std::span<const PatientRecord> records, const surv::TimeBins& bins) {
  std::vector<surv::SurvivalLabel> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    surv::SurvivalLabel l = r.label;
    l.bin = surv::discretize(l.time, bins);
    out.push_back(l);
  }
  return out;
}

inline std::vector<surv::SurvivalLabel> labels_of(std::span<const PatientRecord> records) {
  std::vector<surv::SurvivalLabel> out;
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-patient loss of each epoch
};

// Epochs of shuffled single-patient steps; Adam steps every grad_accum
// patients on the averaged gradient. Mutates the model's weights in place.
inline TrainResult train(SurvivalModel& model, std::span<const PatientRecord> records, const surv::TimeBins& bins,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (records.empty()) throw DataError("cannot train on an empty cohort");
  const auto labels = binned_labels(records, bins);
  const auto params = model.parameters();
  for (auto p : params) p.tensor.zero_grad();
  AdamState adam;
  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  Rng dropout_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  const double accum_scale = 1.0 / cfg.grad_accum;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const PatientRecord& rec = records[order[k]];
      {
        ad::Tape tape;
        ad::Tape::Scope scope(tape);
        const auto pred = model.forward(rec.bag, rec.molecular, true, dropout_rng);
        Tensor loss = surv::combined_loss(pred.hazards, labels[order[k]], cfg.beta_loss);
        total += loss.item();
        if (cfg.grad_accum > 1) loss = ad::scale(loss, accum_scale);
        tape.backward(loss);
      }
      const bool boundary = (k + 1) % static_cast<std::size_t>(cfg.grad_accum) == 0 || k + 1 == order.size();
      if (boundary) {
        adam_step(params, adam, cfg);
        for (auto p : params) p.tensor.zero_grad();
      }
    }
    result.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Cross-validation.

struct FoldSplit {
  std::vector<int> fold_of;
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::vector<std::size_t>> val;
};

// Shuffles each censorship stratum and deals it round-robin over the folds,
// continuing the rotation between strata so total fold sizes stay balanced.
inline FoldSplit stratified_folds(const std::vector<bool>& censored, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ParameterError("cross-validation needs at least 2 folds");
  std::vector<std::size_t> events, cens;
  for (std::size_t i = 0; i < censored.size(); ++i) (censored[i] ? cens : events).push_back(i);
  if (events.size() < k) {
    throw DataError("cannot stratify: " + std::to_string(events.size()) + " uncensored patients for " +
                    std::to_string(k) + " folds");
  }
  Rng rng(derive_seed(seed, 3));
  std::shuffle(events.begin(), events.end(), rng);
  std::shuffle(cens.begin(), cens.end(), rng);
  FoldSplit split;
  split.fold_of.assign(censored.size(), -1);
  std::size_t slot = 0;
  for (const auto* stratum : {&events, &cens})
    for (std::size_t i : *stratum) split.fold_of[i] = static_cast<int>(slot++ % k);
  split.train.resize(k);
  split.val.resize(k);
  for (std::size_t i = 0; i < censored.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      (static_cast<std::size_t>(split.fold_of[i]) == f ? split.val : split.train)[f].push_back(i);
    }
  }
  return split;
}

struct FoldResult {
  int fold = 0;
  double c_index = 0.0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  surv::TimeBins bins;
  std::vector<double> loss_trace;
};

struct CvResult {
  ModelKind kind = ModelKind::mmf;
  std::vector<FoldResult> folds;
  double c_index_mean = 0.0;
  stats::RiskTable pooled;        // cohort order
  std::vector<int> pooled_fold;   // fold of each pooled row
};

inline std::vector<PatientRecord> subset(const std::vector<PatientRecord>& all, const std::vector<std::size_t>& idx) {
  std::vector<PatientRecord> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

// Per fold: bins and molecular standardization fitted on the training split,
// a fresh model trained with a fold-derived seed, risks predicted on the
// held-out split.
inline CvResult cross_validate(const data::Cohort& cohort, const TrainConfig& cfg, ModelKind kind,
                               models::ModelDims dims, std::size_t k = 5) {
  cfg.validate();
  if (cohort.patients.empty()) throw DataError("cannot cross-validate an empty cohort");
  dims.wsi_in = cohort.embed_dim;
  dims.mol_in = cohort.mol_dim();
  std::vector<bool> censored;
  for (const auto& p : cohort.patients) censored.push_back(p.label.censored);
  const FoldSplit split = stratified_folds(censored, k, cfg.seed);
  const data::FeatureMatrix mol = data::molecular_matrix(cohort);

  CvResult res;
  res.kind = kind;
  std::vector<double> risk(cohort.size(), 0.0);
  for (std::size_t f = 0; f < k; ++f) {
    auto train_recs = subset(cohort.patients, split.train[f]);
    auto val_recs = subset(cohort.patients, split.val[f]);
    if (cfg.standardize) {
      const auto st = data::fit_standardizer(mol, cohort.meta, split.train[f]);
      train_recs = data::standardize_records(train_recs, st);
      val_recs = data::standardize_records(val_recs, st);
    }
    FoldResult fr;
    fr.fold = static_cast<int>(f);
    fr.n_train = train_recs.size();
    fr.n_val = val_recs.size();
    fr.bins = surv::make_bins(labels_of(train_recs));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, 100 + f);
    auto model = models::make_model(kind, dims, fold_cfg.seed);
    fr.loss_trace = train(*model, train_recs, fr.bins, fold_cfg).epoch_loss;
    stats::RiskTable val_table;
    for (std::size_t j = 0; j < val_recs.size(); ++j) {
      const double r = models::predict_risk(*model, val_recs[j].bag, val_recs[j].molecular);
      risk[split.val[f][j]] = r;
      val_table.push_back({val_recs[j].id, r, val_recs[j].label.time, val_recs[j].label.censored});
    }
    fr.c_index = stats::c_index(val_table);
    res.folds.push_back(std::move(fr));
  }
  double sum = 0.0;
  for (const auto& fr : res.folds) sum += fr.c_index;
  res.c_index_mean = sum / static_cast<double>(k);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& p = cohort.patients[i];
    res.pooled.push_back({p.id, risk[i], p.label.time, p.label.censored});
    res.pooled_fold.push_back(split.fold_of[i]);
  }
  return res;
}

}  // namespace survfuse::train
