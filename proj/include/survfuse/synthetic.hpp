#pragma once

// Synthetic cohorts with a known log-hazard. Two latent scalars drive risk:
// s_w is written into a subset of patch embeddings, s_m into a few molecular
// columns. Everything is drawn from one seeded stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "survfuse/data_io.hpp"
#include "survfuse/error.hpp"
#include "survfuse/interpret.hpp"
#include "survfuse/random.hpp"

namespace survfuse::synth {

struct SyntheticSpec {
  std::size_t n_patients = 600;
  std::size_t bag_size = 20;
  std::size_t d = 16;
  std::size_t p = 32;
  double w_wsi = 0.0;
  double w_mol = 0.0;
  double w_inter = 1.0;
  double censor_frac = 0.4;
  std::uint64_t seed = 0;
  double time_scale = 30.0;       // months per unit of the unit-rate exponential
  double informative_frac = 0.5;  // expected share of patches carrying s_w
  std::size_t signal_dims = 4;    // coordinates carrying each latent
  double signal_noise = 0.5;

  void validate() const {
    if (n_patients < 20) throw ParameterError("synthetic cohort needs n >= 20");
    if (bag_size < 1 || d < signal_dims + 1 || p < signal_dims) {
      throw ParameterError("synthetic cohort dims too small for the latent embedding");
    }
    if (!std::isfinite(w_wsi) || !std::isfinite(w_mol) || !std::isfinite(w_inter)) {
      throw ParameterError("effect weights must be finite");
    }
    if (!(censor_frac >= 0.0 && censor_frac < 1.0)) throw ParameterError("censor_frac must lie in [0, 1)");
    if (!(time_scale > 0.0)) throw ParameterError("time_scale must be > 0");
    if (!(informative_frac > 0.0 && informative_frac <= 1.0)) throw ParameterError("informative_frac must lie in (0, 1]");
    if (!(signal_noise >= 0.0)) throw ParameterError("signal_noise must be >= 0");
  }
};

struct SyntheticCohort {
  data::Cohort cohort;
  std::vector<double> s_wsi;
  std::vector<double> s_mol;
  std::vector<double> log_hazard;
  // Per patient, one entry per bag row (same order as the bag).
  std::vector<std::vector<interp::PatchCellCounts>> cell_counts;
};

// Exponential censoring rate making the expected censored share equal
// target, given each patient's event rate r_i: mean_i c/(c + r_i) = target.
inline double calibrate_censoring_rate(const std::vector<double>& event_rates, double target) {
  if (target <= 0.0) return 0.0;
  auto frac = [&](double c) {
    double s = 0.0;
    for (double r : event_rates) s += c / (c + r);
    return s / static_cast<double>(event_rates.size());
  };
  double lo = 0.0, hi = 1.0;
  while (frac(hi) < target) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (frac(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::string patient_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%05zu", i + 1);
  return buf;
}

// Molecular column kinds: the signal columns are RNA-Seq; the rest cycle
// through mutation, CNV and RNA-Seq noise.
inline data::FeatureMeta synthetic_meta(const SyntheticSpec& spec) {
  data::FeatureMeta meta;
  for (std::size_t j = 0; j < spec.p; ++j) {
    data::FeatureKind kind = data::FeatureKind::rnaseq;
    if (j >= spec.signal_dims) {
      const std::size_t r = (j - spec.signal_dims) % 3;
      kind = r == 0 ? data::FeatureKind::mutation : (r == 1 ? data::FeatureKind::cnv : data::FeatureKind::rnaseq);
    }
    char buf[48];
    const char* tag = kind == data::FeatureKind::mutation ? "mut" : (kind == data::FeatureKind::cnv ? "cnv" : "rna");
    std::snprintf(buf, sizeof(buf), "G%03zu_%s", j + 1, tag);
    meta.names.emplace_back(buf);
    meta.kinds.push_back(kind);
  }
  return meta;
}

inline SyntheticCohort gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x5EED));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution informative(spec.informative_frac);

  SyntheticCohort out;
  data::Cohort& cohort = out.cohort;
  cohort.embed_dim = spec.d;
  cohort.meta = synthetic_meta(spec);
  const std::size_t k = spec.signal_dims;
  const std::size_t half = (spec.bag_size + 1) / 2;  // patches on the first slide

  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    const double sw = normal(rng);
    const double sm = normal(rng);
    out.s_wsi.push_back(sw);
    out.s_mol.push_back(sm);
    out.log_hazard.push_back(spec.w_wsi * sw + spec.w_mol * sm + spec.w_inter * sw * sm);

    data::PatientRecord rec;
    rec.id = patient_name(i);
    struct Patch {
      data::PatchLocation loc;
      std::vector<double> f;
      bool signal;
    };
    std::vector<Patch> patches;
    for (std::size_t m = 0; m < spec.bag_size; ++m) {
      Patch pt;
      const bool first = m < half;
      const std::size_t local = first ? m : m - half;
      pt.loc = {first ? "S1" : "S2", static_cast<double>(256 * (local / 4)), static_cast<double>(256 * (local % 4))};
      pt.signal = informative(rng);
      pt.f.resize(spec.d);
      for (std::size_t j = 0; j < spec.d; ++j) pt.f[j] = normal(rng);
      if (pt.signal) {
        for (std::size_t j = 0; j < k; ++j) pt.f[j] = sw + spec.signal_noise * pt.f[j];
        pt.f[k] = 2.0 + spec.signal_noise * pt.f[k];  // marker coordinate
      }
      patches.push_back(std::move(pt));
    }
    std::sort(patches.begin(), patches.end(), [](const Patch& a, const Patch& b) {
      return std::tie(a.loc.slide_id, a.loc.x, a.loc.y) < std::tie(b.loc.slide_id, b.loc.x, b.loc.y);
    });
    std::vector<double> bag;
    std::vector<interp::PatchCellCounts> counts;
    for (std::size_t m = 0; m < patches.size(); ++m) {
      bag.insert(bag.end(), patches[m].f.begin(), patches[m].f.end());
      rec.patches.push_back(patches[m].loc);
      // Lymphocyte-rich, tumor-adjacent patches are likelier in low-risk
      // patients with an informative patch.
      std::poisson_distribution<std::int64_t> total_d(30.0);
      interp::PatchCellCounts c;
      c.patch_id = m;
      c.total = total_d(rng);
      const double lym_share = patches[m].signal ? 1.0 / (1.0 + std::exp(out.log_hazard.back())) : 0.2;
      std::binomial_distribution<std::int64_t> lym_d(c.total, 0.6 * lym_share);
      c.lymphocytes = lym_d(rng);
      std::binomial_distribution<std::int64_t> tum_d(c.total - c.lymphocytes, 0.4);
      c.tumor = tum_d(rng);
      counts.push_back(c);
    }
    rec.bag = ad::Tensor::matrix(spec.bag_size, spec.d, std::move(bag));
    out.cell_counts.push_back(std::move(counts));

    std::vector<double> mol(spec.p);
    for (std::size_t j = 0; j < spec.p; ++j) {
      switch (cohort.meta.kinds[j]) {
        case data::FeatureKind::rnaseq:
          mol[j] = j < k ? sm + spec.signal_noise * normal(rng) : normal(rng);
          break;
        case data::FeatureKind::mutation:
          mol[j] = uniform01(rng) < 0.2 ? 1.0 : 0.0;
          break;
        case data::FeatureKind::cnv: {
          const double u = uniform01(rng);
          mol[j] = u < 0.1 ? -1.0 : (u < 0.2 ? 1.0 : 0.0);
          break;
        }
      }
    }
    rec.molecular = ad::Tensor::vector(std::move(mol));
    cohort.patients.push_back(std::move(rec));
  }

  std::vector<double> rates;
  for (double lh : out.log_hazard) rates.push_back(std::exp(lh));
  const double c_rate = calibrate_censoring_rate(rates, spec.censor_frac);
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    const double event = -std::log1p(-uniform01(rng)) / rates[i];
    const double cens = c_rate > 0.0 ? -std::log1p(-uniform01(rng)) / c_rate : INFINITY;
    auto& label = cohort.patients[i].label;
    label.censored = cens < event;
    label.time = spec.time_scale * std::min(event, cens);
  }
  cohort.report.patients = cohort.patients.size();
  return out;
}

// Writes the per-patch cell counts as patient_id,patch_id,total,lymphocytes,tumor.
inline void write_cell_counts(const SyntheticCohort& s, const std::string& path) {
  csv::Writer w(path);
  w.row("patient_id", "patch_id", "total", "lymphocytes", "tumor");
  for (std::size_t i = 0; i < s.cohort.size(); ++i)
    for (const auto& c : s.cell_counts[i]) w.row(s.cohort.patients[i].id, c.patch_id, c.total, c.lymphocytes, c.tumor);
}

}  // namespace survfuse::synth
