#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "survfuse/error.hpp"
#include "survfuse/models.hpp"
#include "survfuse/survival.hpp"
#include "survfuse/tensor.hpp"

namespace survfuse::interp {

using ad::Tensor;

struct Quadrature {
  std::vector<double> nodes;    // in (0, 1)
  std::vector<double> weights;  // sum to 1
};

// n-point Gauss-Legendre rule mapped from [-1, 1] onto [0, 1].
inline Quadrature gauss_legendre(int n) {
  if (n < 1) throw ParameterError("quadrature needs at least one node");
  Quadrature q;
  q.nodes.resize(static_cast<std::size_t>(n));
  q.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const auto lo = static_cast<std::size_t>(i), hi = static_cast<std::size_t>(n - 1 - i);
    q.nodes[lo] = 0.5 * (1.0 - x);
    q.nodes[hi] = 0.5 * (1.0 + x);
    q.weights[lo] = q.weights[hi] = 0.5 * w;
  }
  return q;
}

using ScalarFn = std::function<Tensor(const Tensor&)>;

struct AttributionReport {
  std::vector<std::string> features;
  std::vector<double> values;  // x
  std::vector<double> ig;
  double output = 0.0;           // F(x)
  double baseline_output = 0.0;  // F(x')
  double completeness_gap = 0.0; // |sum ig - (F(x) - F(x'))|
  std::size_t segments = 1;      // smooth pieces the path was split into

  double relative_gap() const {
    return completeness_gap / std::max(1e-8, std::abs(output - baseline_output));
  }
};

namespace detail {

inline double checked_value(const Tensor& y) {
  if (y.size() != 1) throw ContractViolation("attribution target must be scalar, got " + ad::shape_str(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("non-finite output along the integration path");
  return v;
}

// Value and gradient of fn at x on a private tape.
inline double value_and_grad(const ScalarFn& fn, const std::vector<double>& x, std::vector<double>& grad) {
  Tensor leaf = Tensor::vector(x);
  leaf.set_requires_grad(true);
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  const Tensor y = fn(leaf);
  const double v = checked_value(y);
  tape.backward(y);
  grad.assign(leaf.grad().begin(), leaf.grad().end());
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient along the integration path");
  tape.reset();  // leaves touched by fn (e.g. model weights) get their grads cleared
  return v;
}

inline double value_only(const ScalarFn& fn, const std::vector<double>& x) {
  ad::NoGrad no_grad;
  return checked_value(fn(Tensor::vector(x)));
}

}  // namespace detail

// Points in (0, 1) where the path x' + a (x - x') crosses a kink of a
// piecewise op inside fn, located by bisection to ~1e-13 from a uniform
// grid of sign patterns. A unit that flips twice within one grid cell is
// not seen.
inline std::vector<double> path_kinks(const ScalarFn& fn, const std::vector<double>& xv, const std::vector<double>& bv,
                                      int grid = 128) {
  std::vector<double> point(xv.size());
  auto signs = [&](double a) {
    for (std::size_t i = 0; i < xv.size(); ++i) point[i] = bv[i] + a * (xv[i] - bv[i]);
    ad::KinkProbe probe;
    ad::NoGrad no_grad;
    fn(Tensor::vector(point));
    return probe.signs();
  };
  std::vector<double> kinks;
  std::function<void(double, const std::vector<bool>&, double, const std::vector<bool>&)> refine =
      [&](double a, const std::vector<bool>& sa, double b, const std::vector<bool>& sb) {
        if (sa == sb) return;
        const double m = 0.5 * (a + b);
        if (b - a < 1e-13) {
          kinks.push_back(m);
          return;
        }
        const auto sm = signs(m);
        refine(a, sa, m, sm);
        refine(m, sm, b, sb);
      };
  auto left = signs(0.0);
  for (int g = 0; g < grid; ++g) {
    const double a = static_cast<double>(g) / grid, b = static_cast<double>(g + 1) / grid;
    auto right = signs(b);
    refine(a, left, b, right);
    left = std::move(right);
  }
  return kinks;
}

// Integrated Gradients along the straight path from baseline to x. The path
// integral uses `steps`-point Gauss-Legendre quadrature; with split_at_kinks
// the rule is applied on each piece between kinks of piecewise activations,
// where the integrand is smooth.
inline AttributionReport integrated_gradients(const ScalarFn& fn, const Tensor& x, const Tensor& baseline,
                                              int steps = 50, bool split_at_kinks = true) {
  if (steps < 2) throw ParameterError("integrated gradients needs steps >= 2");
  if (x.rank() != 1 || baseline.shape() != x.shape()) {
    throw DimensionError("IG: input " + ad::shape_str(x.shape()) + " vs baseline " + ad::shape_str(baseline.shape()));
  }
  const std::size_t p = x.size();
  const std::vector<double> xv(x.values().begin(), x.values().end());
  const std::vector<double> bv(baseline.values().begin(), baseline.values().end());
  AttributionReport rep;
  rep.values = xv;
  rep.ig.assign(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) rep.features.push_back("x" + std::to_string(i));

  std::vector<double> edges = {0.0};
  if (split_at_kinks && xv != bv) {
    const auto kinks = path_kinks(fn, xv, bv);
    edges.insert(edges.end(), kinks.begin(), kinks.end());
  }
  edges.push_back(1.0);
  rep.segments = edges.size() - 1;

  const Quadrature q = gauss_legendre(steps);
  std::vector<double> point(p), grad;
  for (std::size_t s = 0; s + 1 < edges.size(); ++s) {
    const double a = edges[s], len = edges[s + 1] - edges[s];
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      const double alpha = a + len * q.nodes[k];
      for (std::size_t i = 0; i < p; ++i) point[i] = bv[i] + alpha * (xv[i] - bv[i]);
      detail::value_and_grad(fn, point, grad);
      for (std::size_t i = 0; i < p; ++i) rep.ig[i] += len * q.weights[k] * grad[i];
    }
  }
  for (std::size_t i = 0; i < p; ++i) rep.ig[i] *= xv[i] - bv[i];
  rep.output = detail::value_only(fn, xv);
  rep.baseline_output = detail::value_only(fn, bv);
  const double total = std::accumulate(rep.ig.begin(), rep.ig.end(), 0.0);
  rep.completeness_gap = std::abs(total - (rep.output - rep.baseline_output));
  return rep;
}

// Risk of a frozen MMF model as a function of its molecular input.
inline AttributionReport molecular_attribution(const models::MmfModel& mmf, const Tensor& bag, const Tensor& x,
                                               const std::vector<std::string>& names, int steps = 50) {
  Tensor h_wsi;
  {
    ad::NoGrad no_grad;
    h_wsi = mmf.amil.encode(bag).h_wsi;
  }
  Rng unused(0);
  const ScalarFn fn = [&](const Tensor& mol) {
    return surv::risk_tensor(mmf.head(h_wsi, mmf.snn.encode(mol, false, unused).h_mol));
  };
  AttributionReport rep = integrated_gradients(fn, x, Tensor(x.shape(), 0.0), steps);
  if (names.size() == rep.features.size()) rep.features = names;
  return rep;
}

// Same for a standalone SNN.
inline AttributionReport molecular_attribution(const models::SnnModel& snn, const Tensor& x,
                                               const std::vector<std::string>& names, int steps = 50) {
  Rng unused(0);
  const ScalarFn fn = [&](const Tensor& mol) { return surv::risk_tensor(snn.forward(mol, false, unused).hazards); };
  AttributionReport rep = integrated_gradients(fn, x, Tensor(x.shape(), 0.0), steps);
  if (names.size() == rep.features.size()) rep.features = names;
  return rep;
}

// ---------------------------------------------------------------------------
// Modality contribution.

struct ModalityShares {
  double wsi = 0.0;
  double mol = 0.0;
};

// Shares of total |IG| of the risk with respect to the two branch
// representations, zero baseline.
inline ModalityShares modality_contribution_at(const models::MmfModel& mmf, const Tensor& h_wsi, const Tensor& h_mol,
                                               int steps = 50) {
  const std::size_t nw = h_wsi.size(), nm = h_mol.size();
  Tensor joint;
  {
    ad::NoGrad no_grad;
    joint = ad::concat(h_wsi, h_mol);
  }
  const ScalarFn fn = [&](const Tensor& z) {
    return surv::risk_tensor(mmf.head(ad::slice(z, 0, nw), ad::slice(z, nw, nm)));
  };
  const AttributionReport rep = integrated_gradients(fn, joint, Tensor(joint.shape(), 0.0), steps);
  double sw = 0.0, sm = 0.0;
  for (std::size_t i = 0; i < nw; ++i) sw += std::abs(rep.ig[i]);
  for (std::size_t i = nw; i < nw + nm; ++i) sm += std::abs(rep.ig[i]);
  const double total = sw + sm;
  if (total < 1e-12) throw DegenerateModelError("total modality attribution is below 1e-12");
  return {sw / total, sm / total};
}

inline ModalityShares modality_contribution(const models::MmfModel& mmf, const Tensor& bag, const Tensor& x,
                                            int steps = 50) {
  Tensor h_wsi, h_mol;
  {
    ad::NoGrad no_grad;
    Rng unused(0);
    h_wsi = mmf.amil.encode(bag).h_wsi;
    h_mol = mmf.snn.encode(x, false, unused).h_mol;
  }
  return modality_contribution_at(mmf, h_wsi, h_mol, steps);
}

// ---------------------------------------------------------------------------
// Attention maps.

struct AttentionMap {
  std::vector<std::size_t> patch_ids;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> raw;
  std::vector<double> percentile;

  std::size_t size() const { return raw.size(); }
};

// Mid-rank empirical percentile of every score within the reference, then
// min-max scaled over the emitted set when it holds two distinct values.
inline std::vector<double> attention_percentiles(const std::vector<double>& scores, const std::vector<double>& reference) {
  if (reference.empty()) throw PreconditionError("attention percentiles need a nonempty reference");
  std::vector<double> ref = reference;
  std::sort(ref.begin(), ref.end());
  const auto n = static_cast<double>(ref.size());
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto lo = std::lower_bound(ref.begin(), ref.end(), scores[i]);
    const auto hi = std::upper_bound(lo, ref.end(), scores[i]);
    out[i] = (static_cast<double>(lo - ref.begin()) + 0.5 * static_cast<double>(hi - lo)) / n;
  }
  if (out.empty()) return out;
  const auto [mn, mx] = std::minmax_element(out.begin(), out.end());
  const double lo = *mn, span = *mx - *mn;
  if (span > 0)
    for (double& v : out) v = (v - lo) / span;
  return out;
}

// Attention of one bag with the patient's own scores as reference.
inline AttentionMap attention_map(const std::vector<double>& raw, const std::vector<double>& xs,
                                  const std::vector<double>& ys) {
  if (xs.size() != raw.size() || ys.size() != raw.size()) throw DimensionError("attention map: coordinate count mismatch");
  AttentionMap map;
  map.patch_ids.resize(raw.size());
  std::iota(map.patch_ids.begin(), map.patch_ids.end(), 0);
  map.x = xs;
  map.y = ys;
  map.raw = raw;
  map.percentile = raw.empty() ? std::vector<double>{} : attention_percentiles(raw, raw);
  return map;
}

// The ceil(frac * M) highest-scoring patches, ties to the lower patch id.
inline std::vector<std::size_t> top_attention_patches(const AttentionMap& map, double frac = 0.01) {
  if (!(frac > 0.0 && frac <= 1.0)) throw ParameterError("top-attention fraction must lie in (0, 1]");
  if (map.size() == 0) throw PreconditionError("top-attention selection on an empty map");
  const auto m = static_cast<double>(map.size());
  // Guard the product against representation error (0.01 * 13487 = 134.87...).
  const auto k = std::min(map.size(), static_cast<std::size_t>(std::ceil(frac * m - 1e-9)));
  std::vector<std::size_t> order(map.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (map.raw[a] != map.raw[b]) return map.raw[a] > map.raw[b];
    return map.patch_ids[a] < map.patch_ids[b];
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::max<std::size_t>(k, 1); ++i) out.push_back(map.patch_ids[order[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// Tumor-infiltrating lymphocyte heuristic.

struct TilThresholds {
  std::int64_t total = 20;
  std::int64_t lymphocytes = 10;
  std::int64_t tumor = 5;
};

inline constexpr TilThresholds kTil{};

struct PatchCellCounts {
  std::size_t patch_id = 0;
  std::int64_t total = 0;
  std::int64_t lymphocytes = 0;
  std::int64_t tumor = 0;

  void validate() const {
    if (total < 0 || lymphocytes < 0 || tumor < 0) throw DataError("cell counts must be nonnegative");
    if (lymphocytes + tumor > total) throw DataError("lymphocytes + tumor cells exceed the total cell count");
  }
};

inline bool til_positive(const PatchCellCounts& c, const TilThresholds& t = kTil) {
  return c.total > t.total && c.lymphocytes > t.lymphocytes && c.tumor > t.tumor;
}

inline double til_fraction(const std::vector<PatchCellCounts>& counts, const TilThresholds& t = kTil) {
  if (counts.empty()) throw PreconditionError("TIL fraction over zero patches");
  const auto pos = std::count_if(counts.begin(), counts.end(), [&](const auto& c) { return til_positive(c, t); });
  return static_cast<double>(pos) / static_cast<double>(counts.size());
}

}  // namespace survfuse::interp
