#pragma once

// Discrete-time survival: quartile time bins over uncensored event times,
// half-open bin assignment, hazard-to-survival products and the censored
// negative log-likelihood.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "survfuse/error.hpp"
#include "survfuse/tensor.hpp"

namespace survfuse::surv {

using ad::Tensor;

inline constexpr std::size_t kNumBins = 4;
inline constexpr double kLogFloor = 1e-7;

struct SurvivalLabel {
  double time = 0.0;      // months
  bool censored = false;  // true = alive at last follow-up
  std::optional<int> bin;
};

struct TimeBins {
  std::array<double, kNumBins - 1> cuts{};
};

// Linear-interpolation quantile of sorted data (position q*(n-1)).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw PreconditionError("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline TimeBins make_bins(std::span<const SurvivalLabel> labels) {
  std::vector<double> events;
  for (const auto& l : labels)
    if (!l.censored) events.push_back(l.time);
  std::sort(events.begin(), events.end());
  std::vector<double> uniq = events;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < kNumBins) {
    throw DataError("time bins need at least 4 distinct uncensored event times, got " +
                    std::to_string(uniq.size()));
  }
  TimeBins bins;
  for (std::size_t r = 0; r + 1 < kNumBins; ++r) {
    bins.cuts[r] = quantile_sorted(events, static_cast<double>(r + 1) / kNumBins);
  }
  if (!(bins.cuts[0] > 0.0)) throw DataError("first time cut must be positive");
  for (std::size_t r = 1; r < bins.cuts.size(); ++r) {
    if (!(bins.cuts[r] > bins.cuts[r - 1])) throw DataError("time cuts are not strictly increasing");
  }
  return bins;
}

// Bin r such that t ∈ [t_r, t_{r+1}), with t_0 = 0 and t_4 = ∞.
inline int discretize(double t, const TimeBins& bins) {
  if (!(t >= 0.0)) throw DataError("negative survival time " + std::to_string(t));
  int r = 0;
  for (double cut : bins.cuts)
    if (t >= cut) ++r;
  return r;
}

inline void require_valid_hazards(const Tensor& h, bool allow_closed) {
  for (double v : h.values()) {
    const bool ok = allow_closed ? (v >= 0.0 && v <= 1.0) : (v > 0.0 && v < 1.0);
    if (!ok) throw ContractViolation("hazard out of range: " + std::to_string(v));
  }
}

// S(r) = Π_{u<=r} (1 - h(u)).
inline Tensor hazard_to_survival(const Tensor& hazards) {
  require_valid_hazards(hazards, true);
  return ad::cumprod(ad::add_scalar(ad::neg(hazards), 1.0));
}

// Sum of cumulative incidence, Σ_r (1 - S(r)); differentiable.
inline Tensor risk_tensor(const Tensor& hazards) {
  const Tensor s = hazard_to_survival(hazards);
  return ad::add_scalar(ad::neg(ad::sum(s)), static_cast<double>(hazards.size()));
}

inline double risk_score(const Tensor& hazards) {
  require_valid_hazards(hazards, false);
  ad::NoGrad no_grad;
  return risk_tensor(hazards).item();
}

namespace detail {

struct LossTerms {
  Tensor censored_term;    // -log S(Y)
  Tensor uncensored_term;  // -log S(Y-1) - log h(Y)
};

inline LossTerms loss_terms(const Tensor& hazards, const SurvivalLabel& label) {
  if (!label.bin) throw ContractViolation("survival label has no assigned bin");
  const int y = *label.bin;
  if (y < 0 || static_cast<std::size_t>(y) >= hazards.size()) {
    throw ContractViolation("bin index out of range for hazard vector");
  }
  require_valid_hazards(hazards, true);
  const Tensor s = hazard_to_survival(hazards);
  const auto yi = static_cast<std::size_t>(y);
  LossTerms t;
  t.censored_term = ad::neg(ad::log_clamped(ad::index(s, yi), kLogFloor));
  const Tensor s_prev = yi == 0 ? Tensor::scalar(1.0) : ad::index(s, yi - 1);
  t.uncensored_term = ad::neg(ad::add(ad::log_clamped(s_prev, kLogFloor),
                                      ad::log_clamped(ad::index(hazards, yi), kLogFloor)));
  return t;
}

}  // namespace detail

// L = -c log S(Y) - (1-c) log S(Y-1) - (1-c) log h(Y), with S(-1) = 1.
inline Tensor nll_loss(const Tensor& hazards, const SurvivalLabel& label) {
  auto t = detail::loss_terms(hazards, label);
  return label.censored ? t.censored_term : t.uncensored_term;
}

inline Tensor uncensored_loss(const Tensor& hazards, const SurvivalLabel& label) {
  auto t = detail::loss_terms(hazards, label);
  return label.censored ? Tensor::scalar(0.0) : t.uncensored_term;
}

// (1 - beta) L + beta L_uncensored.
inline Tensor combined_loss(const Tensor& hazards, const SurvivalLabel& label, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("loss beta must lie in [0, 1]");
  if (beta == 0.0) return nll_loss(hazards, label);
  return ad::add(ad::scale(nll_loss(hazards, label), 1.0 - beta),
                 ad::scale(uncensored_loss(hazards, label), beta));
}

}  // namespace survfuse::surv
