#pragma once

// Evaluation statistics for right-censored survival predictions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "survfuse/error.hpp"
#include "survfuse/random.hpp"
#include "survfuse/survival.hpp"

namespace survfuse::stats {

struct RiskRow {
  std::string patient_id;
  double risk = 0.0;
  double time = 0.0;
  bool censored = false;
};

using RiskTable = std::vector<RiskRow>;

inline void validate(const RiskTable& table) {
  std::set<std::string> ids;
  for (const auto& r : table) {
    if (!std::isfinite(r.risk)) throw DataError("non-finite risk for patient " + r.patient_id);
    if (!ids.insert(r.patient_id).second) throw DataError("duplicate patient id " + r.patient_id + " in risk table");
  }
}

// ---------------------------------------------------------------------------
// Special functions.

namespace detail {

inline constexpr int kMaxIter = 10000;
inline constexpr double kEps = 1e-16;
inline constexpr double kTiny = 1e-300;

// Series for P(a, x), valid for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double ap = a, sum = 1.0 / a, del = sum;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction (modified Lentz) for Q(a, x), valid for x >= a + 1.
inline double gamma_q_cf(double a, double x) {
  double b = x + 1.0 - a, c = 1.0 / kTiny, d = 1.0 / b, h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Continued fraction for the incomplete beta function.
inline double beta_cf(double a, double b, double x) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m < kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (!(a > 0) || x < 0) throw DomainError("gamma_p requires a > 0 and x >= 0");
  if (x == 0) return 0.0;
  return x < a + 1.0 ? detail::gamma_p_series(a, x) : 1.0 - detail::gamma_q_cf(a, x);
}

// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
inline double gamma_q(double a, double x) {
  if (!(a > 0) || x < 0) throw DomainError("gamma_q requires a > 0 and x >= 0");
  if (x == 0) return 1.0;
  return x < a + 1.0 ? 1.0 - detail::gamma_p_series(a, x) : detail::gamma_q_cf(a, x);
}

// Regularized incomplete beta I_x(a, b).
inline double beta_inc(double a, double b, double x) {
  if (!(a > 0) || !(b > 0) || x < 0 || x > 1) throw DomainError("beta_inc argument out of range");
  if (x == 0) return 0.0;
  if (x == 1) return 1.0;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

inline double chi2_cdf(double x, double dof) { return x <= 0 ? 0.0 : gamma_p(0.5 * dof, 0.5 * x); }
inline double chi2_sf(double x, double dof) { return x <= 0 ? 1.0 : gamma_q(0.5 * dof, 0.5 * x); }

// Two-sided tail probability P(|T| >= |t|) for Student's t.
inline double student_t_two_sided(double t, double dof) {
  if (!(dof > 0)) throw DomainError("t distribution needs positive degrees of freedom");
  return beta_inc(0.5 * dof, 0.5, dof / (dof + t * t));
}

// ---------------------------------------------------------------------------
// Concordance.

struct Concordance {
  std::uint64_t concordant = 0;
  std::uint64_t tied = 0;
  std::uint64_t comparable = 0;

  double value() const { return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) / static_cast<double>(comparable); }
};

// Pair (i, j) is comparable when i had an observed event and t_i < t_j.
// Counted in O(n log n) with a Fenwick tree over risk ranks.
inline Concordance concordance_counts(const RiskTable& table) {
  const std::size_t n = table.size();
  std::vector<double> ranks_src(n);
  for (std::size_t i = 0; i < n; ++i) ranks_src[i] = table[i].risk;
  std::sort(ranks_src.begin(), ranks_src.end());
  ranks_src.erase(std::unique(ranks_src.begin(), ranks_src.end()), ranks_src.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(ranks_src.begin(), ranks_src.end(), r) - ranks_src.begin()) + 1;
  };
  std::vector<std::uint64_t> tree(ranks_src.size() + 1, 0);
  auto add = [&](std::size_t k) {
    for (; k < tree.size(); k += k & (~k + 1)) ++tree[k];
  };
  auto prefix = [&](std::size_t k) {
    std::uint64_t s = 0;
    for (; k > 0; k -= k & (~k + 1)) s += tree[k];
    return s;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return table[a].time > table[b].time; });

  Concordance c;
  std::uint64_t inserted = 0;
  for (std::size_t g = 0; g < n;) {
    std::size_t end = g;
    while (end < n && table[order[end]].time == table[order[g]].time) ++end;
    for (std::size_t k = g; k < end; ++k) {
      const auto& row = table[order[k]];
      if (row.censored) continue;
      const std::size_t rk = rank_of(row.risk);
      const std::uint64_t below = prefix(rk - 1);
      const std::uint64_t equal = prefix(rk) - below;
      c.concordant += below;
      c.tied += equal;
      c.comparable += inserted;
    }
    for (std::size_t k = g; k < end; ++k) add(rank_of(table[order[k]].risk));
    inserted += end - g;
    g = end;
  }
  return c;
}

inline double c_index(const RiskTable& table) {
  const Concordance c = concordance_counts(table);
  if (c.comparable == 0) throw DataError("c-index undefined: no comparable pairs");
  return c.value();
}

inline std::optional<double> try_c_index(const RiskTable& table) {
  const Concordance c = concordance_counts(table);
  if (c.comparable == 0) return std::nullopt;
  return c.value();
}

// ---------------------------------------------------------------------------
// Kaplan-Meier.

struct KmCurve {
  std::vector<double> times;  // distinct event times, ascending
  std::vector<double> survival;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;

  double survival_at(double t) const {
    double s = 1.0;
    for (std::size_t i = 0; i < times.size() && times[i] <= t; ++i) s = survival[i];
    return s;
  }
};

inline KmCurve km_estimator(const std::vector<double>& times, const std::vector<bool>& censored) {
  if (times.empty()) throw PreconditionError("Kaplan-Meier estimate of an empty sample");
  if (times.size() != censored.size()) throw DimensionError("times and censoring flags differ in length");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  KmCurve curve;
  std::size_t at_risk = times.size();
  double s = 1.0;
  for (std::size_t g = 0; g < order.size();) {
    std::size_t end = g, deaths = 0;
    while (end < order.size() && times[order[end]] == times[order[g]]) {
      if (!censored[order[end]]) ++deaths;
      ++end;
    }
    if (deaths > 0) {
      s *= static_cast<double>(at_risk - deaths) / static_cast<double>(at_risk);
      curve.times.push_back(times[order[g]]);
      curve.survival.push_back(s);
      curve.at_risk.push_back(at_risk);
      curve.events.push_back(deaths);
    }
    at_risk -= end - g;
    g = end;
  }
  return curve;
}

inline KmCurve km_estimator(const RiskTable& table) {
  std::vector<double> t;
  std::vector<bool> c;
  for (const auto& r : table) {
    t.push_back(r.time);
    c.push_back(r.censored);
  }
  return km_estimator(t, c);
}

// ---------------------------------------------------------------------------
// Logrank.

struct LogrankResult {
  double chi2 = 0.0;
  double p = 1.0;
};

inline LogrankResult logrank_test(const RiskTable& a, const RiskTable& b) {
  struct Obs {
    double time;
    bool event;
    bool in_a;
  };
  std::vector<Obs> all;
  for (const auto& r : a) all.push_back({r.time, !r.censored, true});
  for (const auto& r : b) all.push_back({r.time, !r.censored, false});
  if (std::none_of(all.begin(), all.end(), [](const Obs& o) { return o.event; })) {
    throw DataError("logrank test needs at least one observed event");
  }
  std::sort(all.begin(), all.end(), [](const Obs& x, const Obs& y) { return x.time < y.time; });
  double n_a = static_cast<double>(a.size()), n_b = static_cast<double>(b.size());
  double observed_minus_expected = 0.0, variance = 0.0;
  for (std::size_t g = 0; g < all.size();) {
    std::size_t end = g;
    double d_a = 0, d_b = 0, leave_a = 0, leave_b = 0;
    while (end < all.size() && all[end].time == all[g].time) {
      const auto& o = all[end];
      (o.in_a ? leave_a : leave_b) += 1;
      if (o.event) (o.in_a ? d_a : d_b) += 1;
      ++end;
    }
    const double d = d_a + d_b, n = n_a + n_b;
    if (d > 0) {
      observed_minus_expected += d_a - d * n_a / n;
      if (n > 1) variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
    }
    n_a -= leave_a;
    n_b -= leave_b;
    g = end;
  }
  LogrankResult res;
  res.chi2 = variance > 0 ? observed_minus_expected * observed_minus_expected / variance : 0.0;
  res.p = chi2_sf(res.chi2, 1.0);
  return res;
}

// ---------------------------------------------------------------------------
// Bootstrap.

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t redraws = 0;
};

using TableStatistic = std::function<std::optional<double>(const RiskTable&)>;

// Percentile interval over `replicates` resamples with replacement. Resamples
// on which the statistic is undefined are redrawn, up to 10x replicates
// draws in total. Each draw has its own derived seed, so the result does not
// depend on evaluation order.
inline Interval bootstrap_ci(const RiskTable& table, const TableStatistic& statistic, std::size_t replicates,
                             std::uint64_t seed, double level = 0.95) {
  if (replicates < 2) throw ParameterError("bootstrap needs at least 2 replicates");
  if (!(level > 0 && level < 1)) throw ParameterError("confidence level must lie in (0, 1)");
  if (table.empty()) throw PreconditionError("bootstrap of an empty table");
  std::vector<double> values;
  values.reserve(replicates);
  const std::size_t cap = 10 * replicates;
  std::size_t draws = 0;
  RiskTable sample(table.size());
  while (values.size() < replicates) {
    if (draws == cap) throw DataError("bootstrap: statistic undefined on too many resamples");
    Rng rng(derive_seed(seed, draws++));
    std::uniform_int_distribution<std::size_t> pick(0, table.size() - 1);
    for (auto& row : sample) row = table[pick(rng)];
    if (auto v = statistic(sample)) values.push_back(*v);
  }
  std::sort(values.begin(), values.end());
  Interval iv;
  iv.lo = surv::quantile_sorted(values, (1.0 - level) / 2.0);
  iv.hi = surv::quantile_sorted(values, 1.0 - (1.0 - level) / 2.0);
  iv.redraws = draws - replicates;
  return iv;
}

// ---------------------------------------------------------------------------
// Welch two-sample t-test.

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double dof = 0.0;
};

inline TTestResult two_sample_t(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() < 2 || ys.size() < 2) throw DataError("t-test needs at least 2 observations per sample");
  auto moments = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [mx, vx] = moments(xs);
  const auto [my, vy] = moments(ys);
  const double nx = static_cast<double>(xs.size()), ny = static_cast<double>(ys.size());
  const double ax = vx / nx, ay = vy / ny;
  const double se2 = ax + ay;
  if (!(se2 > 0)) throw DataError("t-test undefined: both samples have zero variance");
  TTestResult r;
  r.t = (mx - my) / std::sqrt(se2);
  r.dof = se2 * se2 / (ax * ax / (nx - 1.0) + ay * ay / (ny - 1.0));
  r.p = student_t_two_sided(r.t, r.dof);
  return r;
}

// ---------------------------------------------------------------------------
// Risk groups.

enum class RiskGroup { low, middle, high };
enum class GroupScheme { median, quartile };

inline std::string to_string(RiskGroup g) {
  switch (g) {
    case RiskGroup::low: return "low";
    case RiskGroup::middle: return "middle";
    case RiskGroup::high: return "high";
  }
  return "?";
}

// Median: low = risk <= median, high otherwise. Quartile: low = risk < Q1,
// high = risk > Q3, everything else middle.
inline std::vector<RiskGroup> risk_groups(const RiskTable& table, GroupScheme scheme) {
  if (table.empty()) throw PreconditionError("risk groups of an empty table");
  std::vector<double> sorted;
  for (const auto& r : table) sorted.push_back(r.risk);
  std::sort(sorted.begin(), sorted.end());
  std::vector<RiskGroup> out;
  out.reserve(table.size());
  if (scheme == GroupScheme::median) {
    const double med = surv::quantile_sorted(sorted, 0.5);
    for (const auto& r : table) out.push_back(r.risk <= med ? RiskGroup::low : RiskGroup::high);
  } else {
    const double q1 = surv::quantile_sorted(sorted, 0.25);
    const double q3 = surv::quantile_sorted(sorted, 0.75);
    for (const auto& r : table)
      out.push_back(r.risk < q1 ? RiskGroup::low : r.risk > q3 ? RiskGroup::high : RiskGroup::middle);
  }
  return out;
}

inline RiskTable select_group(const RiskTable& table, const std::vector<RiskGroup>& groups, RiskGroup which) {
  RiskTable out;
  for (std::size_t i = 0; i < table.size(); ++i)
    if (groups[i] == which) out.push_back(table[i]);
  return out;
}

// Logrank between the low and high groups of a median split.
inline LogrankResult median_split_logrank(const RiskTable& table) {
  const auto groups = risk_groups(table, GroupScheme::median);
  return logrank_test(select_group(table, groups, RiskGroup::low), select_group(table, groups, RiskGroup::high));
}

}  // namespace survfuse::stats
