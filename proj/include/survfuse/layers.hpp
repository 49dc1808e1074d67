#pragma once

// Layer primitives: linear maps, SeLU and alpha dropout, gated attention
// scoring and pooling over a bag of instances, modality gating, and the
// ones-appended Kronecker fusion of two representations.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "survfuse/error.hpp"
#include "survfuse/random.hpp"
#include "survfuse/tensor.hpp"

namespace survfuse::nn {

using ad::Tensor;

enum class Init { lecun_normal, kaiming_normal };

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct SeluConstants {
  double alpha = 1.6732632423543772;
  double lambda = 1.0507009873554805;
};

inline constexpr SeluConstants kSelu{};

class LinearLayer {
 public:
  LinearLayer() = default;

  // Normal init with std 1/sqrt(in) (lecun) or sqrt(2/in) (kaiming); zero bias.
  LinearLayer(std::size_t in, std::size_t out, Init init, Rng& rng, bool with_bias = true) : init_(init) {
    if (in == 0 || out == 0) throw ParameterError("linear layer dims must be positive");
    const double stddev = init == Init::lecun_normal ? 1.0 / std::sqrt(static_cast<double>(in))
                                                     : std::sqrt(2.0 / static_cast<double>(in));
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> w(in * out);
    for (double& v : w) v = dist(rng);
    weight = Tensor::parameter({out, in}, std::move(w));
    if (with_bias) bias = Tensor::parameter({out}, std::vector<double>(out, 0.0));
  }

  std::size_t in_dim() const { return weight.shape()[1]; }
  std::size_t out_dim() const { return weight.shape()[0]; }
  Init init() const { return init_; }

  Tensor operator()(const Tensor& x) const { return ad::linear(x, weight, bias); }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }

  Tensor weight;
  Tensor bias;

 private:
  Init init_ = Init::kaiming_normal;
};

inline Tensor selu(const Tensor& x, SeluConstants c = kSelu) { return ad::selu(x, c.alpha, c.lambda); }

// Affine correction that keeps a standard-normal input at zero mean and unit
// variance after dropping units to the SeLU saturation value -lambda*alpha.
struct AlphaDropoutAffine {
  double a;
  double b;
  double saturation;
};

inline AlphaDropoutAffine alpha_dropout_affine(double keep, SeluConstants c = kSelu) {
  if (!(keep > 0.0 && keep <= 1.0)) throw ParameterError("alpha dropout keep probability must lie in (0, 1]");
  const double sat = -c.lambda * c.alpha;
  // Moments of x*d + sat*(1-d) for x ~ (mean 0, var 1), d ~ Bernoulli(keep).
  const double mean = (1.0 - keep) * sat;
  const double var = keep * ((1.0 - keep) * sat * sat + 1.0);
  const double a = 1.0 / std::sqrt(var);
  return {a, -a * mean, sat};
}

inline Tensor alpha_dropout(const Tensor& x, double keep, bool training, Rng& rng,
                            SeluConstants c = kSelu) {
  const AlphaDropoutAffine aff = alpha_dropout_affine(keep, c);
  if (!training || keep == 1.0) return x;
  std::bernoulli_distribution keep_unit(keep);
  Tensor mask(x.shape());
  Tensor shift(x.shape());
  auto m = mask.values_mut();
  auto s = shift.values_mut();
  for (std::size_t i = 0; i < m.size(); ++i) {
    const bool kept = keep_unit(rng);
    m[i] = kept ? aff.a : 0.0;
    s[i] = (kept ? 0.0 : aff.a * aff.saturation) + aff.b;
  }
  return ad::add(ad::mul(x, mask), shift);
}

// Gated attention scorer: W_a (tanh(V_a h) ⊙ sigm(U_a h)). W_a has no bias,
// since softmax would cancel it.
struct GatedAttentionParams {
  GatedAttentionParams() = default;
  GatedAttentionParams(std::size_t in, std::size_t hidden, Rng& rng)
      : value(in, hidden, Init::kaiming_normal, rng),
        gate(in, hidden, Init::kaiming_normal, rng),
        score(hidden, 1, Init::kaiming_normal, rng, false) {}

  void collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    value.collect(out, prefix + ".value");
    gate.collect(out, prefix + ".gate");
    score.collect(out, prefix + ".score");
  }

  LinearLayer value;  // V_a, tanh branch
  LinearLayer gate;   // U_a, sigmoid branch
  LinearLayer score;  // W_a
};

// Softmax-normalized attention weight of every row of the bag H [M x h].
inline Tensor gated_attention_scores(const Tensor& bag, const GatedAttentionParams& params) {
  if (bag.rank() != 2 || bag.shape()[0] == 0) throw PreconditionError("attention over an empty bag");
  if (bag.shape()[1] != params.value.in_dim()) {
    throw DimensionError("attention: bag " + ad::shape_str(bag.shape()) + " does not match input dim " +
                         std::to_string(params.value.in_dim()));
  }
  const Tensor gated = ad::mul(ad::tanh(params.value(bag)), ad::sigmoid(params.gate(bag)));
  const Tensor logits = params.score(gated);  // [M x 1]
  return ad::softmax(ad::reshape(logits, {bag.shape()[0]}));
}

// Σ_m a_m h_m.
inline Tensor attention_pool(const Tensor& weights, const Tensor& bag) {
  if (weights.rank() != 1 || bag.rank() != 2 || weights.size() != bag.shape()[0]) {
    throw DimensionError("attention_pool: weights " + ad::shape_str(weights.shape()) + " vs bag " +
                         ad::shape_str(bag.shape()));
  }
  const Tensor pooled = ad::matmul(ad::reshape(weights, {1, weights.size()}), bag);
  return ad::reshape(pooled, {bag.shape()[1]});
}

// Per-modality feature transform plus a sigmoid gate scored from both raw
// representations.
struct GateParams {
  GateParams() = default;
  GateParams(std::size_t wsi_dim, std::size_t mol_dim, Rng& rng)
      : transform_wsi(wsi_dim, wsi_dim, Init::kaiming_normal, rng),
        transform_mol(mol_dim, mol_dim, Init::kaiming_normal, rng),
        score_wsi(wsi_dim + mol_dim, wsi_dim, Init::kaiming_normal, rng),
        score_mol(wsi_dim + mol_dim, mol_dim, Init::kaiming_normal, rng) {}

  void collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    transform_wsi.collect(out, prefix + ".transform_wsi");
    transform_mol.collect(out, prefix + ".transform_mol");
    score_wsi.collect(out, prefix + ".score_wsi");
    score_mol.collect(out, prefix + ".score_mol");
  }

  LinearLayer transform_wsi;
  LinearLayer transform_mol;
  LinearLayer score_wsi;
  LinearLayer score_mol;
};

struct GatedPair {
  Tensor wsi;
  Tensor mol;
};

inline GatedPair modality_gate(const Tensor& h_wsi, const Tensor& h_mol, const GateParams& params) {
  if (h_wsi.rank() != 1 || h_mol.rank() != 1 || h_wsi.size() != params.transform_wsi.in_dim() ||
      h_mol.size() != params.transform_mol.in_dim()) {
    throw DimensionError("modality_gate: reps " + ad::shape_str(h_wsi.shape()) + " and " +
                         ad::shape_str(h_mol.shape()) + " do not match gate dims");
  }
  const Tensor joint = ad::concat(h_wsi, h_mol);
  const Tensor wsi = ad::relu(params.transform_wsi(h_wsi));
  const Tensor mol = ad::relu(params.transform_mol(h_mol));
  const Tensor z_wsi = ad::sigmoid(params.score_wsi(joint));
  const Tensor z_mol = ad::sigmoid(params.score_mol(joint));
  return {ad::mul(z_wsi, wsi), ad::mul(z_mol, mol)};
}

// Flattened [u;1] ⊗ [v;1], row-major over u: entry (i, j) sits at i*(m+1)+j.
inline Tensor kron_fusion(const Tensor& u, const Tensor& v) {
  if (u.rank() != 1 || v.rank() != 1 || u.size() == 0 || v.size() == 0) {
    throw PreconditionError("kron_fusion expects two nonempty vectors");
  }
  const std::size_t n = u.size() + 1, m = v.size() + 1;
  auto ext = [](const Tensor& t, std::size_t i) { return i < t.size() ? t[i] : 1.0; };
  Tensor out({n * m});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) o[i * m + j] = ext(u, i) * ext(v, j);
  if (ad::Tape* tape = ad::detail::recorder({&u, &v})) {
    tape->record(out, {&u, &v}, [us = u.share(), vs = v.share(), oi = out.impl(), n, m] {
      auto uext = [&](std::size_t i) { return i + 1 < n ? us->value[i] : 1.0; };
      auto vext = [&](std::size_t j) { return j + 1 < m ? vs->value[j] : 1.0; };
      if (us->requires_grad)
        for (std::size_t i = 0; i + 1 < n; ++i) {
          double g = 0.0;
          for (std::size_t j = 0; j < m; ++j) g += oi->grad[i * m + j] * vext(j);
          us->grad[i] += g;
        }
      if (vs->requires_grad)
        for (std::size_t j = 0; j + 1 < m; ++j) {
          double g = 0.0;
          for (std::size_t i = 0; i < n; ++i) g += oi->grad[i * m + j] * uext(i);
          vs->grad[j] += g;
        }
    });
  }
  return out;
}

}  // namespace survfuse::nn
