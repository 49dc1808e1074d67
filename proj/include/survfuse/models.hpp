#pragma once

// The three survival networks. Each predicts four discrete-time hazards:
//   AMIL  bag of instance embeddings -> gated attention pooling -> hazards
//   SNN   molecular vector -> two SeLU/alpha-dropout layers -> hazards
//   MMF   both branches -> modality gate -> Kronecker fusion -> MLP -> hazards

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "survfuse/error.hpp"
#include "survfuse/layers.hpp"
#include "survfuse/random.hpp"
#include "survfuse/survival.hpp"
#include "survfuse/tensor.hpp"

namespace survfuse::models {

using ad::Tensor;
using nn::Init;
using nn::LinearLayer;
using nn::NamedParam;

struct ModelDims {
  std::size_t wsi_in = 16;
  std::size_t mol_in = 32;
  std::size_t projection = 512;
  std::size_t attention = 256;
  std::size_t rep = 32;
  std::size_t snn_hidden = 256;
  std::size_t fusion_hidden = 256;
  double dropout_keep = 0.75;
};

enum class ModelKind { snn, amil, mmf };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::snn: return "snn";
    case ModelKind::amil: return "amil";
    case ModelKind::mmf: return "mmf";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "snn") return ModelKind::snn;
  if (s == "amil") return ModelKind::amil;
  if (s == "mmf") return ModelKind::mmf;
  throw ParameterError("unknown model kind '" + std::string(s) + "' (expected snn, amil or mmf)");
}

// Forward outputs; fields a model does not produce stay undefined.
struct Prediction {
  Tensor hazards;
  Tensor h_wsi;
  Tensor h_mol;
  Tensor attention;
};

class AmilModel {
 public:
  struct Encoding {
    Tensor pooled;     // [projection]
    Tensor attention;  // [M]
    Tensor h_wsi;      // [rep]
  };

  AmilModel() = default;
  AmilModel(const ModelDims& dims, Rng& rng)
      : projection(dims.wsi_in, dims.projection, Init::kaiming_normal, rng),
        attention(dims.projection, dims.attention, rng),
        rep_head(dims.projection, dims.rep, Init::kaiming_normal, rng),
        hazard_head(dims.projection, surv::kNumBins, Init::kaiming_normal, rng) {}

  Encoding encode(const Tensor& bag) const {
    if (bag.rank() != 2 || bag.shape()[0] == 0) throw PreconditionError("AMIL forward on an empty bag");
    if (bag.shape()[1] != projection.in_dim()) {
      throw DimensionError("AMIL: bag " + ad::shape_str(bag.shape()) + " but embedding dim is " +
                           std::to_string(projection.in_dim()));
    }
    const Tensor h = ad::relu(projection(bag));
    Tensor a = nn::gated_attention_scores(h, attention);
    Tensor pooled = nn::attention_pool(a, h);
    Tensor rep = ad::relu(rep_head(pooled));
    return {pooled, a, rep};
  }

  Prediction forward(const Tensor& bag, bool /*training*/ = false) const {
    Encoding e = encode(bag);
    return {ad::sigmoid(hazard_head(e.pooled)), e.h_wsi, Tensor(), e.attention};
  }

  void collect_trunk(std::vector<NamedParam>& out, const std::string& prefix) const {
    projection.collect(out, prefix + ".projection");
    attention.collect(out, prefix + ".attention");
    rep_head.collect(out, prefix + ".rep_head");
  }

  std::vector<NamedParam> parameters() const {
    std::vector<NamedParam> out;
    projection.collect(out, "amil.projection");
    attention.collect(out, "amil.attention");
    hazard_head.collect(out, "amil.hazard_head");
    return out;
  }

  LinearLayer projection;
  nn::GatedAttentionParams attention;
  LinearLayer rep_head;
  LinearLayer hazard_head;
};

class SnnModel {
 public:
  struct Encoding {
    Tensor hidden;  // [snn_hidden]
    Tensor h_mol;   // [rep]
  };

  SnnModel() = default;
  SnnModel(const ModelDims& dims, Rng& rng)
      : hidden1(dims.mol_in, dims.snn_hidden, Init::lecun_normal, rng),
        hidden2(dims.snn_hidden, dims.snn_hidden, Init::lecun_normal, rng),
        rep_head(dims.snn_hidden, dims.rep, Init::lecun_normal, rng),
        hazard_head(dims.snn_hidden, surv::kNumBins, Init::kaiming_normal, rng),
        keep_(dims.dropout_keep) {
    nn::alpha_dropout_affine(keep_);
  }

  Encoding encode(const Tensor& x, bool training, Rng& rng) const {
    if (x.rank() != 1 || x.size() != hidden1.in_dim()) {
      throw DimensionError("SNN: molecular input " + ad::shape_str(x.shape()) + " but expected [" +
                           std::to_string(hidden1.in_dim()) + "]");
    }
    const Tensor h1 = nn::alpha_dropout(nn::selu(hidden1(x)), keep_, training, rng);
    Tensor h2 = nn::alpha_dropout(nn::selu(hidden2(h1)), keep_, training, rng);
    Tensor rep = nn::alpha_dropout(nn::selu(rep_head(h2)), keep_, training, rng);
    return {h2, rep};
  }

  Prediction forward(const Tensor& x, bool training, Rng& rng) const {
    Encoding e = encode(x, training, rng);
    return {ad::sigmoid(hazard_head(e.hidden)), Tensor(), e.h_mol, Tensor()};
  }

  void collect_trunk(std::vector<NamedParam>& out, const std::string& prefix) const {
    hidden1.collect(out, prefix + ".hidden1");
    hidden2.collect(out, prefix + ".hidden2");
    rep_head.collect(out, prefix + ".rep_head");
  }

  std::vector<NamedParam> parameters() const {
    std::vector<NamedParam> out;
    hidden1.collect(out, "snn.hidden1");
    hidden2.collect(out, "snn.hidden2");
    hazard_head.collect(out, "snn.hazard_head");
    return out;
  }

  double keep_prob() const { return keep_; }

  LinearLayer hidden1;
  LinearLayer hidden2;
  LinearLayer rep_head;
  LinearLayer hazard_head;

 private:
  double keep_ = 0.75;
};

class MmfModel {
 public:
  MmfModel() = default;
  MmfModel(const ModelDims& dims, Rng& rng)
      : amil(dims, rng),
        snn(dims, rng),
        gate(dims.rep, dims.rep, rng),
        fusion1((dims.rep + 1) * (dims.rep + 1), dims.fusion_hidden, Init::kaiming_normal, rng),
        fusion2(dims.fusion_hidden, dims.fusion_hidden, Init::kaiming_normal, rng),
        hazard_head(dims.fusion_hidden, surv::kNumBins, Init::kaiming_normal, rng) {}

  // Hazards from the two branch representations.
  Tensor head(const Tensor& h_wsi, const Tensor& h_mol) const {
    const nn::GatedPair g = nn::modality_gate(h_wsi, h_mol, gate);
    const Tensor fused = nn::kron_fusion(g.wsi, g.mol);
    const Tensor z = ad::relu(fusion2(ad::relu(fusion1(fused))));
    return ad::sigmoid(hazard_head(z));
  }

  Prediction forward(const Tensor& bag, const Tensor& x, bool training, Rng& rng) const {
    AmilModel::Encoding w = amil.encode(bag);
    SnnModel::Encoding m = snn.encode(x, training, rng);
    return {head(w.h_wsi, m.h_mol), w.h_wsi, m.h_mol, w.attention};
  }

  std::vector<NamedParam> parameters() const {
    std::vector<NamedParam> out;
    amil.collect_trunk(out, "mmf.amil");
    snn.collect_trunk(out, "mmf.snn");
    gate.collect(out, "mmf.gate");
    fusion1.collect(out, "mmf.fusion1");
    fusion2.collect(out, "mmf.fusion2");
    hazard_head.collect(out, "mmf.hazard_head");
    return out;
  }

  AmilModel amil;
  SnnModel snn;
  nn::GateParams gate;
  LinearLayer fusion1;
  LinearLayer fusion2;
  LinearLayer hazard_head;
};

// Uniform face over the three networks for training, evaluation and
// checkpointing.
class SurvivalModel {
 public:
  virtual ~SurvivalModel() = default;
  virtual ModelKind kind() const = 0;
  virtual std::vector<NamedParam> parameters() const = 0;
  // Either input may be undefined when the model does not read it.
  virtual Prediction forward(const Tensor& bag, const Tensor& mol, bool training, Rng& rng) const = 0;
  const ModelDims& dims() const { return dims_; }

 protected:
  explicit SurvivalModel(const ModelDims& dims) : dims_(dims) {}
  ModelDims dims_;
};

class AmilSurvival final : public SurvivalModel {
 public:
  AmilSurvival(const ModelDims& dims, Rng& rng) : SurvivalModel(dims), net(dims, rng) {}
  ModelKind kind() const override { return ModelKind::amil; }
  std::vector<NamedParam> parameters() const override { return net.parameters(); }
  Prediction forward(const Tensor& bag, const Tensor&, bool training, Rng&) const override {
    return net.forward(bag, training);
  }
  AmilModel net;
};

class SnnSurvival final : public SurvivalModel {
 public:
  SnnSurvival(const ModelDims& dims, Rng& rng) : SurvivalModel(dims), net(dims, rng) {}
  ModelKind kind() const override { return ModelKind::snn; }
  std::vector<NamedParam> parameters() const override { return net.parameters(); }
  Prediction forward(const Tensor&, const Tensor& mol, bool training, Rng& rng) const override {
    return net.forward(mol, training, rng);
  }
  SnnModel net;
};

class MmfSurvival final : public SurvivalModel {
 public:
  MmfSurvival(const ModelDims& dims, Rng& rng) : SurvivalModel(dims), net(dims, rng) {}
  ModelKind kind() const override { return ModelKind::mmf; }
  std::vector<NamedParam> parameters() const override { return net.parameters(); }
  Prediction forward(const Tensor& bag, const Tensor& mol, bool training, Rng& rng) const override {
    return net.forward(bag, mol, training, rng);
  }
  MmfModel net;
};

inline std::unique_ptr<SurvivalModel> make_model(ModelKind kind, const ModelDims& dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xC0FFEE));
  switch (kind) {
    case ModelKind::snn: return std::make_unique<SnnSurvival>(dims, rng);
    case ModelKind::amil: return std::make_unique<AmilSurvival>(dims, rng);
    case ModelKind::mmf: return std::make_unique<MmfSurvival>(dims, rng);
  }
  throw ParameterError("unknown model kind");
}

using surv::risk_score;

// Inference-mode scalar risk for one patient.
inline double predict_risk(const SurvivalModel& model, const Tensor& bag, const Tensor& mol) {
  ad::NoGrad no_grad;
  Rng unused(0);
  return surv::risk_tensor(model.forward(bag, mol, false, unused).hazards).item();
}

}  // namespace survfuse::models
