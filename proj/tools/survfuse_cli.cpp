// survfuse: command-line pipelines over the survfuse library.
//
// Exit codes: 0 success, 1 data/runtime error, 2 usage error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "survfuse/checkpoint.hpp"
#include "survfuse/config.hpp"
#include "survfuse/data_io.hpp"
#include "survfuse/interpret.hpp"
#include "survfuse/report.hpp"
#include "survfuse/stats.hpp"
#include "survfuse/synthetic.hpp"
#include "survfuse/training.hpp"

namespace fs = std::filesystem;
using namespace survfuse;
using Json = nlohmann::ordered_json;

namespace {

// Options shared by commands that accept a run config.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

config::RunConfig resolve(const Common& common, const std::function<void(config::RunConfig&)>& overrides) {
  config::RunConfig cfg = common.config_path.empty() ? config::RunConfig{} : config::load(common.config_path);
  config::apply_env(cfg);
  if (common.seed) cfg.seed = *common.seed;
  overrides(cfg);
  try {
    cfg.validate();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  cfg.train.seed = cfg.seed;
  cfg.synthetic.seed = cfg.seed;
  return cfg;
}

void prepare_out(const std::string& out, const config::RunConfig& cfg) {
  fs::create_directories(out);
  report::write_json((fs::path(out) / "config.json").string(), config::to_json(cfg));
  report::write_text((fs::path(out) / "version.txt").string(), std::string(config::kToolVersion) + "\n");
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

data::Cohort load_data(const config::RunConfig& cfg) {
  if (cfg.data.empty()) throw UsageError("no cohort directory given (--data or config 'data')");
  data::Cohort cohort = data::load_cohort(fs::path(cfg.data));
  for (const auto& msg : cohort.report.excluded) std::cerr << "note: " << msg << "\n";
  if (cfg.filter_enabled) {
    const auto sel = data::filter_genes(data::molecular_matrix(cohort), cohort.meta, cfg.filter_freq_threshold,
                                        cfg.filter_rna_top_k);
    for (const auto& w : sel.warnings) std::cerr << "warning: " << w << "\n";
    if (sel.kept.empty()) throw DataError("gene filter removed every molecular feature");
    cohort = data::apply_selection(cohort, sel);
  }
  std::cerr << "loaded " << cohort.size() << " patients (d=" << cohort.embed_dim << ", p=" << cohort.mol_dim()
            << ")\n";
  return cohort;
}

std::vector<report::NamedCurve> group_curves(const stats::RiskTable& table, stats::GroupScheme scheme) {
  const auto groups = stats::risk_groups(table, scheme);
  std::vector<report::NamedCurve> curves;
  for (auto g : {stats::RiskGroup::low, stats::RiskGroup::high}) {
    const auto sub = stats::select_group(table, groups, g);
    if (!sub.empty()) curves.push_back({stats::to_string(g) + " risk", stats::km_estimator(sub)});
  }
  return curves;
}

// c-index, bootstrap CI, median-split logrank and KM exports for a table.
Json summarize(const stats::RiskTable& table, const config::RunConfig& cfg, const std::string& out, Json j) {
  const auto c = stats::try_c_index(table);
  j["c_index_pooled"] = c ? Json(*c) : Json(nullptr);
  const auto ci = stats::bootstrap_ci(table, [](const stats::RiskTable& t) { return stats::try_c_index(t); },
                                      cfg.bootstrap_replicates, derive_seed(cfg.seed, 0xB007), cfg.bootstrap_level);
  j["ci_low"] = ci.lo;
  j["ci_high"] = ci.hi;
  j["ci_level"] = cfg.bootstrap_level;
  j["bootstrap_replicates"] = cfg.bootstrap_replicates;
  j["bootstrap_redraws"] = ci.redraws;
  try {
    const auto lr = stats::median_split_logrank(table);
    j["logrank_chi2"] = lr.chi2;
    j["logrank_p"] = lr.p;
  } catch (const DataError& e) {
    j["logrank_chi2"] = nullptr;
    j["logrank_p"] = nullptr;
    j["logrank_error"] = e.what();
  }
  const auto curves = group_curves(table, cfg.scheme());
  j["risk_groups"] = cfg.risk_groups;
  report::write_km(path_in(out, "km.csv"), curves);
  report::write_text(path_in(out, "km.svg"), report::km_svg(curves, "Kaplan-Meier by " + cfg.risk_groups + " risk split"));
  return j;
}

// ---------------------------------------------------------------------------

struct GenOpts {
  Common common;
  std::optional<std::size_t> n, bag_size, d, p;
  std::optional<double> w_wsi, w_mol, w_inter, censor_frac;
  bool binary = false;
  bool cell_counts = false;
};

int cmd_gen_synthetic(const GenOpts& o) {
  const auto cfg = resolve(o.common, [&](config::RunConfig& c) {
    if (o.n) c.synthetic.n_patients = *o.n;
    if (o.bag_size) c.synthetic.bag_size = *o.bag_size;
    if (o.d) c.synthetic.d = *o.d;
    if (o.p) c.synthetic.p = *o.p;
    if (o.w_wsi) c.synthetic.w_wsi = *o.w_wsi;
    if (o.w_mol) c.synthetic.w_mol = *o.w_mol;
    if (o.w_inter) c.synthetic.w_inter = *o.w_inter;
    if (o.censor_frac) c.synthetic.censor_frac = *o.censor_frac;
  });
  const auto s = synth::gen_synthetic(cfg.synthetic);
  prepare_out(o.common.out, cfg);
  data::save_cohort(s.cohort, o.common.out, o.binary);
  if (o.cell_counts) synth::write_cell_counts(s, path_in(o.common.out, "cellcounts.csv"));
  std::size_t censored = 0;
  for (const auto& p : s.cohort.patients) censored += p.label.censored;
  std::cout << "wrote " << s.cohort.size() << " patients to " << o.common.out << " (censored " << censored << ")\n";
  return 0;
}

struct TrainOpts {
  Common common;
  std::string data, model;
  std::optional<int> epochs;
};

void apply_train_flags(config::RunConfig& c, const std::string& data, const std::string& model,
                       const std::optional<int>& epochs) {
  if (!data.empty()) c.data = data;
  if (!model.empty()) c.model = model;
  if (epochs) c.train.epochs = *epochs;
}

int cmd_train(const TrainOpts& o) {
  const auto cfg = resolve(o.common, [&](config::RunConfig& c) { apply_train_flags(c, o.data, o.model, o.epochs); });
  data::Cohort cohort = load_data(cfg);
  prepare_out(o.common.out, cfg);

  ckpt::Checkpoint ck;
  ck.feature_names = cohort.meta.names;
  if (cfg.train.standardize) {
    std::vector<std::size_t> all(cohort.size());
    std::iota(all.begin(), all.end(), 0);
    ck.standardizer = data::fit_standardizer(data::molecular_matrix(cohort), cohort.meta, all);
    cohort.patients = data::standardize_records(cohort.patients, *ck.standardizer);
  }
  ck.bins = surv::make_bins(train::labels_of(cohort.patients));
  models::ModelDims dims = cfg.dims;
  dims.wsi_in = cohort.embed_dim;
  dims.mol_in = cohort.mol_dim();
  ck.model = models::make_model(models::parse_model_kind(cfg.model), dims, cfg.seed);
  const auto result = train::train(*ck.model, cohort.patients, *ck.bins, cfg.train);
  ck.config = config::to_json(cfg);
  ckpt::save(ck, path_in(o.common.out, "checkpoint.json"));
  report::write_loss_trace(path_in(o.common.out, "loss.csv"), result.epoch_loss);
  std::cout << "trained " << cfg.model << " for " << cfg.train.epochs << " epochs; final mean loss "
            << result.epoch_loss.back() << "\n";
  return 0;
}

struct CvOpts {
  Common common;
  std::string data, model;
  std::optional<int> epochs;
  std::optional<std::size_t> folds;
};

int cmd_cv(const CvOpts& o) {
  const auto cfg = resolve(o.common, [&](config::RunConfig& c) {
    apply_train_flags(c, o.data, o.model, o.epochs);
    if (o.folds) c.folds = *o.folds;
  });
  const data::Cohort cohort = load_data(cfg);
  prepare_out(o.common.out, cfg);
  const auto kind = models::parse_model_kind(cfg.model);
  const auto res = train::cross_validate(cohort, cfg.train, kind, cfg.dims, cfg.folds);

  Json j;
  j["model"] = cfg.model;
  j["seed"] = cfg.seed;
  j["n_patients"] = cohort.size();
  Json folds = Json::array();
  for (const auto& f : res.folds) {
    folds.push_back(Json{{"fold", f.fold},
                         {"c_index", f.c_index},
                         {"n_train", f.n_train},
                         {"n_val", f.n_val},
                         {"bins", std::vector<double>(f.bins.cuts.begin(), f.bins.cuts.end())}});
    report::write_loss_trace(path_in(o.common.out, "loss_fold" + std::to_string(f.fold) + ".csv"), f.loss_trace);
  }
  j["folds"] = std::move(folds);
  j["c_index_mean"] = res.c_index_mean;
  j = summarize(res.pooled, cfg, o.common.out, std::move(j));
  report::write_predictions(path_in(o.common.out, "predictions.csv"), res.pooled, res.pooled_fold);
  report::write_json(path_in(o.common.out, "metrics.json"), j);
  std::cout << cfg.model << ": c-index mean " << res.c_index_mean << ", 95% CI [" << j["ci_low"].get<double>()
            << ", " << j["ci_high"].get<double>() << "], logrank p " << j["logrank_p"] << "\n";
  return 0;
}

struct PredictOpts {
  std::string checkpoint, data, out;
};

int cmd_predict(const PredictOpts& o) {
  const auto ck = ckpt::load(o.checkpoint);
  const data::Cohort cohort = ckpt::align_cohort(data::load_cohort(fs::path(o.data)), ck);
  fs::create_directories(o.out);
  report::write_json(path_in(o.out, "config.json"), ck.config);
  report::write_text(path_in(o.out, "version.txt"), std::string(config::kToolVersion) + "\n");
  csv::Writer w(path_in(o.out, "predictions.csv"));
  w.row("patient_id", "risk", "hazard_0", "hazard_1", "hazard_2", "hazard_3", "t_cont", "censored");
  stats::RiskTable table;
  Rng unused(0);
  for (const auto& p : cohort.patients) {
    ad::NoGrad no_grad;
    const auto h = ck.model->forward(p.bag, p.molecular, false, unused).hazards;
    const double risk = surv::risk_tensor(h).item();
    w.row(p.id, risk, h[0], h[1], h[2], h[3], p.label.time, p.label.censored ? 1 : 0);
    table.push_back({p.id, risk, p.label.time, p.label.censored});
  }
  const auto c = stats::try_c_index(table);
  std::cout << "predicted " << table.size() << " patients";
  if (c) std::cout << "; c-index " << *c;
  std::cout << "\n";
  return 0;
}

struct ExplainOpts {
  std::string checkpoint, data, out, patient;
  bool all = false;
  std::optional<int> steps;
  std::optional<double> top_frac;
};

int cmd_explain(const ExplainOpts& o) {
  if (o.patient.empty() == !o.all) throw UsageError("give exactly one of --patient or --all");
  const auto ck = ckpt::load(o.checkpoint);
  const data::Cohort cohort = ckpt::align_cohort(data::load_cohort(fs::path(o.data)), ck);
  int steps = 50;
  double top_frac = 0.01;
  if (ck.config.contains("explain")) {
    steps = ck.config["explain"].value("steps", steps);
    top_frac = ck.config["explain"].value("top_frac", top_frac);
  }
  if (o.steps) steps = *o.steps;
  if (o.top_frac) top_frac = *o.top_frac;
  if (steps < 2) throw UsageError("--steps must be >= 2");
  if (!(top_frac > 0 && top_frac <= 1)) throw UsageError("--top-frac must lie in (0, 1]");

  std::vector<const data::PatientRecord*> targets;
  if (o.all) {
    for (const auto& p : cohort.patients) targets.push_back(&p);
  } else {
    targets.push_back(&cohort.find(o.patient));
  }
  fs::create_directories(o.out);
  report::write_json(path_in(o.out, "config.json"), ck.config);
  report::write_text(path_in(o.out, "version.txt"), std::string(config::kToolVersion) + "\n");

  const auto kind = ck.model->kind();
  const auto* mmf = dynamic_cast<const models::MmfSurvival*>(ck.model.get());
  const auto* snn = dynamic_cast<const models::SnnSurvival*>(ck.model.get());
  csv::Writer combined(path_in(o.out, "attention_all.csv"));
  combined.row("patient_id", "patch_id", "x", "y", "raw", "percentile");
  double worst_gap = 0.0;
  Rng unused(0);
  for (const auto* p : targets) {
    Json j;
    j["patient_id"] = p->id;
    j["model"] = std::string(models::to_string(kind));
    j["risk"] = models::predict_risk(*ck.model, p->bag, p->molecular);
    std::cout << p->id << ": risk " << j["risk"].get<double>();
    if (mmf || snn) {
      const auto rep = mmf ? interp::molecular_attribution(mmf->net, p->bag, p->molecular, cohort.meta.names, steps)
                           : interp::molecular_attribution(snn->net, p->molecular, cohort.meta.names, steps);
      j["attribution"] = report::attribution_json(rep);
      worst_gap = std::max(worst_gap, rep.relative_gap());
      std::cout << ", IG completeness gap " << rep.completeness_gap << " (relative " << rep.relative_gap() << ")";
    }
    if (mmf) {
      const auto shares = interp::modality_contribution(mmf->net, p->bag, p->molecular, steps);
      j["modality_shares"] = Json{{"wsi", shares.wsi}, {"mol", shares.mol}};
      std::cout << ", shares wsi " << shares.wsi << " mol " << shares.mol;
    }
    if (kind != models::ModelKind::snn) {
      ad::Tensor attention;
      {
        ad::NoGrad no_grad;
        attention = ck.model->forward(p->bag, p->molecular, false, unused).attention;
      }
      std::vector<double> xs, ys;
      std::vector<std::string> slides;
      for (const auto& loc : p->patches) {
        xs.push_back(loc.x);
        ys.push_back(loc.y);
        slides.push_back(loc.slide_id);
      }
      const auto map = interp::attention_map({attention.values().begin(), attention.values().end()}, xs, ys);
      report::write_attention(path_in(o.out, "attention_" + p->id + ".csv"), map);
      report::write_text(path_in(o.out, "attention_" + p->id + ".svg"), report::attention_svg(map, slides));
      for (std::size_t i = 0; i < map.size(); ++i)
        combined.row(p->id, map.patch_ids[i], map.x[i], map.y[i], map.raw[i], map.percentile[i]);
      j["top_patches"] = interp::top_attention_patches(map, top_frac);
    }
    std::cout << "\n";
    report::write_json(path_in(o.out, "explain_" + p->id + ".json"), j);
  }
  if (mmf || snn) std::cout << "max relative completeness gap " << worst_gap << "\n";
  return 0;
}

struct StatsOpts {
  Common common;
  std::string predictions;
  std::optional<std::size_t> replicates;
  std::optional<double> level;
  std::string scheme;
};

int cmd_stats(const StatsOpts& o) {
  const auto cfg = resolve(o.common, [&](config::RunConfig& c) {
    if (o.replicates) c.bootstrap_replicates = *o.replicates;
    if (o.level) c.bootstrap_level = *o.level;
    if (!o.scheme.empty()) c.risk_groups = o.scheme;
  });
  const auto table = report::read_predictions(o.predictions);
  stats::validate(table);
  prepare_out(o.common.out, cfg);
  Json j;
  j["n"] = table.size();
  j = summarize(table, cfg, o.common.out, std::move(j));
  const auto groups = stats::risk_groups(table, cfg.scheme());
  Json sizes;
  for (auto g : {stats::RiskGroup::low, stats::RiskGroup::middle, stats::RiskGroup::high})
    sizes[stats::to_string(g)] = std::count(groups.begin(), groups.end(), g);
  j["group_sizes"] = sizes;
  report::write_json(path_in(o.common.out, "stats.json"), j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

struct TilOpts {
  std::string attention, cellcounts, risk_table, out;
  double frac = 0.01;
};

int cmd_til(const TilOpts& o) {
  if (!(o.frac > 0 && o.frac <= 1)) throw UsageError("--frac must lie in (0, 1]");
  // Attention rows grouped by patient, in file order.
  std::map<std::string, interp::AttentionMap> maps;
  {
    const csv::Table t = csv::read(o.attention);
    const auto pid = t.column("patient_id"), patch = t.column("patch_id"), raw = t.column("raw");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      auto& m = maps[t.rows[r][pid]];
      m.patch_ids.push_back(static_cast<std::size_t>(csv::parse_int(t.rows[r][patch], t.where(r))));
      m.raw.push_back(csv::parse_double(t.rows[r][raw], t.where(r)));
      m.x.push_back(0.0);
      m.y.push_back(0.0);
      m.percentile.push_back(0.0);
    }
  }
  std::map<std::string, std::map<std::size_t, interp::PatchCellCounts>> counts;
  {
    const csv::Table t = csv::read(o.cellcounts);
    const auto pid = t.column("patient_id"), patch = t.column("patch_id"), total = t.column("total"),
               lym = t.column("lymphocytes"), tum = t.column("tumor");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      interp::PatchCellCounts c;
      c.patch_id = static_cast<std::size_t>(csv::parse_int(t.rows[r][patch], t.where(r)));
      c.total = csv::parse_int(t.rows[r][total], t.where(r));
      c.lymphocytes = csv::parse_int(t.rows[r][lym], t.where(r));
      c.tumor = csv::parse_int(t.rows[r][tum], t.where(r));
      try {
        c.validate();
      } catch (const DataError& e) {
        throw DataError(t.where(r) + ": " + e.what());
      }
      counts[t.rows[r][pid]][c.patch_id] = c;
    }
  }
  std::map<std::string, double> risk;
  for (const auto& row : report::read_predictions(o.risk_table)) risk[row.patient_id] = row.risk;

  std::size_t no_counts = 0, no_risk = 0, missing_patch = 0;
  stats::RiskTable table;  // patients with a fraction and a risk; time fields unused
  std::vector<double> fraction;
  std::vector<std::size_t> n_top, n_pos;
  for (const auto& [id, map] : maps) {
    const auto cit = counts.find(id);
    if (cit == counts.end()) {
      ++no_counts;
      continue;
    }
    if (!risk.count(id)) {
      ++no_risk;
      continue;
    }
    std::vector<interp::PatchCellCounts> top;
    bool complete = true;
    for (std::size_t patch : interp::top_attention_patches(map, o.frac)) {
      const auto pit = cit->second.find(patch);
      if (pit == cit->second.end()) {
        complete = false;
        break;
      }
      top.push_back(pit->second);
    }
    if (!complete) {
      ++missing_patch;
      continue;
    }
    table.push_back({id, risk.at(id), 0.0, true});
    fraction.push_back(interp::til_fraction(top));
    n_top.push_back(top.size());
    n_pos.push_back(static_cast<std::size_t>(std::lround(fraction.back() * static_cast<double>(top.size()))));
  }
  std::size_t counts_only = 0, risk_only = 0;
  for (const auto& [id, _] : counts) counts_only += !maps.count(id);
  for (const auto& [id, _] : risk) risk_only += !maps.count(id);
  if (no_counts + no_risk + missing_patch + counts_only + risk_only > 0) {
    std::cerr << "id mismatches: " << no_counts << " attention patients without cell counts, " << no_risk
              << " without a risk, " << missing_patch << " with top patches lacking counts, " << counts_only
              << " cell-count patients and " << risk_only << " risk-table patients without attention\n";
  }
  if (table.empty()) throw DataError("no patient is present in attention, cell counts and risk table");

  const auto groups = stats::risk_groups(table, stats::GroupScheme::quartile);
  fs::create_directories(o.out);
  report::write_text(path_in(o.out, "version.txt"), std::string(config::kToolVersion) + "\n");
  {
    csv::Writer w(path_in(o.out, "til.csv"));
    w.row("patient_id", "n_top", "n_positive", "fraction", "risk", "group");
    for (std::size_t i = 0; i < table.size(); ++i)
      w.row(table[i].patient_id, n_top[i], n_pos[i], fraction[i], table[i].risk, stats::to_string(groups[i]));
  }
  std::vector<double> low, high;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (groups[i] == stats::RiskGroup::low) low.push_back(fraction[i]);
    if (groups[i] == stats::RiskGroup::high) high.push_back(fraction[i]);
  }
  Json j;
  j["thresholds"] = Json{{"total_gt", interp::kTil.total},
                         {"lymphocytes_gt", interp::kTil.lymphocytes},
                         {"tumor_gt", interp::kTil.tumor}};
  j["top_frac"] = o.frac;
  j["n_patients"] = table.size();
  j["mismatches"] = Json{{"attention_without_counts", no_counts},
                         {"attention_without_risk", no_risk},
                         {"top_patches_without_counts", missing_patch},
                         {"counts_without_attention", counts_only},
                         {"risk_without_attention", risk_only}};
  j["group_sizes"] = Json{{"low", low.size()}, {"high", high.size()}, {"middle", table.size() - low.size() - high.size()}};
  try {
    const auto t = stats::two_sample_t(high, low);
    j["t_test"] = Json{{"t", t.t}, {"p", t.p}, {"dof", t.dof}};
    std::cout << "TIL fraction, high vs low risk: t = " << t.t << ", p = " << t.p << "\n";
  } catch (const DataError& e) {
    j["t_test"] = Json{{"error", e.what()}};
    std::cout << "TIL fraction t-test not computed: " << e.what() << "\n";
  }
  report::write_json(path_in(o.out, "til.json"), j);
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
  sub->add_option("--config", c.config_path, "JSON run config")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "seed (overrides config and RJC_SEED)");
  auto* out = sub->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"survfuse: multimodal survival models, interpretability and statistics"};
  app.set_version_flag("--version", config::kToolVersion);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GenOpts gen;
  auto* g = app.add_subcommand("gen-synthetic", "write a synthetic cohort with known log-hazard");
  add_common(g, gen.common);
  g->add_option("--n", gen.n, "patients");
  g->add_option("--bag-size", gen.bag_size, "patches per patient");
  g->add_option("--d", gen.d, "embedding dim");
  g->add_option("--p", gen.p, "molecular features");
  g->add_option("--w-wsi", gen.w_wsi, "slide latent effect");
  g->add_option("--w-mol", gen.w_mol, "molecular latent effect");
  g->add_option("--w-inter", gen.w_inter, "interaction effect");
  g->add_option("--censor-frac", gen.censor_frac, "target censored fraction");
  g->add_flag("--binary", gen.binary, "store embeddings in the binary container");
  g->add_flag("--cell-counts", gen.cell_counts, "also write per-patch cell counts");

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "train one model on a whole cohort and save a checkpoint");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "cohort directory");
  t->add_option("--model", tr.model, "snn | amil | mmf");
  t->add_option("--epochs", tr.epochs, "training epochs");

  CvOpts cv;
  auto* c = app.add_subcommand("cv", "stratified k-fold cross-validation");
  add_common(c, cv.common);
  c->add_option("--data", cv.data, "cohort directory");
  c->add_option("--model", cv.model, "snn | amil | mmf");
  c->add_option("--epochs", cv.epochs, "training epochs");
  c->add_option("--folds", cv.folds, "number of folds");

  PredictOpts pr;
  auto* p = app.add_subcommand("predict", "risk predictions from a checkpoint");
  p->add_option("--checkpoint", pr.checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
  p->add_option("--data", pr.data, "cohort directory")->required();
  p->add_option("--out", pr.out, "output directory")->required();

  ExplainOpts ex;
  auto* e = app.add_subcommand("explain", "integrated gradients, attention maps and modality shares");
  e->add_option("--checkpoint", ex.checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ex.data, "cohort directory")->required();
  e->add_option("--out", ex.out, "output directory")->required();
  e->add_option("--patient", ex.patient, "patient id");
  e->add_flag("--all", ex.all, "explain every patient");
  e->add_option("--steps", ex.steps, "Gauss-Legendre nodes");
  e->add_option("--top-frac", ex.top_frac, "fraction of top-attention patches");

  StatsOpts st;
  auto* s = app.add_subcommand("stats", "c-index, bootstrap CI, KM curves and logrank for a prediction table");
  add_common(s, st.common);
  s->add_option("--predictions", st.predictions, "CSV with patient_id,risk,t_cont,censored")->required()->check(CLI::ExistingFile);
  s->add_option("--replicates", st.replicates, "bootstrap replicates");
  s->add_option("--level", st.level, "confidence level");
  s->add_option("--scheme", st.scheme, "median | quartile");

  TilOpts til;
  auto* ti = app.add_subcommand("til", "TIL fractions in top-attention patches by risk group");
  ti->add_option("--attention", til.attention, "CSV with patient_id,patch_id,raw")->required()->check(CLI::ExistingFile);
  ti->add_option("--cellcounts", til.cellcounts, "CSV with patient_id,patch_id,total,lymphocytes,tumor")
      ->required()->check(CLI::ExistingFile);
  ti->add_option("--risk-table", til.risk_table, "CSV with patient_id,risk,t_cont,censored")->required()->check(CLI::ExistingFile);
  ti->add_option("--out", til.out, "output directory")->required();
  ti->add_option("--frac", til.frac, "fraction of top-attention patches");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return cmd_gen_synthetic(gen);
    if (t->parsed()) return cmd_train(tr);
    if (c->parsed()) return cmd_cv(cv);
    if (p->parsed()) return cmd_predict(pr);
    if (e->parsed()) return cmd_explain(ex);
    if (s->parsed()) return cmd_stats(st);
    if (ti->parsed()) return cmd_til(til);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
