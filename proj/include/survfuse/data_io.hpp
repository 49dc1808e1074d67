#pragma once

// Cohort ingestion and molecular feature preparation.
//
// A cohort on disk is four tables:
//   embeddings  patient_id,slide_id,patch_x,patch_y,f0,...,f{d-1}
//   molecular   patient_id,<feature names...>
//   labels      patient_id,time_months,censored   (1 = censored / alive)
//   meta        feature,kind                      (mutation | cnv | rnaseq)
// Embeddings may instead be stored in a compact little-endian binary
// container (see write_embeddings_binary).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "survfuse/csv.hpp"
#include "survfuse/error.hpp"
#include "survfuse/survival.hpp"
#include "survfuse/tensor.hpp"

namespace survfuse::data {

using ad::Tensor;

enum class FeatureKind { mutation, cnv, rnaseq };

inline std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::mutation: return "mutation";
    case FeatureKind::cnv: return "cnv";
    case FeatureKind::rnaseq: return "rnaseq";
  }
  return "?";
}

inline FeatureKind parse_feature_kind(const std::string& s, const std::string& where) {
  if (s == "mutation") return FeatureKind::mutation;
  if (s == "cnv") return FeatureKind::cnv;
  if (s == "rnaseq") return FeatureKind::rnaseq;
  throw DataError(where + ": unknown feature kind '" + s + "'");
}

struct FeatureMeta {
  std::vector<std::string> names;
  std::vector<FeatureKind> kinds;

  std::size_t size() const { return names.size(); }
};

struct PatchLocation {
  std::string slide_id;
  double x = 0.0;
  double y = 0.0;
};

struct PatientRecord {
  std::string id;
  Tensor bag;                          // [M x d]
  std::vector<PatchLocation> patches;  // one per bag row
  Tensor molecular;                    // [p]
  surv::SurvivalLabel label;
};

struct LoadReport {
  std::size_t embedding_rows = 0;
  std::size_t molecular_rows = 0;
  std::size_t label_rows = 0;
  std::size_t patients = 0;
  std::vector<std::string> excluded;  // human-readable reasons
};

struct Cohort {
  std::size_t embed_dim = 0;
  FeatureMeta meta;
  std::vector<PatientRecord> patients;
  LoadReport report;

  std::size_t mol_dim() const { return meta.size(); }
  std::size_t size() const { return patients.size(); }

  const PatientRecord& find(const std::string& id) const {
    for (const auto& p : patients)
      if (p.id == id) return p;
    throw DataError("unknown patient id '" + id + "'");
  }
};

struct CohortPaths {
  std::string embeddings;
  std::string molecular;
  std::string labels;
  std::string meta;
};

// Canonical file names inside a cohort directory; embeddings.bin is used
// when present and embeddings.csv is not.
inline CohortPaths cohort_paths(const std::filesystem::path& dir) {
  std::filesystem::path emb = dir / "embeddings.csv";
  if (!std::filesystem::exists(emb) && std::filesystem::exists(dir / "embeddings.bin")) emb = dir / "embeddings.bin";
  return {emb.string(), (dir / "molecular.csv").string(), (dir / "labels.csv").string(), (dir / "meta.csv").string()};
}

struct EmbeddingRow {
  std::string patient_id;
  PatchLocation loc;
  std::vector<double> features;
};

// ---------------------------------------------------------------------------
// Binary embeddings container.
//
//   magic   "SFEMBED1" (8 bytes)
//   u32     version (1)
//   u32     embedding dim d
//   u64     row count
//   rows:   u32 len + patient id bytes, u32 len + slide id bytes,
//           f64 x, f64 y, d x f64 features
// All integers and floats little-endian.

inline constexpr std::array<char, 8> kEmbedMagic = {'S', 'F', 'E', 'M', 'B', 'E', 'D', '1'};
inline constexpr std::uint32_t kEmbedVersion = 1;

namespace detail {

template <typename U>
void put_le(std::ostream& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(std::istream& in, const std::string& path) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = in.get();
    if (c == EOF) throw DataError(path + ": truncated binary embeddings file");
    v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& in, const std::string& path) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, path));
}

inline void put_str(std::ostream& out, const std::string& s) {
  put_le(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& in, const std::string& path) {
  const auto n = get_le<std::uint32_t>(in, path);
  if (n > (1u << 20)) throw DataError(path + ": implausible string length in binary container");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (static_cast<std::uint32_t>(in.gcount()) != n) throw DataError(path + ": truncated binary embeddings file");
  return s;
}

inline bool has_embed_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<char, 8> head{};
  in.read(head.data(), head.size());
  return in.gcount() == static_cast<std::streamsize>(head.size()) && head == kEmbedMagic;
}

inline std::vector<EmbeddingRow> read_embeddings_binary(const std::string& path, std::size_t& dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open file");
  std::array<char, 8> head{};
  in.read(head.data(), head.size());
  if (head != kEmbedMagic) throw DataError(path + ": bad magic bytes");
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kEmbedVersion) throw DataError(path + ": unsupported container version " + std::to_string(version));
  dim = get_le<std::uint32_t>(in, path);
  if (dim == 0) throw DataError(path + ": embedding dim is zero");
  const auto n = get_le<std::uint64_t>(in, path);
  std::vector<EmbeddingRow> rows;
  rows.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 24)));
  for (std::uint64_t r = 0; r < n; ++r) {
    EmbeddingRow row;
    row.patient_id = get_str(in, path);
    row.loc.slide_id = get_str(in, path);
    row.loc.x = get_f64(in, path);
    row.loc.y = get_f64(in, path);
    row.features.resize(dim);
    for (double& f : row.features) f = get_f64(in, path);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<EmbeddingRow> read_embeddings_csv(const std::string& path, std::size_t& dim) {
  const csv::Table t = csv::read(path);
  const std::vector<std::string> fixed = {"patient_id", "slide_id", "patch_x", "patch_y"};
  if (t.header.size() < fixed.size() + 1 || !std::equal(fixed.begin(), fixed.end(), t.header.begin())) {
    throw DataError(path + ": header must start with patient_id,slide_id,patch_x,patch_y and have feature columns");
  }
  dim = t.header.size() - fixed.size();
  for (std::size_t j = 0; j < dim; ++j) {
    if (t.header[fixed.size() + j] != "f" + std::to_string(j)) {
      throw DataError(path + ": feature column " + std::to_string(j) + " must be named f" + std::to_string(j));
    }
  }
  std::vector<EmbeddingRow> rows;
  rows.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const std::string where = t.where(r);
    if (f[0].empty()) throw DataError(where + ": empty patient_id");
    EmbeddingRow row;
    row.patient_id = f[0];
    row.loc.slide_id = f[1];
    row.loc.x = csv::parse_double(f[2], where);
    row.loc.y = csv::parse_double(f[3], where);
    row.features.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) row.features[j] = csv::parse_double(f[fixed.size() + j], where);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline FeatureMeta read_meta(const std::string& path) {
  const csv::Table t = csv::read(path);
  if (t.header != std::vector<std::string>{"feature", "kind"}) throw DataError(path + ": header must be feature,kind");
  FeatureMeta meta;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (!seen.insert(t.rows[r][0]).second) throw DataError(t.where(r) + ": duplicate feature '" + t.rows[r][0] + "'");
    meta.names.push_back(t.rows[r][0]);
    meta.kinds.push_back(parse_feature_kind(t.rows[r][1], t.where(r)));
  }
  return meta;
}

// Groups rows into per-patient bags sorted by (slide_id, patch_x, patch_y).
inline std::map<std::string, std::vector<EmbeddingRow>> assemble_bags(std::vector<EmbeddingRow> rows,
                                                                      const std::string& source) {
  std::sort(rows.begin(), rows.end(), [](const EmbeddingRow& a, const EmbeddingRow& b) {
    return std::tie(a.patient_id, a.loc.slide_id, a.loc.x, a.loc.y) <
           std::tie(b.patient_id, b.loc.slide_id, b.loc.x, b.loc.y);
  });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& a = rows[i - 1];
    const auto& b = rows[i];
    if (a.patient_id == b.patient_id && a.loc.slide_id == b.loc.slide_id && a.loc.x == b.loc.x && a.loc.y == b.loc.y) {
      throw DataError(source + ": duplicate patch key (patient " + a.patient_id + ", slide " + a.loc.slide_id +
                      ", x " + csv::format_double(a.loc.x) + ", y " + csv::format_double(a.loc.y) + ")");
    }
  }
  std::map<std::string, std::vector<EmbeddingRow>> bags;
  for (auto& r : rows) bags[r.patient_id].push_back(std::move(r));
  return bags;
}

inline Cohort load_cohort(const CohortPaths& paths) {
  Cohort cohort;
  cohort.meta = read_meta(paths.meta);
  if (cohort.meta.size() == 0) throw DataError(paths.meta + ": cohort has no molecular features (missing modality)");

  std::size_t dim = 0;
  auto rows = detail::has_embed_magic(paths.embeddings) ? detail::read_embeddings_binary(paths.embeddings, dim)
                                                        : detail::read_embeddings_csv(paths.embeddings, dim);
  if (rows.empty()) throw DataError(paths.embeddings + ": no embedding rows (missing modality)");
  cohort.embed_dim = dim;
  cohort.report.embedding_rows = rows.size();
  auto bags = assemble_bags(std::move(rows), paths.embeddings);

  const csv::Table mol = csv::read(paths.molecular);
  if (mol.header.empty() || mol.header[0] != "patient_id") throw DataError(paths.molecular + ": first column must be patient_id");
  if (!std::equal(cohort.meta.names.begin(), cohort.meta.names.end(), mol.header.begin() + 1, mol.header.end())) {
    throw DataError(paths.molecular + ": feature columns do not match " + paths.meta);
  }
  std::map<std::string, std::vector<double>> molecular;
  for (std::size_t r = 0; r < mol.rows.size(); ++r) {
    std::vector<double> v(cohort.meta.size());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = csv::parse_double(mol.rows[r][j + 1], mol.where(r));
    if (!molecular.emplace(mol.rows[r][0], std::move(v)).second) {
      throw DataError(mol.where(r) + ": duplicate patient '" + mol.rows[r][0] + "'");
    }
  }
  cohort.report.molecular_rows = mol.rows.size();

  const csv::Table lab = csv::read(paths.labels);
  if (lab.header != std::vector<std::string>{"patient_id", "time_months", "censored"}) {
    throw DataError(paths.labels + ": header must be patient_id,time_months,censored");
  }
  std::map<std::string, surv::SurvivalLabel> labels;
  for (std::size_t r = 0; r < lab.rows.size(); ++r) {
    surv::SurvivalLabel l;
    l.time = csv::parse_double(lab.rows[r][1], lab.where(r));
    if (!(l.time >= 0.0) || !std::isfinite(l.time)) throw DataError(lab.where(r) + ": survival time must be finite and >= 0");
    const auto c = csv::parse_int(lab.rows[r][2], lab.where(r));
    if (c != 0 && c != 1) throw DataError(lab.where(r) + ": censored must be 0 or 1");
    l.censored = c == 1;
    if (!labels.emplace(lab.rows[r][0], l).second) {
      throw DataError(lab.where(r) + ": duplicate patient '" + lab.rows[r][0] + "'");
    }
  }
  cohort.report.label_rows = lab.rows.size();

  std::set<std::string> all_ids;
  for (const auto& [id, _] : bags) all_ids.insert(id);
  for (const auto& [id, _] : molecular) all_ids.insert(id);
  for (const auto& [id, _] : labels) all_ids.insert(id);
  for (const auto& id : all_ids) {
    const bool has_e = bags.count(id), has_m = molecular.count(id), has_l = labels.count(id);
    if (!(has_e && has_m && has_l)) {
      std::string missing;
      if (!has_e) missing += " embeddings";
      if (!has_m) missing += " molecular";
      if (!has_l) missing += " labels";
      cohort.report.excluded.push_back("patient " + id + " excluded: absent from" + missing);
      continue;
    }
    PatientRecord p;
    p.id = id;
    const auto& bag_rows = bags.at(id);
    std::vector<double> values;
    values.reserve(bag_rows.size() * dim);
    for (const auto& r : bag_rows) {
      values.insert(values.end(), r.features.begin(), r.features.end());
      p.patches.push_back(r.loc);
    }
    p.bag = Tensor::matrix(bag_rows.size(), dim, std::move(values));
    p.molecular = Tensor::vector(molecular.at(id));
    p.label = labels.at(id);
    cohort.patients.push_back(std::move(p));
  }
  if (cohort.patients.empty()) throw DataError("no patient is present in embeddings, molecular and labels tables");
  cohort.report.patients = cohort.patients.size();
  return cohort;
}

inline Cohort load_cohort(const std::filesystem::path& dir) { return load_cohort(cohort_paths(dir)); }

inline void write_meta(const FeatureMeta& meta, const std::string& path) {
  csv::Writer w(path);
  w.row("feature", "kind");
  for (std::size_t j = 0; j < meta.size(); ++j) w.row(meta.names[j], to_string(meta.kinds[j]));
}

inline void write_embeddings_binary(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out.write(kEmbedMagic.data(), kEmbedMagic.size());
  detail::put_le(out, kEmbedVersion);
  detail::put_le(out, static_cast<std::uint32_t>(cohort.embed_dim));
  std::uint64_t rows = 0;
  for (const auto& p : cohort.patients) rows += p.bag.rows();
  detail::put_le(out, rows);
  for (const auto& p : cohort.patients) {
    for (std::size_t m = 0; m < p.bag.rows(); ++m) {
      detail::put_str(out, p.id);
      detail::put_str(out, p.patches[m].slide_id);
      detail::put_f64(out, p.patches[m].x);
      detail::put_f64(out, p.patches[m].y);
      for (std::size_t j = 0; j < cohort.embed_dim; ++j) detail::put_f64(out, p.bag.at(m, j));
    }
  }
}

// Writes the four canonical tables into dir, embeddings optionally in the
// binary container.
inline void save_cohort(const Cohort& cohort, const std::filesystem::path& dir, bool binary_embeddings = false) {
  std::filesystem::create_directories(dir);
  const CohortPaths paths = cohort_paths(dir);
  if (binary_embeddings) {
    write_embeddings_binary(cohort, (dir / "embeddings.bin").string());
  } else {
    csv::Writer w(paths.embeddings);
    std::vector<std::string> header = {"patient_id", "slide_id", "patch_x", "patch_y"};
    for (std::size_t j = 0; j < cohort.embed_dim; ++j) header.push_back("f" + std::to_string(j));
    w.row(header);
    for (const auto& p : cohort.patients) {
      for (std::size_t m = 0; m < p.bag.rows(); ++m) {
        std::vector<std::string> f = {p.id, p.patches[m].slide_id, csv::format_double(p.patches[m].x),
                                      csv::format_double(p.patches[m].y)};
        for (std::size_t j = 0; j < cohort.embed_dim; ++j) f.push_back(csv::format_double(p.bag.at(m, j)));
        w.row(f);
      }
    }
  }
  {
    csv::Writer w(paths.molecular);
    std::vector<std::string> header = {"patient_id"};
    header.insert(header.end(), cohort.meta.names.begin(), cohort.meta.names.end());
    w.row(header);
    for (const auto& p : cohort.patients) {
      std::vector<std::string> f = {p.id};
      for (double v : p.molecular.values()) f.push_back(csv::format_double(v));
      w.row(f);
    }
  }
  {
    csv::Writer w(paths.labels);
    w.row("patient_id", "time_months", "censored");
    for (const auto& p : cohort.patients) w.row(p.id, p.label.time, p.label.censored ? 1 : 0);
  }
  write_meta(cohort.meta, paths.meta);
}

// ---------------------------------------------------------------------------
// Molecular feature preparation.

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

inline FeatureMatrix molecular_matrix(const Cohort& cohort) {
  FeatureMatrix m;
  m.rows = cohort.size();
  m.cols = cohort.mol_dim();
  for (const auto& p : cohort.patients) m.values.insert(m.values.end(), p.molecular.values().begin(), p.molecular.values().end());
  return m;
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_absolute_deviation(const std::vector<double>& v) {
  const double med = median_of(v);
  std::vector<double> dev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - med);
  return median_of(std::move(dev));
}

struct FeatureSelection {
  FeatureMatrix matrix;
  FeatureMeta meta;
  std::vector<std::size_t> kept;  // source column indices, ascending
  std::vector<std::string> warnings;
};

// Keeps mutation/CNV columns altered in strictly more than freq_threshold of
// patients, and the rna_top_k RNA-Seq columns with the largest median
// absolute deviation (ties by name). Column order is preserved.
inline FeatureSelection filter_genes(const FeatureMatrix& matrix, const FeatureMeta& meta,
                                     double freq_threshold = 0.05, std::size_t rna_top_k = 2000) {
  if (matrix.cols != meta.size()) throw DimensionError("filter_genes: matrix columns do not match feature meta");
  std::vector<bool> keep(matrix.cols, false);
  std::vector<std::pair<double, std::size_t>> rna;  // (MAD, column)
  for (std::size_t c = 0; c < matrix.cols; ++c) {
    std::vector<double> col(matrix.rows);
    for (std::size_t r = 0; r < matrix.rows; ++r) col[r] = matrix.at(r, c);
    if (meta.kinds[c] == FeatureKind::rnaseq) {
      rna.emplace_back(median_absolute_deviation(col), c);
    } else {
      const auto nonzero = static_cast<double>(std::count_if(col.begin(), col.end(), [](double v) { return v != 0.0; }));
      keep[c] = matrix.rows > 0 && nonzero / static_cast<double>(matrix.rows) > freq_threshold;
    }
  }
  std::sort(rna.begin(), rna.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return meta.names[a.second] < meta.names[b.second];
  });
  for (std::size_t i = 0; i < std::min(rna_top_k, rna.size()); ++i) keep[rna[i].second] = true;

  FeatureSelection out;
  for (std::size_t c = 0; c < matrix.cols; ++c)
    if (keep[c]) out.kept.push_back(c);
  out.matrix.rows = matrix.rows;
  out.matrix.cols = out.kept.size();
  out.matrix.values.reserve(matrix.rows * out.kept.size());
  for (std::size_t r = 0; r < matrix.rows; ++r)
    for (std::size_t c : out.kept) out.matrix.values.push_back(matrix.at(r, c));
  for (std::size_t c : out.kept) {
    out.meta.names.push_back(meta.names[c]);
    out.meta.kinds.push_back(meta.kinds[c]);
  }
  if (out.kept.empty()) out.warnings.push_back("filter_genes selected no features");
  return out;
}

// Restricts every patient's molecular vector to the selected columns.
inline Cohort apply_selection(const Cohort& cohort, const FeatureSelection& sel) {
  Cohort out = cohort;
  out.meta = sel.meta;
  for (std::size_t i = 0; i < out.patients.size(); ++i) {
    std::vector<double> v(sel.matrix.values.begin() + static_cast<std::ptrdiff_t>(i * sel.matrix.cols),
                          sel.matrix.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * sel.matrix.cols));
    out.patients[i].molecular = Tensor::vector(std::move(v));
  }
  return out;
}

// Column z-scoring fitted on training rows. Mutation columns pass through.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<bool> active;

  static constexpr double kScaleFloor = 1e-8;

  std::vector<double> apply(std::span<const double> x) const {
    if (x.size() != mean.size()) throw DimensionError("standardizer: feature count mismatch");
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t j = 0; j < out.size(); ++j)
      if (active[j]) out[j] = (out[j] - mean[j]) / scale[j];
    return out;
  }

  FeatureMatrix apply(const FeatureMatrix& m) const {
    FeatureMatrix out = m;
    for (std::size_t r = 0; r < m.rows; ++r) {
      auto row = apply(std::span<const double>(m.values.data() + r * m.cols, m.cols));
      std::copy(row.begin(), row.end(), out.values.begin() + static_cast<std::ptrdiff_t>(r * m.cols));
    }
    return out;
  }

  bool identity() const { return std::none_of(active.begin(), active.end(), [](bool a) { return a; }); }
};

inline Standardizer fit_standardizer(const FeatureMatrix& m, const FeatureMeta& meta,
                                     std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw PreconditionError("standardization needs at least one training row");
  if (m.cols != meta.size()) throw DimensionError("standardizer: matrix columns do not match feature meta");
  Standardizer s;
  s.mean.assign(m.cols, 0.0);
  s.scale.assign(m.cols, 1.0);
  s.active.assign(m.cols, false);
  const auto n = static_cast<double>(train_rows.size());
  for (std::size_t c = 0; c < m.cols; ++c) {
    if (meta.kinds[c] == FeatureKind::mutation) continue;
    double mu = 0.0;
    for (std::size_t r : train_rows) mu += m.at(r, c);
    mu /= n;
    double var = 0.0;
    for (std::size_t r : train_rows) var += (m.at(r, c) - mu) * (m.at(r, c) - mu);
    var /= n;
    s.mean[c] = mu;
    s.scale[c] = std::max(std::sqrt(var), Standardizer::kScaleFloor);
    s.active[c] = true;
  }
  return s;
}

struct Standardized {
  FeatureMatrix matrix;
  Standardizer stats;
};

inline Standardized standardize_molecular(const FeatureMatrix& m, const FeatureMeta& meta,
                                          std::span<const std::size_t> train_rows) {
  Standardizer s = fit_standardizer(m, meta, train_rows);
  return {s.apply(m), s};
}

// Copies records with their molecular vectors transformed.
inline std::vector<PatientRecord> standardize_records(const std::vector<PatientRecord>& records, const Standardizer& s) {
  std::vector<PatientRecord> out = records;
  for (auto& p : out) p.molecular = Tensor::vector(s.apply(p.molecular.values()));
  return out;
}

}  // namespace survfuse::data
