#include <gtest/gtest.h>

#include <fstream>

#include "survfuse/data_io.hpp"
#include "survfuse/synthetic.hpp"
#include "test_util.hpp"

using namespace survfuse;
using data::FeatureKind;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

// P1 has two slides (3 + 4 patches), P2 one patch, P3 has no label row and
// P4 has no embeddings.
std::filesystem::path fixture(const std::string& name) {
  const auto dir = testutil::temp_dir(name);
  write_file(dir / "embeddings.csv",
             "patient_id,slide_id,patch_x,patch_y,f0,f1\n"
             "P1,S2,0,0,1,2\n"
             "P1,S1,2,0,3,4\n"
             "P1,S1,0,0,5,6\n"
             "P2,S9,1.5,2.5,7,8e-1\n"
             "P1,S2,1,0,9,10\n"
             "P1,S1,1,0,11,12\n"
             "P1,S2,2,0,13,14\n"
             "P1,S2,3,0,15,16\n"
             "P3,S3,0,0,0,0\n");
  write_file(dir / "molecular.csv",
             "patient_id,TP53,EGFR\n"
             "P1,1,2.5\n"
             "P2,0,-1\n"
             "P3,1,0\n"
             "P4,0,0\n");
  write_file(dir / "labels.csv",
             "patient_id,time_months,censored\n"
             "P1,12.5,0\n"
             "P2,40,1\n"
             "P4,3,0\n");
  write_file(dir / "meta.csv", "feature,kind\nTP53,mutation\nEGFR,rnaseq\n");
  return dir;
}

bool same_tensor(const ad::Tensor& a, const ad::Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

void expect_same_cohort(const data::Cohort& a, const data::Cohort& b) {
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.embed_dim, b.embed_dim);
  EXPECT_EQ(a.meta.names, b.meta.names);
  EXPECT_EQ(a.meta.kinds, b.meta.kinds);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &p = a.patients[i], &q = b.patients[i];
    EXPECT_EQ(p.id, q.id);
    EXPECT_TRUE(same_tensor(p.bag, q.bag)) << p.id;
    EXPECT_TRUE(same_tensor(p.molecular, q.molecular)) << p.id;
    EXPECT_EQ(p.label.time, q.label.time);
    EXPECT_EQ(p.label.censored, q.label.censored);
    ASSERT_EQ(p.patches.size(), q.patches.size());
    for (std::size_t m = 0; m < p.patches.size(); ++m) {
      EXPECT_EQ(p.patches[m].slide_id, q.patches[m].slide_id);
      EXPECT_EQ(p.patches[m].x, q.patches[m].x);
      EXPECT_EQ(p.patches[m].y, q.patches[m].y);
    }
  }
}

synth::SyntheticCohort small_synthetic(std::uint64_t seed) {
  synth::SyntheticSpec s;
  s.n_patients = 40;
  s.bag_size = 5;
  s.d = 6;
  s.p = 10;
  s.seed = seed;
  return synth::gen_synthetic(s);
}

data::FeatureMeta meta_of(std::vector<FeatureKind> kinds) {
  data::FeatureMeta m;
  for (std::size_t j = 0; j < kinds.size(); ++j) {
    m.names.push_back("g" + std::to_string(j));
    m.kinds.push_back(kinds[j]);
  }
  return m;
}

}  // namespace

TEST(LoadCohort, IntersectsTablesAndLogsExclusions) {
  const auto c = data::load_cohort(fixture("load"));
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.patients[0].id, "P1");
  EXPECT_EQ(c.patients[1].id, "P2");
  EXPECT_EQ(c.report.embedding_rows, 9u);
  EXPECT_EQ(c.report.molecular_rows, 4u);
  EXPECT_EQ(c.report.label_rows, 3u);
  ASSERT_EQ(c.report.excluded.size(), 2u);
  EXPECT_NE(c.report.excluded[0].find("P3"), std::string::npos);
  EXPECT_NE(c.report.excluded[0].find("labels"), std::string::npos);
  EXPECT_NE(c.report.excluded[1].find("P4"), std::string::npos);
  EXPECT_NE(c.report.excluded[1].find("embeddings"), std::string::npos);
  EXPECT_THROW(c.find("P3"), DataError);
}

TEST(LoadCohort, SlidesConcatenateIntoOneSortedBag) {
  const auto c = data::load_cohort(fixture("bags"));
  const auto& p1 = c.find("P1");
  ASSERT_EQ(p1.bag.rows(), 7u);
  EXPECT_EQ(p1.bag.cols(), 2u);
  // Sorted by (slide, x, y): S1 (0,1,2) then S2 (0,1,2,3).
  const std::vector<double> first_feature = {5, 11, 3, 1, 9, 13, 15};
  for (std::size_t m = 0; m < 7; ++m) EXPECT_EQ(p1.bag.at(m, 0), first_feature[m]);
  EXPECT_EQ(p1.patches[3].slide_id, "S2");
  EXPECT_EQ(p1.molecular.values()[1], 2.5);
  EXPECT_EQ(p1.label.time, 12.5);
  EXPECT_FALSE(p1.label.censored);
  const auto& p2 = c.find("P2");
  EXPECT_EQ(p2.bag.at(0, 1), 0.8);
  EXPECT_EQ(p2.patches[0].x, 1.5);
  EXPECT_TRUE(p2.label.censored);
}

TEST(LoadCohort, RowOrderDoesNotMatter) {
  const auto dir = fixture("order");
  const auto a = data::load_cohort(dir);
  write_file(dir / "embeddings.csv",
             "patient_id,slide_id,patch_x,patch_y,f0,f1\n"
             "P1,S2,3,0,15,16\n"
             "P3,S3,0,0,0,0\n"
             "P1,S1,1,0,11,12\n"
             "P1,S2,2,0,13,14\n"
             "P2,S9,1.5,2.5,7,0.8\n"
             "P1,S2,1,0,9,10\n"
             "P1,S1,0,0,5,6\n"
             "P1,S1,2,0,3,4\n"
             "P1,S2,0,0,1,2\n");
  write_file(dir / "labels.csv", "patient_id,time_months,censored\nP4,3,0\nP2,40,1\nP1,12.5,0\n");
  expect_same_cohort(a, data::load_cohort(dir));
}

TEST(LoadCohort, SchemaErrorsAreDescriptive) {
  auto expect_error = [](const std::filesystem::path& dir, const std::string& fragment) {
    try {
      data::load_cohort(dir);
      ADD_FAILURE() << "expected a DataError mentioning " << fragment;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  {
    const auto dir = fixture("dup");
    write_file(dir / "embeddings.csv", "patient_id,slide_id,patch_x,patch_y,f0\nP1,S1,0,0,1\nP1,S1,0,0,2\n");
    expect_error(dir, "duplicate patch key");
  }
  {
    const auto dir = fixture("badnum");
    write_file(dir / "labels.csv", "patient_id,time_months,censored\nP1,12,0\nP2,abc,1\n");
    expect_error(dir, "labels.csv:3");
  }
  {
    const auto dir = fixture("badcens");
    write_file(dir / "labels.csv", "patient_id,time_months,censored\nP1,12,2\n");
    expect_error(dir, "censored must be 0 or 1");
  }
  {
    const auto dir = fixture("negtime");
    write_file(dir / "labels.csv", "patient_id,time_months,censored\nP1,-1,0\n");
    expect_error(dir, "labels.csv:2");
  }
  {
    const auto dir = fixture("fields");
    write_file(dir / "molecular.csv", "patient_id,TP53,EGFR\nP1,1\n");
    expect_error(dir, "molecular.csv:2");
  }
  {
    const auto dir = fixture("header");
    write_file(dir / "embeddings.csv", "patient,slide_id,patch_x,patch_y,f0\nP1,S1,0,0,1\n");
    expect_error(dir, "header");
  }
  {
    const auto dir = fixture("mismatch");
    write_file(dir / "meta.csv", "feature,kind\nTP53,mutation\nKRAS,rnaseq\n");
    expect_error(dir, "do not match");
  }
  {
    const auto dir = fixture("kind");
    write_file(dir / "meta.csv", "feature,kind\nTP53,methylation\nEGFR,rnaseq\n");
    expect_error(dir, "meta.csv:2");
  }
  {
    const auto dir = fixture("nomol");
    write_file(dir / "meta.csv", "feature,kind\n");
    write_file(dir / "molecular.csv", "patient_id\nP1\n");
    expect_error(dir, "missing modality");
  }
  {
    const auto dir = fixture("disjoint");
    write_file(dir / "labels.csv", "patient_id,time_months,censored\nP9,3,0\n");
    expect_error(dir, "no patient");
  }
  {
    const auto dir = testutil::temp_dir("absent");
    expect_error(dir, "cannot open");
  }
}

TEST(SaveCohort, CsvAndBinaryRoundTripsAreExact) {
  const auto syn = small_synthetic(11);
  for (bool binary : {false, true}) {
    const auto dir = testutil::temp_dir(binary ? "rt_bin" : "rt_csv");
    data::save_cohort(syn.cohort, dir, binary);
    EXPECT_EQ(std::filesystem::exists(dir / "embeddings.bin"), binary);
    const auto back = data::load_cohort(dir);
    expect_same_cohort(syn.cohort, back);
    // A second save of the loaded cohort reproduces the files byte for byte.
    const auto dir2 = testutil::temp_dir(binary ? "rt_bin2" : "rt_csv2");
    data::save_cohort(back, dir2, binary);
    for (const char* f : {"molecular.csv", "labels.csv", "meta.csv"})
      EXPECT_EQ(testutil::slurp(dir / f), testutil::slurp(dir2 / f)) << f;
    const char* emb = binary ? "embeddings.bin" : "embeddings.csv";
    EXPECT_EQ(testutil::slurp(dir / emb), testutil::slurp(dir2 / emb));
  }
}

TEST(SaveCohort, TruncatedBinaryIsRejected) {
  const auto syn = small_synthetic(12);
  const auto dir = testutil::temp_dir("trunc");
  data::save_cohort(syn.cohort, dir, true);
  const std::string bytes = testutil::slurp(dir / "embeddings.bin");
  std::ofstream(dir / "embeddings.bin", std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(data::load_cohort(dir), DataError);
}

TEST(FilterGenes, StrictFrequencyThreshold) {
  data::FeatureMatrix m{100, 3, std::vector<double>(300, 0.0)};
  for (std::size_t r = 0; r < 4; ++r) m.at(r, 0) = 1;  // 4%: dropped
  for (std::size_t r = 0; r < 5; ++r) m.at(r, 1) = 1;  // exactly 5%: dropped
  for (std::size_t r = 0; r < 6; ++r) m.at(r, 2) = -1;  // 6% CNV loss: kept
  const auto sel = data::filter_genes(m, meta_of({FeatureKind::mutation, FeatureKind::mutation, FeatureKind::cnv}));
  EXPECT_EQ(sel.kept, (std::vector<std::size_t>{2}));
  EXPECT_EQ(sel.meta.names, (std::vector<std::string>{"g2"}));
  EXPECT_TRUE(sel.warnings.empty());
}

TEST(FilterGenes, RnaRankedByMadWithNameTieBreak) {
  // Columns: MAD 0 (constant), 2, 1, 2, 1.
  data::FeatureMatrix m{5, 5, {}};
  const std::vector<std::vector<double>> cols = {
      {3, 3, 3, 3, 3}, {0, 2, 4, 6, 8}, {0, 1, 2, 3, 4}, {10, 12, 14, 16, 18}, {5, 6, 7, 8, 9}};
  m.values.resize(25);
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t r = 0; r < 5; ++r) m.at(r, c) = cols[c][r];
  const auto meta = meta_of(std::vector<FeatureKind>(5, FeatureKind::rnaseq));
  EXPECT_EQ(data::filter_genes(m, meta, 0.05, 2).kept, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(data::filter_genes(m, meta, 0.05, 3).kept, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(data::filter_genes(m, meta, 0.05, 4).kept, (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(data::filter_genes(m, meta, 0.05, 99).kept.size(), 5u);
  const auto none = data::filter_genes(m, meta, 0.05, 0);
  EXPECT_TRUE(none.kept.empty());
  EXPECT_EQ(none.warnings.size(), 1u);
  EXPECT_EQ(data::median_absolute_deviation(cols[1]), 2.0);
}

TEST(FilterGenes, IdempotentOnSyntheticCohort) {
  const auto syn = small_synthetic(13);
  const auto m = data::molecular_matrix(syn.cohort);
  const auto once = data::filter_genes(m, syn.cohort.meta, 0.05, 3);
  const auto twice = data::filter_genes(once.matrix, once.meta, 0.05, 3);
  EXPECT_EQ(twice.matrix.cols, once.matrix.cols);
  EXPECT_EQ(twice.matrix.values, once.matrix.values);
  EXPECT_EQ(twice.meta.names, once.meta.names);
  const auto reduced = data::apply_selection(syn.cohort, once);
  EXPECT_EQ(reduced.mol_dim(), once.matrix.cols);
  EXPECT_EQ(reduced.patients[7].molecular[0], once.matrix.at(7, 0));
  EXPECT_THROW(data::filter_genes(m, meta_of({FeatureKind::cnv}), 0.05, 3), DimensionError);
}

TEST(Standardize, TrainingColumnsHaveUnitMoments) {
  const auto syn = small_synthetic(14);
  const auto m = data::molecular_matrix(syn.cohort);
  std::vector<std::size_t> train;
  for (std::size_t r = 0; r < m.rows; r += 2) train.push_back(r);
  const auto z = data::standardize_molecular(m, syn.cohort.meta, train);
  for (std::size_t c = 0; c < m.cols; ++c) {
    if (syn.cohort.meta.kinds[c] == FeatureKind::mutation) {
      for (std::size_t r = 0; r < m.rows; ++r) EXPECT_EQ(z.matrix.at(r, c), m.at(r, c));
      continue;
    }
    double mean = 0, var = 0;
    for (std::size_t r : train) mean += z.matrix.at(r, c);
    mean /= static_cast<double>(train.size());
    for (std::size_t r : train) var += (z.matrix.at(r, c) - mean) * (z.matrix.at(r, c) - mean);
    var /= static_cast<double>(train.size());
    EXPECT_NEAR(mean, 0.0, 1e-9) << syn.cohort.meta.names[c];
    EXPECT_NEAR(var, 1.0, 1e-9) << syn.cohort.meta.names[c];
  }
  // Validation rows use the training statistics verbatim.
  const std::size_t r = 1, c = 0;
  EXPECT_DOUBLE_EQ(z.matrix.at(r, c), (m.at(r, c) - z.stats.mean[c]) / z.stats.scale[c]);
  const auto recs = data::standardize_records(syn.cohort.patients, z.stats);
  for (std::size_t j = 0; j < m.cols; ++j) EXPECT_EQ(recs[3].molecular[j], z.matrix.at(3, j));
}

TEST(Standardize, ConstantColumnBecomesZeros) {
  data::FeatureMatrix m{4, 2, {7, 1, 7, 0, 7, 1, 7, 1}};
  const std::vector<std::size_t> train = {0, 1, 2, 3};
  const auto z = data::standardize_molecular(m, meta_of({FeatureKind::rnaseq, FeatureKind::mutation}), train);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(z.matrix.at(r, 0), 0.0);
    EXPECT_EQ(z.matrix.at(r, 1), m.at(r, 1));
  }
  EXPECT_EQ(z.stats.scale[0], data::Standardizer::kScaleFloor);
  EXPECT_THROW(data::standardize_molecular(m, meta_of({FeatureKind::rnaseq, FeatureKind::cnv}), {}), PreconditionError);
}
