#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "crl/data.hpp"
#include "crl/trainer.hpp"

using namespace crl;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path dir = fs::temp_directory_path() / "crl_data_test";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << contents;
  return p;
}

void expect_split_invariants(const SplitPlan& plan, std::size_t n) {
  std::set<std::size_t> target(plan.target_pool.begin(), plan.target_pool.end());
  std::set<std::size_t> shadow(plan.shadow_pool.begin(), plan.shadow_pool.end());
  ASSERT_EQ(target.size(), plan.target_pool.size());
  ASSERT_EQ(shadow.size(), plan.shadow_pool.size());
  for (std::size_t i : target) ASSERT_EQ(shadow.count(i), 0u);
  ASSERT_EQ(target.size() + shadow.size(), n);
  auto check_halves = [](const TrainTestIndices& s, const std::set<std::size_t>& pool) {
    std::set<std::size_t> tr(s.train.begin(), s.train.end()), te(s.test.begin(), s.test.end());
    ASSERT_EQ(tr.size(), s.train.size());
    ASSERT_EQ(te.size(), s.test.size());
    for (std::size_t i : tr) ASSERT_EQ(te.count(i), 0u);
    std::set<std::size_t> both = tr;
    both.insert(te.begin(), te.end());
    ASSERT_EQ(both, pool);
    ASSERT_EQ(s.train.size(), (pool.size() + 1) / 2);
  };
  check_halves(plan.target, target);
  for (const auto& s : plan.shadows) check_halves(s, shadow);
}

}  // namespace

TEST(GenBlobs, DeterministicAndBalanced) {
  const BlobSpec spec{0, 2000, 20, 5, 3.0, 0.2};
  const Dataset a = gen_blobs(spec), b = gen_blobs(spec);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.num_classes, 5u);
  std::vector<int> counts(5, 0);
  for (int y : a.y) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) EXPECT_LE(std::abs(c - 400), 3.0 * std::sqrt(2000.0));
  BlobSpec other = spec;
  other.seed = 1;
  EXPECT_NE(gen_blobs(other).x, a.x);
}

TEST(GenBlobs, MeansAreSeparated) {
  for (const BlobSpec spec : {BlobSpec{0, 100, 20, 5, 3.0, 0.0}, BlobSpec{1, 100, 2, 6, 2.0, 0.0},
                              BlobSpec{2, 100, 1, 4, 5.0, 0.0}}) {
    std::mt19937_64 rng(spec.seed);
    const Matrix means = blob_means(spec, rng);
    for (std::size_t i = 0; i < spec.classes; ++i)
      for (std::size_t j = i + 1; j < spec.classes; ++j)
        EXPECT_GE(std::sqrt(euclid_sq(means.row(i), means.row(j))), spec.separation / 2.0 - 1e-12);
  }
}

TEST(GenBlobs, CleanWellSeparatedDataIsLinearlyLearnable) {
  const Dataset raw = gen_blobs({3, 1000, 10, 4, 10.0, 0.0});
  const SplitPlan plan = make_split(raw.size(), 0, 0);
  const Dataset data = Standardizer::fit(raw, plan.target.train).apply(raw);
  TrainingConfig cfg;
  cfg.epochs = 30;
  const TrainResult r = train(cfg, {10, 16, 4}, data.subset(plan.target.train));
  EXPECT_GE(evaluate_accuracy(r.params, data.subset(plan.target.test)), 0.99);
}

TEST(GenBlobs, InvalidParameters) {
  for (const BlobSpec spec : {BlobSpec{0, 100, 5, 3, 0.0, 0.1}, BlobSpec{0, 100, 5, 3, 1.0, 1.0},
                              BlobSpec{0, 100, 5, 1, 1.0, 0.1}, BlobSpec{0, 100, 0, 3, 1.0, 0.1}}) {
    try {
      gen_blobs(spec);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
  }
}

TEST(Csv, HandWrittenFile) {
  const auto p = temp_file("three.csv", "f0,f1,label\n1.5,-2,7\n0,3.25,3\n4,5,7\n");
  const Dataset ds = load_csv(p.string());
  EXPECT_EQ(ds.x, Matrix(3, 2, Vector{1.5, -2.0, 0.0, 3.25, 4.0, 5.0}));
  EXPECT_EQ(ds.y, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(ds.num_classes, 2u);
}

TEST(Csv, RoundTrip) {
  const Dataset ds = gen_blobs({4, 60, 3, 3, 2.0, 0.1});
  const fs::path p = fs::temp_directory_path() / "crl_data_test" / "roundtrip.csv";
  fs::create_directories(p.parent_path());
  save_csv(ds, p.string());
  const Dataset back = load_csv(p.string());
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.y, ds.y);
}

TEST(Csv, ParseErrorsCarryLineNumbers) {
  const auto missing = temp_file("missing.csv", "f0,f1,label\n1,2,0\n3,1\n");
  try {
    load_csv(missing.string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  const auto junk = temp_file("junk.csv", "f0,label\n1,0\nabc,1\n");
  try {
    load_csv(junk.string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_csv(temp_file("header.csv", "a,b,label\n1,2,0\n").string()), Error);
  try {
    load_csv("/nonexistent/file.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(MakeSplit, EvenProportions) {
  const SplitPlan plan = make_split(1000, 0, 5);
  EXPECT_EQ(plan.target.train.size(), 250u);
  EXPECT_EQ(plan.target.test.size(), 250u);
  EXPECT_EQ(plan.shadow_pool.size(), 500u);
  EXPECT_EQ(plan.shadow_seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
}

TEST(MakeSplit, FuzzInvariants) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t n = 4 + (seed * 37) % 500;
    const SplitPlan plan = make_split(n, seed, 5);
    expect_split_invariants(plan, n);
    if (n >= 100)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = i + 1; j < 5; ++j) EXPECT_NE(plan.shadows[i].train, plan.shadows[j].train);
  }
}

TEST(MakeSplit, DeterministicAndSerializable) {
  const SplitPlan a = make_split(301, 7, 3);
  EXPECT_EQ(a, make_split(301, 7, 3));
  EXPECT_NE(a.target.train, make_split(301, 8, 3).target.train);
  EXPECT_EQ(split_from_json(split_to_json(a)), a);
  // The first shadow does not reuse the target permutation.
  EXPECT_NE(a.shadows[0].train, a.target.train);
}

TEST(MakeSplit, TooSmall) {
  try {
    make_split(3, 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(Standardizer, FittedOnSubsetOnly) {
  Dataset ds{Matrix(4, 1, Vector{1.0, 3.0, 100.0, -50.0}), {0, 1, 0, 1}, 2};
  const std::vector<std::size_t> rows{0, 1};
  const Standardizer s = Standardizer::fit(ds, rows);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(s.scale[0], 1.0);
  const Dataset z = s.apply(ds);
  EXPECT_DOUBLE_EQ(z.x(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(z.x(2, 0), 98.0);
}
