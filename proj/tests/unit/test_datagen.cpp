#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "saelab/datagen.hpp"
#include "saelab/rng.hpp"
#include "test_util.hpp"

using namespace saelab;

TEST(Rng, SameKeyGivesSameStream) {
  CounterRng a(7, Stream::Values, 3), b(7, Stream::Values, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsAndSubstreamsDiffer) {
  CounterRng a(7, Stream::Values, 3), b(7, Stream::Dictionary, 3), c(7, Stream::Values, 4);
  EXPECT_NE(a.next_u64(), b.next_u64());
  CounterRng a2(7, Stream::Values, 3);
  EXPECT_NE(a2.next_u64(), c.next_u64());
}

TEST(Rng, UniformAndNormalMoments) {
  CounterRng r(1, Stream::Values);
  double su = 0, sn = 0, sn2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}

TEST(Rng, BelowStaysInRange) {
  CounterRng r(3, Stream::SupportDraw);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++hist[v];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}

TEST(GroundTruth, UnitColumnsAndDeterminism) {
  GroundTruthSpec spec;  // m=8, d_gt=16, k=3, n=50000
  const auto a = sample_ground_truth(spec);
  ASSERT_EQ(a.rows(), 8);
  ASSERT_EQ(a.cols(), 16);
  for (Eigen::Index j = 0; j < a.cols(); ++j) EXPECT_NEAR(a.col(j).norm(), 1.0, 1e-9);
  const auto b = sample_ground_truth(spec);
  EXPECT_TRUE((a.array() == b.array()).all());
  spec.seed = 1;
  EXPECT_GT((sample_ground_truth(spec) - a).norm(), 0.0);
}

TEST(GroundTruth, EverySixColumnsIndependentByEliminationOracle) {
  GroundTruthSpec spec;
  const auto a = sample_ground_truth(spec);
  int subsets = 0, full = 0;
  testutil::for_each_subset(16, 6, [&](const std::vector<int>& s) {
    Eigen::MatrixXd sub(8, 6);
    for (int t = 0; t < 6; ++t) sub.col(t) = a.col(s[t]);
    ++subsets;
    full += testutil::elimination_rank(sub) == 6;
  });
  EXPECT_EQ(subsets, 8008);
  EXPECT_EQ(full, 8008);
}

TEST(GroundTruth, RejectsEmptyShapes) {
  GroundTruthSpec spec;
  spec.m = 0;
  EXPECT_THROW(sample_ground_truth(spec), std::invalid_argument);
  spec.m = 8;
  spec.d_gt = 0;
  EXPECT_THROW(sample_ground_truth(spec), std::invalid_argument);
}

TEST(FrequencyLaw, UniformIsFlat) {
  const auto p = cluster_probabilities(UniformLaw{}, 10);
  for (double v : p) EXPECT_DOUBLE_EQ(v, 0.1);
}

TEST(FrequencyLaw, ZipfHeadMatchesHarmonicNumber) {
  double h10 = 0.0;
  for (int i = 10; i >= 1; --i) h10 += 1.0 / i;
  EXPECT_NEAR(h10, 2.9289682539682538, 1e-15);
  const auto p = cluster_probabilities(ZipfLaw{1.0}, 10);
  EXPECT_NEAR(p[0], 1.0 / h10, 1e-14);
  EXPECT_NEAR(p[0], 0.3414, 1e-4);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(p[i], 1.0 / ((i + 1) * h10), 1e-14);
}

TEST(FrequencyLaw, TwoPhaseIsContinuousAtTransition) {
  const TwoPhaseLaw law{1.05, 5.0, 30.0, 40000};
  const double head_at_t = std::pow(40000.0 + 5.0, -1.05);
  EXPECT_NEAR(two_phase_weight(law, 40000) / head_at_t, 1.0, 1e-12);
  EXPECT_NEAR(two_phase_weight(law, 39999), std::pow(39999.0 + 5.0, -1.05), 1e-20);
  // Tail follows r^-s2 scaled to meet the head.
  EXPECT_NEAR(two_phase_weight(law, 40001) / head_at_t, std::pow(40001.0 / 40000.0, -30.0), 1e-12);
  const double jump = two_phase_weight(law, 39999) / two_phase_weight(law, 40001);
  EXPECT_GT(jump, 1.0);
  EXPECT_LT(jump, 1.001);
  const auto p = cluster_probabilities(law, 50000);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    total += p[i];
    if (i) EXPECT_LE(p[i], p[i - 1]);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(FrequencyLaw, RejectsBadParameters) {
  EXPECT_THROW(cluster_probabilities(ZipfLaw{0.0}, 10), std::invalid_argument);
  EXPECT_THROW(cluster_probabilities(ZipfLaw{-1.0}, 10), std::invalid_argument);
  EXPECT_THROW(cluster_probabilities(TwoPhaseLaw{0.0, 5.0, 30.0, 10}, 20), std::invalid_argument);
  EXPECT_THROW(cluster_probabilities(TwoPhaseLaw{1.0, 5.0, -1.0, 10}, 20), std::invalid_argument);
  EXPECT_THROW(cluster_probabilities(UniformLaw{}, 0), std::invalid_argument);
}

TEST(FrequencyLaw, NormalizedAndNonIncreasing) {
  for (double alpha : {0.5, 1.0, 1.1, 1.5, 2.0, 3.0}) {
    const auto p = cluster_probabilities(ZipfLaw{alpha}, 137);
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      total += p[i];
      if (i) EXPECT_LE(p[i], p[i - 1]);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(GroundTruthSpec, ValidateRejectsInconsistentLayouts) {
  GroundTruthSpec s;
  s.d_gt = 16;
  s.clusters = 3;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.clusters = 8;  // cluster size 2 < k = 3
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.clusters = 4;
  EXPECT_NO_THROW(s.validate());
  s.k = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Dataset, ExactSparsityWithinOneClusterAndExactGeneration) {
  GroundTruthSpec spec;
  spec.d_gt = 40;
  spec.clusters = 5;
  spec.k = 3;
  spec.n = 5000;
  spec.law = ZipfLaw{1.0};
  const auto a = sample_ground_truth(spec);
  const auto ds = sample_dataset(spec, a);
  ASSERT_EQ(ds.n(), 5000u);
  ASSERT_TRUE(ds.has_codes());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto s = ds.codes.support(i);
    ASSERT_EQ(s.size(), 3u);
    const auto cluster = s[0] / 8;
    for (std::size_t t = 0; t < s.size(); ++t) {
      EXPECT_EQ(s[t] / 8, cluster);
      if (t) EXPECT_LT(s[t - 1], s[t]);
      EXPECT_GT(ds.codes.coefficients(i)[t], 0.0);
    }
    EXPECT_EQ(ds.cluster_of_sample[i], cluster);
    const Eigen::VectorXd x = reconstruct_sample(a, ds.codes, i);
    EXPECT_LE((x - ds.X.col(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Dataset, MatchedSpecReconstructsToMachinePrecision) {
  GroundTruthSpec spec;  // m=8, d_gt=16, k=3, n=50000
  const auto a = sample_ground_truth(spec);
  const auto ds = sample_dataset(spec, a);
  double worst = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i)
    worst = std::max(worst, (reconstruct_sample(a, ds.codes, i) - ds.X.col(static_cast<Eigen::Index>(i)))
                                .cwiseAbs()
                                .maxCoeff());
  EXPECT_LE(worst, 1e-12);
}

TEST(Dataset, SignedValuesFlag) {
  GroundTruthSpec spec;
  spec.n = 2000;
  spec.signed_values = true;
  const auto ds = sample_dataset(spec, sample_ground_truth(spec));
  std::size_t negative = 0;
  for (double v : ds.codes.values) negative += v < 0.0;
  EXPECT_GT(negative, 2000u);
  EXPECT_LT(negative, 4000u);
}

TEST(Dataset, ZipfClusterFrequenciesPassChiSquare) {
  GroundTruthSpec spec;
  spec.m = 8;
  spec.d_gt = 40;
  spec.clusters = 10;
  spec.k = 2;
  spec.n = 100000;
  spec.law = ZipfLaw{2.0};
  const auto ds = sample_dataset(spec, sample_ground_truth(spec));
  std::vector<double> observed(10, 0.0);
  for (auto c : ds.cluster_of_sample) observed[c] += 1.0;
  // Analytic law computed independently of the library.
  std::vector<double> p(10);
  double z = 0.0;
  for (int i = 0; i < 10; ++i) z += std::pow(i + 1.0, -2.0);
  for (int i = 0; i < 10; ++i) p[i] = std::pow(i + 1.0, -2.0) / z;
  double chi2 = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double e = p[i] * spec.n;
    chi2 += (observed[i] - e) * (observed[i] - e) / e;
  }
  const boost::math::chi_squared dist(9);
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.999)) << "chi2=" << chi2;
}

TEST(Dataset, DeterministicAndIndependentOfWorkerCount) {
  GroundTruthSpec spec;
  spec.d_gt = 32;
  spec.clusters = 4;
  spec.law = ZipfLaw{1.5};
  spec.n = 3001;
  const auto a = sample_ground_truth(spec);
  const auto one = sample_dataset(spec, a, 1);
  const auto four = sample_dataset(spec, a, 4);
  EXPECT_TRUE((one.X.array() == four.X.array()).all());
  EXPECT_EQ(one.codes.indices, four.codes.indices);
  EXPECT_EQ(one.codes.values, four.codes.values);
  EXPECT_EQ(one.cluster_of_sample, four.cluster_of_sample);
}

TEST(Dataset, SingleClusterDrawsFromAllFeatures) {
  GroundTruthSpec spec;
  spec.n = 20000;
  const auto ds = sample_dataset(spec, sample_ground_truth(spec));
  std::vector<int> used(16, 0);
  for (auto idx : ds.codes.indices) ++used[idx];
  for (int u : used) EXPECT_NEAR(u, 20000 * 3 / 16.0, 300);
}

TEST(Dataset, RejectsMismatchedDictionary) {
  GroundTruthSpec spec;
  EXPECT_THROW(sample_dataset(spec, Eigen::MatrixXd::Ones(8, 15)), std::invalid_argument);
}
