#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "saelab/hungarian.hpp"
#include "saelab/metrics.hpp"
#include "test_util.hpp"

using namespace saelab;
using Eigen::MatrixXd;

namespace {

double brute_force_best(const MatrixXd& w) {
  // maximum-weight matching of size min(r, c) by permutation enumeration
  const bool transpose = w.rows() > w.cols();
  const MatrixXd s = transpose ? MatrixXd(w.transpose()) : w;
  std::vector<int> cols(static_cast<std::size_t>(s.cols()));
  std::iota(cols.begin(), cols.end(), 0);
  double best = -1e300;
  do {
    double t = 0.0;
    for (Eigen::Index r = 0; r < s.rows(); ++r) t += s(r, cols[static_cast<std::size_t>(r)]);
    best = std::max(best, t);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

FrequencyProfile profile(const Eigen::VectorXd& freq) {
  FrequencyProfile p;
  p.frequency = freq;
  p.mean_magnitude = Eigen::VectorXd::Ones(freq.size());
  p.dead.assign(static_cast<std::size_t>(freq.size()), false);
  return p;
}

Dictionary signed_permutation(const Dictionary& a, std::mt19937_64& rng, bool scale) {
  std::vector<int> perm(static_cast<std::size_t>(a.cols()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::uniform_real_distribution<double> mag(0.1, 5.0);
  Dictionary out(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    double f = (rng() & 1) ? 1.0 : -1.0;
    if (scale) f *= mag(rng);
    out.col(j) = f * a.col(perm[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace

TEST(Hungarian, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(1, 7);
  for (int trial = 0; trial < 200; ++trial) {
    const int r = dim(rng), c = dim(rng);
    const MatrixXd sim = testutil::gaussian(r, c, 1000 + trial).cwiseAbs();
    const auto res = match_similarity(sim);
    EXPECT_EQ(res.pairs.size(), static_cast<std::size_t>(std::min(r, c)));
    EXPECT_NEAR(res.total, brute_force_best(sim), 1e-12) << r << "x" << c;
    std::set<std::size_t> is, js;
    for (const auto& p : res.pairs) {
      is.insert(p.i);
      js.insert(p.j);
      EXPECT_EQ(p.similarity, sim(static_cast<Eigen::Index>(p.i), static_cast<Eigen::Index>(p.j)));
    }
    EXPECT_EQ(is.size(), res.pairs.size());
    EXPECT_EQ(js.size(), res.pairs.size());
  }
}

TEST(Hungarian, AssignmentSolverMinimizes) {
  MatrixXd cost(3, 3);
  cost << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const auto a = solve_assignment(cost);
  double total = 0;
  for (int r = 0; r < 3; ++r) total += cost(r, a[static_cast<std::size_t>(r)]);
  EXPECT_EQ(total, 5.0);
  MatrixXd wide(1, 3);
  wide << 3, 1, 2;
  EXPECT_EQ(solve_assignment(wide)[0], 1);
  MatrixXd tall(3, 1);
  tall << 3, 1, 2;
  const auto t = solve_assignment(tall);
  EXPECT_EQ(t[0], -1);
  EXPECT_EQ(t[1], 0);
  EXPECT_EQ(t[2], -1);
}

TEST(Mcc, SimilarityMatrixProperties) {
  const Dictionary a = testutil::gaussian(5, 4, 1), b = testutil::gaussian(5, 6, 2);
  const MatrixXd s = similarity_matrix(a, b);
  EXPECT_EQ(s.rows(), 4);
  EXPECT_EQ(s.cols(), 6);
  EXPECT_GE(s.minCoeff(), 0.0);
  EXPECT_LE(s.maxCoeff(), 1.0 + 1e-12);
  Dictionary z = a;
  z.col(2).setZero();
  EXPECT_EQ(similarity_matrix(z, b).row(2).norm(), 0.0);
}

TEST(Mcc, InvariantToSignedScaledPermutation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Dictionary a = testutil::gaussian(8, 12, 50 + trial);
    EXPECT_NEAR(mcc(a, signed_permutation(a, rng, true)).mean, 1.0, 1e-9);
  }
}

TEST(Mcc, SymmetricAndBounded) {
  const Dictionary a = testutil::gaussian(6, 9, 1), b = testutil::gaussian(6, 9, 2);
  const double ab = mcc(a, b).mean, ba = mcc(b, a).mean;
  EXPECT_NEAR(ab, ba, 1e-12);
  EXPECT_GT(ab, 0.0);
  EXPECT_LT(ab, 1.0);
  EXPECT_NEAR(mcc(a, a).mean, 1.0, 1e-12);
}

TEST(Mcc, RectangularUsesSmallerSide) {
  const Dictionary gt = testutil::gaussian(6, 4, 1);
  Dictionary learned(6, 7);
  learned << gt, testutil::gaussian(6, 3, 9);
  const auto r = mcc(learned, gt);
  EXPECT_EQ(r.pairs.size(), 4u);
  EXPECT_NEAR(r.mean, 1.0, 1e-12);
}

TEST(PwMcc, PairCountAndMean) {
  std::vector<Dictionary> d;
  for (int i = 0; i < 5; ++i) d.push_back(testutil::gaussian(4, 6, static_cast<std::uint64_t>(i)));
  const auto rep = pw_mcc(d);
  ASSERT_EQ(rep.pairwise.size(), 10u);
  double s = 0;
  for (const auto& p : rep.pairwise) s += mcc(d[p.run_a], d[p.run_b]).mean;
  EXPECT_NEAR(rep.mean_pw_mcc, s / 10, 1e-15);
  EXPECT_THROW(pw_mcc(std::span<const Dictionary>(d.data(), 1)), std::invalid_argument);
}

TEST(Binned, ContributionsSumToPairMcc) {
  const Dictionary a = testutil::gaussian(8, 20, 4), b = testutil::gaussian(8, 20, 5);
  const auto match = mcc(a, b);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 0);
  Eigen::VectorXd fa(20), fb(20);
  for (int i = 0; i < 20; ++i) {
    fa(i) = std::pow(10.0, u(rng));
    fb(i) = std::pow(10.0, u(rng));
  }
  fa(3) = 0.0;  // dead feature
  for (BinMode mode : {BinMode::Log, BinMode::Quantile}) {
    const auto bs = binned_similarity(match, profile(fa), profile(fb), 6, mode);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& bin : bs.bins) {
      total += bin.contribution;
      count += bin.count;
    }
    EXPECT_NEAR(total, match.mean, 1e-12) << to_string(mode);
    EXPECT_NEAR(bs.bins.back().cumulative, match.mean, 1e-12);
    EXPECT_EQ(count, 20u);
    for (const auto& p : bs.pairs) EXPECT_EQ(p.min_freq, std::min(p.freq_a, p.freq_b));
  }
}

TEST(Binned, QuantileBinsBalanced) {
  const Dictionary a = testutil::gaussian(8, 30, 4);
  const auto match = mcc(a, a);
  Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(30, 0.01, 0.3);
  const auto bs = binned_similarity(match, profile(f), profile(f), 3, BinMode::Quantile);
  for (const auto& bin : bs.bins) EXPECT_EQ(bin.count, 10u);
}

TEST(Capacity, ExponentRoundTrip) {
  const std::vector<double> p = cluster_probabilities(ZipfLaw{1.5}, 12);
  for (double beta : {0.3, 0.5, 1.0}) {
    std::vector<double> alloc;
    for (double pi : p) alloc.push_back(4.2 * std::pow(pi, beta));
    const auto fit = fit_allocation_exponent(p, alloc);
    ASSERT_TRUE(fit.beta.has_value());
    EXPECT_NEAR(*fit.beta, beta, 1e-6);
    EXPECT_NEAR(*fit.log_intercept, std::log(4.2), 1e-6);
  }
}

TEST(Capacity, DegenerateFits) {
  const std::vector<double> p{0.25, 0.25, 0.25, 0.25};
  const std::vector<double> a{1, 2, 3, 4};
  EXPECT_EQ(fit_allocation_exponent(p, a).fit_status, "zero-variance");
  EXPECT_FALSE(fit_allocation_exponent(p, a).beta.has_value());
  const std::vector<double> one{0.5, 0.5};
  const std::vector<double> lone{3, 0};
  EXPECT_EQ(fit_allocation_exponent(one, lone).fit_status, "too-few-clusters");
}

TEST(Capacity, CountsMatchedPartnersPerCluster) {
  MatchResult m;
  for (std::size_t j : {0u, 1u, 2u, 5u, 9u}) m.pairs.push_back({j, j, 1.0});
  const std::vector<double> p{0.6, 0.3, 0.1};
  const auto c = capacity_allocation(m, 4, p);
  EXPECT_EQ(c.allocation, (std::vector<double>{3, 1, 1}));
}

TEST(Capacity, PerClusterMccAndLocalRedundancy) {
  Dictionary gt = testutil::gaussian(10, 6, 1);
  Dictionary learned = gt.leftCols(3);  // covers cluster 0 exactly
  const auto v = per_cluster_gt_mcc(learned, gt, 3);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_NEAR(v[0], 1.0, 1e-12);
  EXPECT_LT(v[1], 1.0);
  const std::vector<double> alloc{6, 3, 1};
  const std::vector<std::size_t> sizes{3, 3, 3};
  const auto r = local_redundancy(alloc, sizes);
  EXPECT_EQ(r[0].regime, LocalRegime::Redundant);
  EXPECT_EQ(r[1].regime, LocalRegime::Matched);
  EXPECT_EQ(r[2].regime, LocalRegime::Compressive);
  EXPECT_DOUBLE_EQ(r[0].rho, 2.0);
}

TEST(Intersection, IdenticalRunsRecoveringTruth) {
  const Dictionary gt = testutil::gaussian(8, 10, 2);
  EXPECT_NEAR(intersection_ratio(gt, gt, gt), 1.0, 1e-15);
  std::vector<Dictionary> runs{gt, gt, gt};
  EXPECT_NEAR(mean_intersection_ratio(runs, gt), 1.0, 1e-15);
}

TEST(Intersection, RedundantRunCountsOnlyGroundTruthMatches) {
  // run1 = [gt | noise]; run2 shares the noise half exactly, so the top
  // run1->run2 pairs are the noise features, which have no gt partner.
  const Dictionary gt = testutil::gaussian(8, 4, 2);
  const Dictionary noise = testutil::gaussian(8, 4, 3);
  Dictionary run1(8, 8), run2(8, 8);
  run1 << gt, noise;
  run2 << testutil::gaussian(8, 4, 4), noise;
  const double r = intersection_ratio(run1, run2, gt);
  EXPECT_GE(r, 0.0);
  EXPECT_LT(r, 1.0);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 6, 8, 100}, down{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, up), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-15);
  const std::vector<double> ties{1, 1, 2, 3, 3};
  // average ranks (1.5,1.5,3,4.5,4.5) vs (1..5)
  const double expect = 0.9486832980505138;
  EXPECT_NEAR(spearman(x, ties), expect, 1e-12);
  const std::vector<double> flat{1, 1, 1, 1, 1};
  EXPECT_TRUE(std::isnan(spearman(x, flat)));
}

TEST(Frequencies, CountsActiveSamples) {
  SaeModel m = init_model(Arch::Standard, 2, 2, {}, 0);
  m.W_enc = MatrixXd::Identity(2, 2);
  m.W_dec = MatrixXd::Identity(2, 2);
  MatrixXd x(2, 4);
  x << 1, 2, 0, 0, 0, 0, 0, 3;
  const auto p = activation_frequencies(m, x, 1e-6, 3);
  EXPECT_DOUBLE_EQ(p.frequency(0), 0.5);
  EXPECT_DOUBLE_EQ(p.frequency(1), 0.25);
  EXPECT_DOUBLE_EQ(p.mean_magnitude(0), 1.5);
  EXPECT_FALSE(p.dead[0]);
  const auto q = activation_frequencies(m, x, 0.3, 3);
  EXPECT_TRUE(q.dead[1]);
}
