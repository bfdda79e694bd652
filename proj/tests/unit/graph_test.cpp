#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "test_support.hpp"
#include "topoens/graph.hpp"

using namespace topoens;

namespace {

DistanceGraph Graph3(double d01, double d02, double d12) {
  return DistanceGraph::FromEdges(3, {{0, 1, d01}, {0, 2, d02}, {1, 2, d12}});
}

}  // namespace

TEST(Symmetrize, TakesLargerAttentionOfEachPair) {
  const std::vector<double> m = {0.9, 0.1, 0.4, 0.6};
  const auto g = Symmetrize<double>(m, 2);
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_EQ(g(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(g(0, 1), 0.6);
  EXPECT_DOUBLE_EQ(g(1, 0), 0.6);
}

TEST(Symmetrize, SymmetricInputGivesOneMinusOffDiagonal) {
  const std::vector<double> m = {0.2, 0.3, 0.5, 0.3, 0.4, 0.3, 0.5, 0.3, 0.2};
  const auto g = Symmetrize<double>(m, 3);
  for (std::size_t u = 0; u < 3; ++u) {
    for (std::size_t v = 0; v < 3; ++v) {
      EXPECT_EQ(g(u, v), u == v ? 0.0 : 1.0 - m[u * 3 + v]);
    }
  }
}

TEST(Symmetrize, SaturatedAttentionCollapsesToOneComponent) {
  const std::vector<float> m(16, 1.0f);
  const auto g = Symmetrize<float>(m, 4);
  for (double w : g.weights()) EXPECT_EQ(w, 0.0);
  EXPECT_EQ(ComputeMergeSequence(g).ComponentsAt(0.0), 1u);
}

TEST(Symmetrize, RejectsBadInput) {
  const std::vector<double> bad = {0.5, 1.5, 0.5, 0.5};
  EXPECT_THROW(Symmetrize<double>(bad, 2), Error);
  const std::vector<double> short_m = {0.5, 0.5, 0.5};
  try {
    Symmetrize<double>(short_m, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
  }
}

TEST(DistanceGraph, FromMatrixEnforcesInvariants) {
  EXPECT_THROW(DistanceGraph::FromMatrix(2, {0.0, 0.3, 0.4, 0.0}), Error);  // asymmetric
  EXPECT_THROW(DistanceGraph::FromMatrix(2, {0.1, 0.3, 0.3, 0.0}), Error);  // diagonal
  EXPECT_THROW(DistanceGraph::FromMatrix(2, {0.0, 1.3, 1.3, 0.0}), Error);  // range
  EXPECT_THROW(DistanceGraph::FromMatrix(2, {0.0, 0.3, 0.3}), Error);       // shape
  EXPECT_NO_THROW(DistanceGraph::FromMatrix(2, {0.0, 0.3, 0.3, 0.0}));
}

TEST(MergeSequence, ThreeVertexExampleMatchesSweep) {
  const auto g = Graph3(0.1, 0.5, 0.3);
  EXPECT_EQ(ComputeMergeSequence(g).times, (std::vector<double>{0.1, 0.3}));
  EXPECT_EQ(oracle::MergeTimes(g), (std::vector<double>{0.1, 0.3}));
}

TEST(MergeSequence, SingleVertexHasNoMerges) {
  const auto g = DistanceGraph::FromMatrix(1, {0.0});
  EXPECT_TRUE(ComputeMergeSequence(g).times.empty());
  EXPECT_EQ(ComputeMergeSequence(g).ComponentsAt(0.0), 1u);
}

TEST(MergeSequence, EqualDistancesMergeTogether) {
  EXPECT_EQ(ComputeMergeSequence(Graph3(0.5, 0.5, 0.5)).times, (std::vector<double>{0.5, 0.5}));
}

TEST(MergeSequence, MatchesBruteForceSweepOnRandomGraphs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + trial % 8;
    const auto g = testing_support::RandomGraph(n, rng);
    const auto seq = ComputeMergeSequence(g);
    ASSERT_EQ(seq.times, oracle::MergeTimes(g));
    for (double w : oracle::DistinctWeights(g)) {
      EXPECT_EQ(seq.ComponentsAt(w), oracle::ComponentsAt(g, w));
    }
  }
}

TEST(MergeSequence, SumEqualsExhaustiveMinimumSpanningTree) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + trial % 5;
    const auto g = testing_support::RandomGraph(n, rng);
    EXPECT_NEAR(SpanningTreeWeight(ComputeMergeSequence(g)), oracle::ExhaustiveSpanningTreeWeight(g),
                1e-12);
  }
}

TEST(MergeSequence, InvariantUnderVertexRelabeling) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 10;
    const auto g = testing_support::RandomGraph(n, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_EQ(ComputeMergeSequence(g.Induced(perm)).times, ComputeMergeSequence(g).times);
  }
}

TEST(ElementwiseMin, Examples) {
  const auto g1 = Graph3(0.4, 0.8, 0.9);
  EXPECT_EQ(ElementwiseMin(g1, g1), g1);
  const auto zero = Graph3(0.0, 0.0, 0.0);
  EXPECT_EQ(ElementwiseMin(g1, zero), zero);
  const auto g2 = Graph3(0.2, 0.9, 0.95);
  EXPECT_EQ(ElementwiseMin(g1, g2)(0, 1), 0.2);
  EXPECT_EQ(ElementwiseMin(g1, g2)(1, 0), 0.2);
  EXPECT_THROW(ElementwiseMin(g1, DistanceGraph::FromMatrix(1, {0.0})), Error);
}

TEST(ElementwiseMin, UnionMergesNeverLater) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const auto g1 = testing_support::RandomGraph(n, rng);
    const auto g2 = testing_support::RandomGraph(n, rng);
    const auto seq1 = ComputeMergeSequence(g1);
    const auto sequ = ComputeMergeSequence(ElementwiseMin(g1, g2));
    for (std::size_t i = 0; i < seq1.times.size(); ++i) EXPECT_LE(sequ.times[i], seq1.times[i]);
    for (double w : oracle::DistinctWeights(g1)) {
      EXPECT_LE(sequ.ComponentsAt(w), seq1.ComponentsAt(w));
    }
  }
}

TEST(UnionFind, TracksComponents) {
  UnionFind uf(5);
  EXPECT_TRUE(uf.Unite(0, 1));
  EXPECT_TRUE(uf.Unite(3, 4));
  EXPECT_FALSE(uf.Unite(1, 0));
  EXPECT_TRUE(uf.Unite(1, 4));
  EXPECT_EQ(uf.Find(0), uf.Find(3));
  EXPECT_NE(uf.Find(2), uf.Find(0));
}
