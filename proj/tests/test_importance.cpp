#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "chanprune/errors.hpp"
#include "chanprune/executor.hpp"
#include "chanprune/groups.hpp"
#include "chanprune/importance.hpp"
#include "chanprune/zoo.hpp"
#include "oracles.hpp"

using namespace chanprune;

namespace {

LayerScores layer_from(std::vector<std::vector<double>> saliency) {
  LayerScores l;
  l.channels = saliency.front().size();
  l.saliency = std::move(saliency);
  aggregate_layer(l);
  return l;
}

Dataset small_blobs(std::size_t n, std::uint64_t seed) {
  BlobOptions o;
  o.noise = 0.5;
  o.jitter = 2;
  return synth_blobs(10, n, seed, o);
}

// d/dt L(w_k * (1 + t)) at t = 0 by central differences: equals the signed
// sum over the filter of grad * w.
double directional_derivative(const Graph& g, const Batch& b, NodeId conv, std::size_t filter) {
  const double h = 1e-5;
  auto loss_at = [&](double t) {
    Graph m = g;
    auto& w = m.node(conv).weight().tensor;
    const std::size_t per = w.size() / w.dim(0);
    for (std::size_t i = filter * per; i < (filter + 1) * per; ++i) w.values[i] *= 1.0 + t;
    return chanprune::testing::batch_loss(m, b);
  };
  return (loss_at(h) - loss_at(-h)) / (2 * h);
}

}  // namespace

TEST(Ranks, AscendingOneBasedWithIndexTieBreak) {
  const std::vector<double> g{0.3, 0.1, 0.3, 0.0, 0.1};
  EXPECT_EQ(ascending_ranks(g), (std::vector<int>{4, 2, 5, 1, 3}));
}

TEST(Ranks, TwoFilterWorkedExample) {
  const LayerScores l = layer_from({{0.5, 0.1}});
  EXPECT_EQ(l.ranks[0], (std::vector<int>{2, 1}));
  EXPECT_EQ(l.score, (std::vector<double>{1.0, 0.5}));
}

TEST(Ranks, PermutationAndSumIdentitiesHoldExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const std::size_t p = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    std::vector<std::vector<double>> sal(p, std::vector<double>(c));
    std::uniform_int_distribution<int> coarse(0, 5);  // many ties
    for (auto& row : sal)
      for (auto& v : row) v = coarse(rng) * 0.25;
    const LayerScores l = layer_from(sal);
    for (const auto& z : l.ranks) {
      std::vector<int> sorted = z;
      std::sort(sorted.begin(), sorted.end());
      std::vector<int> expect(c);
      std::iota(expect.begin(), expect.end(), 1);
      EXPECT_EQ(sorted, expect);
    }
    const long long total = std::accumulate(l.rank_sums.begin(), l.rank_sums.end(), 0LL);
    EXPECT_EQ(2 * total, static_cast<long long>(p * c * (c + 1)));
    const double score_sum = std::accumulate(l.score.begin(), l.score.end(), 0.0);
    EXPECT_NEAR(score_sum, static_cast<double>(p) * static_cast<double>(c + 1) / 2.0, 1e-9 * static_cast<double>(p * c));
    for (double s : l.score) {
      EXPECT_GE(s, static_cast<double>(p) / static_cast<double>(c) - 1e-12);
      EXPECT_LE(s, static_cast<double>(p) + 1e-12);
    }
  }
}

TEST(Ranks, ScoresMatchBruteForceRecount) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> sal(4, std::vector<double>(8));
    for (auto& row : sal)
      for (auto& v : row) v = std::round(u(rng) * 6.0) / 6.0;
    const LayerScores l = layer_from(sal);
    const auto oracle = chanprune::testing::brute_force_scores(sal);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(l.score[k], oracle[k]);
  }
}

TEST(Ranks, DominatingFilterScoresHigher) {
  const LayerScores l = layer_from({{0.2, 0.9, 0.1}, {0.5, 0.6, 0.0}, {0.3, 0.7, 0.8}});
  EXPECT_GT(l.score[1], l.score[0]);  // filter 1 beats filter 0 in every batch
}

TEST(GroupScores, SingleBlockIsTheMemberScore) {
  ScoreTable t;
  t.layers.push_back(layer_from({{0.1, 0.5, 0.3}}));
  t.layers[0].layer = 7;
  PruneGroup g;
  g.members = {7};
  g.depths = {1};
  g.max_depth = 1;
  g.channels = 3;
  EXPECT_EQ(group_scores(t, g), t.layers[0].score);
}

TEST(GroupScores, TwoBlockWorkedExample) {
  ScoreTable t;
  LayerScores a, b;
  a.layer = 3;
  a.channels = 2;
  a.score = {1, 2};
  b.layer = 9;
  b.channels = 2;
  b.score = {2, 1};
  t.layers = {a, b};
  PruneGroup g;
  g.members = {3, 9};
  g.depths = {1, 2};
  g.max_depth = 2;
  g.channels = 2;
  EXPECT_EQ(group_scores(t, g), (std::vector<double>{2.5, 2.0}));
}

TEST(GroupScores, UnequalMemberWidthsAreRejected) {
  ScoreTable t;
  LayerScores a, b;
  a.layer = 1;
  a.channels = 2;
  a.score = {1, 2};
  b.layer = 2;
  b.channels = 3;
  b.score = {1, 2, 3};
  t.layers = {a, b};
  PruneGroup g;
  g.members = {1, 2};
  g.depths = {1, 2};
  g.max_depth = 2;
  g.channels = 2;
  EXPECT_THROW(group_scores(t, g), ChannelAlignmentError);
}

TEST(Saliency, ZeroFilterHasZeroSaliency) {
  Graph g = build_architecture("tinyconv_cifar", 10, 3);
  const NodeId c = g.conv_ids()[1];
  auto& w = g.node(c).weight().tensor;
  const std::size_t per = w.size() / w.dim(0);
  std::fill_n(w.values.begin() + static_cast<long>(5 * per), per, 0.0);
  const Dataset d = small_blobs(20, 1);
  const Batch b = Batches(d, 20, false, 0).get(0);
  const NodeId ids[] = {c};
  EXPECT_EQ(filter_saliency(g, b, ids)[0][5], 0.0);
}

TEST(Saliency, EqualsAbsoluteDirectionalDerivative) {
  Graph g = build_architecture("tinyconv_cifar", 10, 4);
  const Dataset d = small_blobs(20, 2);
  const Batch b = Batches(d, 20, false, 0).get(0);
  const auto convs = g.conv_ids();
  const auto sal = filter_saliency(g, b, convs);
  for (std::size_t l = 0; l < convs.size(); ++l)
    for (std::size_t k = 0; k < 3; ++k) {
      const double oracle = std::abs(directional_derivative(g, b, convs[l], k));
      EXPECT_LE(chanprune::testing::relative_error(sal[l][k], oracle), 1e-4) << "layer " << l << " filter " << k;
    }
}

TEST(Saliency, LinearRegimeMatchesExactLossChange) {
  // With the filter scaled far down, the loss is linear in it over the range
  // [0, w], so G equals the exact change from zeroing up to second order.
  Graph g = build_architecture("tinyconv_cifar", 10, 5);
  const Dataset d = small_blobs(20, 3);
  const Batch b = Batches(d, 20, false, 0).get(0);
  const NodeId c = g.conv_ids()[2];
  auto& w = g.node(c).weight().tensor;
  const std::size_t per = w.size() / w.dim(0);
  for (std::size_t i = 0; i < per; ++i) w.values[i] *= 1e-4;
  const NodeId ids[] = {c};
  const double G = filter_saliency(g, b, ids)[0][0];
  const double exact = std::abs(chanprune::testing::loss_with_filter_zeroed(g, b, c, 0) - chanprune::testing::batch_loss(g, b));
  EXPECT_GT(G, 0.0);
  EXPECT_NEAR(exact, G, 1e-3 * G);
}

TEST(Saliency, UninitialisedRunningStatsIsStateError) {
  Graph g = build_architecture("tinyconv_cifar", 10, 6);
  for (auto& n : g.nodes())
    if (n.kind == LayerKind::bn) n.bn().stats = {};
  const Dataset d = small_blobs(10, 4);
  const auto convs = g.conv_ids();
  EXPECT_THROW(filter_saliency(g, Batches(d, 10, false, 0).get(0), convs), StateError);
}

TEST(Aggregate, DeterministicAndConsistentWithStoredSaliency) {
  Graph g = build_architecture("tinyconv_cifar", 10, 7);
  const Dataset d = small_blobs(60, 5);
  const ScoreTable a = aggregate_scores(g, d, 20), b = aggregate_scores(g, d, 20);
  EXPECT_EQ(a.batches, 3u);
  ASSERT_EQ(a.layers.size(), g.conv_ids().size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    EXPECT_EQ(a.layers[l].saliency, b.layers[l].saliency);
    EXPECT_EQ(a.layers[l].score, b.layers[l].score);
    const auto oracle = chanprune::testing::brute_force_scores(a.layers[l].saliency);
    for (std::size_t k = 0; k < oracle.size(); ++k) EXPECT_DOUBLE_EQ(a.layers[l].score[k], oracle[k]);
  }
}

TEST(Aggregate, ResNet8GroupScoresMatchManualWeightedSum) {
  Graph g = build_architecture("resnet8_cifar", 10, 8);
  const Dataset d = small_blobs(20, 6);
  const ScoreTable t = aggregate_scores(g, d, 10);
  for (const auto& grp : identify_prune_groups(g).groups) {
    const auto got = group_scores(t, grp);
    for (std::size_t k = 0; k < grp.channels; ++k) {
      double expect = 0;
      for (std::size_t i = 0; i < grp.members.size(); ++i) {
        const auto& member = t.at(grp.members[i]);
        const auto oracle = chanprune::testing::brute_force_scores(member.saliency);
        expect += static_cast<double>(grp.depths[i]) / static_cast<double>(grp.max_depth) * oracle[k];
      }
      EXPECT_NEAR(got[k], expect, 1e-12);
    }
  }
}

TEST(Aggregate, CsvRoundTripKeepsScores) {
  Graph g = build_architecture("tinyconv_cifar", 10, 9);
  const ScoreTable t = aggregate_scores(g, small_blobs(20, 7), 10);
  const ScoreTable back = ScoreTable::parse_csv(t.to_csv());
  ASSERT_EQ(back.layers.size(), t.layers.size());
  for (std::size_t l = 0; l < t.layers.size(); ++l) {
    EXPECT_EQ(back.layers[l].layer, t.layers[l].layer);
    EXPECT_EQ(back.layers[l].score, t.layers[l].score);
  }
  EXPECT_EQ(t.to_csv().substr(0, 23), "layer,name,filter,score");
}
