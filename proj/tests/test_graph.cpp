#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "chanprune/channel_flow.hpp"
#include "chanprune/counting.hpp"
#include "chanprune/errors.hpp"
#include "chanprune/groups.hpp"
#include "chanprune/plan.hpp"
#include "chanprune/zoo.hpp"
#include "oracles.hpp"

using namespace chanprune;

namespace {

std::size_t count_kind(const Graph& g, LayerKind k) {
  return static_cast<std::size_t>(
      std::count_if(g.nodes().begin(), g.nodes().end(), [&](const LayerNode& n) { return n.kind == k; }));
}

double rel(std::uint64_t got, double want) { return std::abs(static_cast<double>(got) - want) / want; }

}  // namespace

TEST(Zoo, EveryNamedArchitectureBuildsAndValidates) {
  ASSERT_EQ(architecture_names().size(), 8u);
  for (auto name : architecture_names()) {
    const Graph g = build_architecture(name);
    EXPECT_NO_THROW(g.validate()) << name;
    EXPECT_EQ(g.arch(), name);
  }
}

TEST(Zoo, UnknownNameIsConfigError) { EXPECT_THROW(build_architecture("lenet5"), ConfigError); }

TEST(Zoo, Vgg16HasThirteenConvsAndAClassifier) {
  const Graph g = build_architecture("vgg16_bn_cifar");
  EXPECT_EQ(g.conv_ids().size(), 13u);
  for (NodeId c : g.conv_ids()) EXPECT_TRUE(g.batchnorm_after(c).has_value()) << g.node(c).name;
  EXPECT_GE(count_kind(g, LayerKind::linear), 1u);
  EXPECT_EQ(g.input_spec().channels, 3u);
  EXPECT_EQ(g.input_spec().height, 32u);
}

TEST(Zoo, CifarResNetStagePattern) {
  // 3 stages of n basic blocks: 1 stem conv, 2n convs per stage, and a
  // downsampling shortcut conv in stages 2 and 3.
  for (auto [name, blocks] : {std::pair{"resnet8_cifar", 1}, {"resnet56_cifar", 9}, {"resnet110_cifar", 18}}) {
    const Graph g = build_architecture(name);
    EXPECT_EQ(g.conv_ids().size(), 1u + 6u * blocks + 2u) << name;
    EXPECT_EQ(count_kind(g, LayerKind::add), 3u * blocks) << name;
    const auto& s2 = g.node(g.find("s2.b1.down.conv")).conv();
    EXPECT_EQ(s2.stride, 2u);
    EXPECT_EQ(s2.kernel, 1u);
  }
}

TEST(Zoo, ConcatArchitecturesAreCountingOnly) {
  for (auto name : {"densenet40_cifar", "googlenet_cifar"}) {
    const Graph g = build_architecture(name);
    EXPECT_FALSE(g.trainable()) << name;
    EXPECT_GT(count_kind(g, LayerKind::concat), 0u);
    EXPECT_THROW(identify_prune_groups(g), TopologyError) << name;
  }
  EXPECT_TRUE(build_architecture("resnet8_cifar").trainable());
}

TEST(Zoo, InitialisationIsSeeded) {
  const Graph a = build_architecture("tinyconv_cifar", 10, 5), b = build_architecture("tinyconv_cifar", 10, 5);
  const Graph c = build_architecture("tinyconv_cifar", 10, 6);
  EXPECT_EQ(a.node(a.conv_ids()[0]).weight().tensor.values, b.node(b.conv_ids()[0]).weight().tensor.values);
  EXPECT_NE(a.node(a.conv_ids()[0]).weight().tensor.values, c.node(c.conv_ids()[0]).weight().tensor.values);
}

TEST(Counting, TableBaselinesWithinTwoPercent) {
  struct Row {
    const char* arch;
    double flops, params;
  };
  const Row rows[] = {
      {"vgg16_bn_cifar", 313.73e6, 14.98e6},  {"resnet56_cifar", 125.49e6, 0.85e6},
      {"resnet110_cifar", 252.89e6, 1.72e6},  {"densenet40_cifar", 282.92e6, 1.04e6},
      {"googlenet_cifar", 1.52e9, 6.15e6},    {"resnet50_imagenet", 4.09e9, 25.50e6},
  };
  for (const auto& r : rows) {
    const Graph g = build_architecture(r.arch);
    EXPECT_LE(rel(count_flops(g), r.flops), 0.02) << r.arch << " flops " << format_count(count_flops(g));
    EXPECT_LE(rel(count_params(g), r.params), 0.02) << r.arch << " params " << format_count(count_params(g));
  }
}

TEST(Counting, SinglePointwiseConvIsOneMac) {
  const ChainLayer layer{1, 1, 1, 0, false, false, false, 0};
  const Graph g = build_plain_chain("one", {1, 1, 1}, {&layer, 1}, 0);
  EXPECT_EQ(count_flops(g), 1u);
}

TEST(Counting, ThreeByThreeConvWithBiasParams) {
  const ChainLayer layer{4, 3, 1, 1, true, false, false, 0};
  const Graph g = build_plain_chain("c", {2, 8, 8}, {&layer, 1}, 0);
  EXPECT_EQ(count_params(g), 76u);
  EXPECT_EQ(count_flops(g), 4u * 2u * 9u * 64u);
}

TEST(Counting, ParamsEqualDirectEnumeration) {
  for (auto name : architecture_names()) {
    const Graph g = build_architecture(name);
    EXPECT_EQ(count_params(g), chanprune::testing::enumerate_params(g)) << name;
  }
}

TEST(Counting, FormatsWithTwoDecimals) {
  EXPECT_EQ(format_count(313730000), "313.73M");
  EXPECT_EQ(format_count(1520000000), "1.52B");
  EXPECT_EQ(format_count(855770), "855.77K");
  EXPECT_EQ(format_count(76), "76");
}

TEST(Groups, PlainChainHasNoGroups) {
  const Graph g = build_architecture("vgg16_bn_cifar");
  const auto layout = identify_prune_groups(g);
  EXPECT_TRUE(layout.groups.empty());
  EXPECT_EQ(layout.independent.size(), 13u);
}

TEST(Groups, ResNet56HasOneGroupPerStage) {
  const Graph g = build_architecture("resnet56_cifar");
  const auto layout = identify_prune_groups(g);
  ASSERT_EQ(layout.groups.size(), 3u);
  const auto& s1 = layout.groups[0];
  EXPECT_TRUE(s1.needs_channel_select);
  EXPECT_EQ(s1.members.size(), 9u);
  EXPECT_EQ(s1.max_depth, 9u);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(s1.depths[i], i + 1);
  for (std::size_t s = 1; s < 3; ++s) {
    EXPECT_FALSE(layout.groups[s].needs_channel_select);
    EXPECT_EQ(layout.groups[s].members.size(), 10u);  // 9 block outputs + downsample conv
  }
}

TEST(Groups, ResNet8DownsampleJoinsGroupWithBlockOneDepth) {
  const Graph g = build_architecture("resnet8_cifar");
  const auto layout = identify_prune_groups(g);
  ASSERT_EQ(layout.groups.size(), 3u);
  const auto& s2 = layout.groups[1];
  EXPECT_FALSE(s2.needs_channel_select);
  const NodeId down = g.find("s2.b1.down.conv");
  const auto it = std::find(s2.members.begin(), s2.members.end(), down);
  ASSERT_NE(it, s2.members.end());
  EXPECT_EQ(s2.depths[static_cast<std::size_t>(it - s2.members.begin())], 1u);
  for (NodeId m : s2.members) EXPECT_EQ(g.node(m).channels, s2.channels);
}

TEST(Groups, EveryConvAppearsExactlyOnce) {
  for (auto name : {"resnet8_cifar", "resnet56_cifar", "resnet110_cifar", "vgg16_bn_cifar", "tinyconv_cifar",
                    "resnet50_imagenet"}) {
    const Graph g = build_architecture(name);
    const auto layout = identify_prune_groups(g);
    std::multiset<NodeId> seen(layout.independent.begin(), layout.independent.end());
    for (const auto& grp : layout.groups) seen.insert(grp.members.begin(), grp.members.end());
    const auto convs = g.conv_ids();
    EXPECT_EQ(seen.size(), convs.size()) << name;
    for (NodeId c : convs) EXPECT_EQ(seen.count(c), 1u) << name << " " << g.node(c).name;
  }
}

TEST(Groups, UnitsFollowTopologicalOrder) {
  const Graph g = build_architecture("resnet8_cifar");
  const auto layout = identify_prune_groups(g);
  const auto units = prune_units(g, layout);
  EXPECT_EQ(units.size(), layout.independent.size() + layout.groups.size());
  for (std::size_t i = 1; i < units.size(); ++i) EXPECT_LT(units[i - 1].layers.front(), units[i].layers.front());
}

TEST(GraphInvariants, AddWithMismatchedChannelsIsAlignmentError) {
  Graph g("bad", {3, 8, 8}, 2);
  const NodeId a = g.conv("a", 0, 4, 3, 1, 1, false);
  const NodeId b = g.conv("b", 0, 5, 3, 1, 1, false);
  EXPECT_THROW(g.add("sum", a, b), ChannelAlignmentError);
}

TEST(Plan, TextRoundTripAndValidation) {
  const Graph g = build_architecture("resnet8_cifar");
  std::mt19937_64 rng(3);
  PrunePlan plan = chanprune::testing::random_plan(g, rng);
  plan.theta = 0.125;
  plan.phi = 1.5;
  plan.achieved_rate = 0.3;
  EXPECT_NO_THROW(plan.validate(g));
  const PrunePlan back = PrunePlan::parse(plan.to_text());
  EXPECT_EQ(back.to_text(), plan.to_text());
  EXPECT_EQ(back.theta, 0.125);
  EXPECT_EQ(back.retained_by_conv(), plan.retained_by_conv());
}

TEST(Plan, RejectsEmptyingALayer) {
  const Graph g = build_architecture("tinyconv_cifar");
  const NodeId c = g.conv_ids()[0];
  std::vector<std::size_t> all(g.node(c).channels);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_THROW(make_plan_entry(g, {c}, all), PlanError);
}

TEST(Plan, RejectsForeignGraph) {
  const Graph g = build_architecture("resnet8_cifar");
  std::mt19937_64 rng(4);
  const PrunePlan plan = chanprune::testing::random_plan(g, rng);
  EXPECT_THROW(plan.validate(build_architecture("tinyconv_cifar")), PlanError);
}

TEST(ChannelFlow, StageOneGroupGetsASelectionOnTheIdentityPath) {
  const Graph g = build_architecture("resnet8_cifar");
  const auto layout = identify_prune_groups(g);
  const auto& s1 = layout.groups[0];
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < s1.channels; k += 2) keep.push_back(k);
  std::map<NodeId, std::vector<std::size_t>> retained;
  for (NodeId m : s1.members) retained[m] = keep;
  const auto flow = trace_channel_flow(g, retained);
  ASSERT_EQ(flow.selections.size(), 1u);
  EXPECT_EQ(flow.selections[0].retained, keep);
  EXPECT_EQ(flow.selections[0].add, s1.adds.front());
}

TEST(ChannelFlow, DisagreeingBranchesRaiseAlignmentError) {
  const Graph g = build_architecture("resnet8_cifar");
  // Prune the stage-2 block output and its downsample conv differently.
  std::map<NodeId, std::vector<std::size_t>> retained{{g.find("s2.b1.conv2"), {0, 1, 2}},
                                                      {g.find("s2.b1.down.conv"), {0, 1, 3}}};
  EXPECT_THROW(trace_channel_flow(g, retained), ChannelAlignmentError);
}
