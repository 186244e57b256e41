#pragma once

#include <cstddef>
#include <vector>

#include "chanprune/graph.hpp"

namespace chanprune {

/// Convolutions whose outputs meet at residual adds and therefore must keep
/// one shared set of output channels: the last conv of every block in a
/// stage, plus the stage's downsampling shortcut conv when it has one.
struct PruneGroup {
  std::vector<NodeId> members;      // block order; a downsample conv follows its block's member
  std::vector<std::size_t> depths;  // 1-based block position of each member
  std::size_t max_depth = 0;        // number of blocks in the stage
  std::size_t channels = 0;
  bool needs_channel_select = false;  // stage input reaches an add through an identity path
  std::vector<NodeId> adds;           // aligned add nodes in block order
};

struct PruneLayout {
  std::vector<PruneGroup> groups;
  std::vector<NodeId> independent;  // convs prunable on their own
};

/// Discovers prune groups from residual adds. Throws TopologyError for concat
/// graphs and for adds whose inputs cannot be traced back to convolutions.
PruneLayout identify_prune_groups(const Graph& graph);

/// One unit of the layer-wise search: an independent conv or a whole group.
struct PruneUnit {
  std::vector<NodeId> layers;
  std::size_t channels = 0;
  const PruneGroup* group = nullptr;
};

/// Units in topological order of their first layer.
std::vector<PruneUnit> prune_units(const Graph& graph, const PruneLayout& layout);

}  // namespace chanprune
