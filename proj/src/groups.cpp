#include "chanprune/groups.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "chanprune/errors.hpp"

namespace chanprune {
namespace {

bool passes_channels_through(const LayerNode& n) {
  return n.kind == LayerKind::bn || n.kind == LayerKind::relu || n.kind == LayerKind::channel_select ||
         (n.kind == LayerKind::pool && n.pool().type != PoolType::global_avg);
}

// Walks producer edges through channel-preserving layers.
NodeId trace_source(const Graph& g, NodeId id) {
  while (passes_channels_through(g.node(id))) id = g.node(id).inputs.front();
  return id;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

struct AddInfo {
  std::vector<NodeId> branch_convs;  // main branch first, then a downsample conv if any
  bool identity_from_outside = false;
};

}  // namespace

PruneLayout identify_prune_groups(const Graph& graph) {
  for (const auto& n : graph.nodes())
    if (n.kind == LayerKind::concat)
      throw TopologyError("layer '" + n.name +
                          "': concat topologies are counting-only and cannot be grouped for pruning");

  std::map<NodeId, AddInfo> adds;
  UnionFind uf(graph.size());
  for (const auto& n : graph.nodes()) {
    if (n.kind != LayerKind::add) continue;
    const NodeId a = n.inputs[0], b = n.inputs[1];
    AddInfo info;
    std::vector<NodeId> branches;
    NodeId identity = graph.size();
    if (graph.is_ancestor(a, b)) {
      identity = a;
      branches = {b};
    } else if (graph.is_ancestor(b, a)) {
      identity = b;
      branches = {a};
    } else {
      branches = {a, b};
    }
    for (NodeId br : branches) {
      const NodeId src = trace_source(graph, br);
      if (graph.node(src).kind != LayerKind::conv)
        throw TopologyError("layer '" + n.name + "': residual branch from '" + graph.node(br).name +
                            "' does not start at a convolution");
      info.branch_convs.push_back(src);
    }
    if (info.branch_convs.size() == 2) {
      // The downsample conv reads the block input, which is upstream of the main branch conv.
      const NodeId c0 = info.branch_convs[0], c1 = info.branch_convs[1];
      const bool c0_is_shortcut = graph.is_ancestor(graph.node(c0).inputs.front(), c1);
      const bool c1_is_shortcut = graph.is_ancestor(graph.node(c1).inputs.front(), c0);
      if (c0_is_shortcut && !c1_is_shortcut) std::swap(info.branch_convs[0], info.branch_convs[1]);
    }
    if (identity != graph.size()) {
      const NodeId src = trace_source(graph, identity);
      if (graph.node(src).kind == LayerKind::add)
        uf.unite(src, n.id);
      else
        info.identity_from_outside = true;
    }
    adds.emplace(n.id, std::move(info));
  }

  std::map<std::size_t, PruneGroup> by_root;
  std::vector<bool> grouped(graph.size(), false);
  for (const auto& [add_id, info] : adds) {  // std::map iterates in topological order
    PruneGroup& grp = by_root[uf.find(add_id)];
    const std::size_t depth = grp.adds.size() + 1;
    grp.adds.push_back(add_id);
    for (NodeId c : info.branch_convs) {
      if (grouped[c])
        throw TopologyError("layer '" + graph.node(c).name + "' feeds more than one residual stage");
      grouped[c] = true;
      grp.members.push_back(c);
      grp.depths.push_back(depth);
    }
    grp.max_depth = depth;
    grp.needs_channel_select = grp.needs_channel_select || info.identity_from_outside;
  }

  PruneLayout layout;
  for (auto& [root, grp] : by_root) {
    grp.channels = graph.node(grp.members.front()).channels;
    for (NodeId m : grp.members)
      if (graph.node(m).channels != grp.channels)
        throw ChannelAlignmentError("group members '" + graph.node(grp.members.front()).name + "' and '" +
                                    graph.node(m).name + "' disagree on output channels");
    layout.groups.push_back(std::move(grp));
  }
  for (NodeId c : graph.conv_ids())
    if (!grouped[c]) layout.independent.push_back(c);
  return layout;
}

std::vector<PruneUnit> prune_units(const Graph& graph, const PruneLayout& layout) {
  std::vector<PruneUnit> units;
  for (NodeId c : layout.independent) units.push_back({{c}, graph.node(c).channels, nullptr});
  for (const auto& g : layout.groups) units.push_back({g.members, g.channels, &g});
  std::sort(units.begin(), units.end(), [](const PruneUnit& a, const PruneUnit& b) {
    return *std::min_element(a.layers.begin(), a.layers.end()) <
           *std::min_element(b.layers.begin(), b.layers.end());
  });
  return units;
}

}  // namespace chanprune
