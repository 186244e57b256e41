#include "chanprune/channel_flow.hpp"

#include <algorithm>
#include <numeric>

#include "chanprune/errors.hpp"

namespace chanprune {
namespace {

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

bool ChannelFlow::trivial() const {
  return selections.empty() &&
         std::all_of(dead.begin(), dead.end(), [](const auto& d) { return d.empty(); });
}

ChannelFlow trace_channel_flow(const Graph& graph, const std::map<NodeId, std::vector<std::size_t>>& retained) {
  ChannelFlow flow;
  flow.alive.resize(graph.size());
  flow.dead.resize(graph.size());
  for (const auto& n : graph.nodes()) {
    auto& alive = flow.alive[n.id];
    switch (n.kind) {
      case LayerKind::conv: {
        auto it = retained.find(n.id);
        alive = it == retained.end() ? iota_n(n.channels) : it->second;
        break;
      }
      case LayerKind::input:
      case LayerKind::linear:
      case LayerKind::channel_select:
        alive = iota_n(n.channels);
        break;
      case LayerKind::concat: {
        std::size_t offset = 0;
        for (NodeId p : n.inputs) {
          for (std::size_t c : flow.alive[p]) alive.push_back(offset + c);
          offset += graph.node(p).channels;
        }
        break;
      }
      case LayerKind::add: {
        const NodeId a = n.inputs[0], b = n.inputs[1];
        if (flow.alive[a] == flow.alive[b]) {
          alive = flow.alive[a];
          break;
        }
        std::size_t slot;
        if (graph.is_ancestor(a, b))
          slot = 0;
        else if (graph.is_ancestor(b, a))
          slot = 1;
        else
          throw ChannelAlignmentError("layer '" + n.name + "': pruned branches '" + graph.node(a).name + "' and '" +
                                      graph.node(b).name + "' keep different channels");
        const auto& identity = flow.alive[n.inputs[slot]];
        alive = flow.alive[n.inputs[1 - slot]];
        ChannelFlow::Selection sel{n.id, slot, alive, {}};
        for (std::size_t c : alive) {
          auto it = std::lower_bound(identity.begin(), identity.end(), c);
          sel.gather.push_back(it != identity.end() && *it == c ? static_cast<long>(it - identity.begin()) : -1);
        }
        flow.selections.push_back(std::move(sel));
        break;
      }
      default:  // bn, relu, pool, output keep the producer's channels
        alive = flow.alive[n.inputs.front()];
        break;
    }
    std::vector<bool> keep(n.channels, false);
    for (std::size_t c : alive) keep[c] = true;
    for (std::size_t c = 0; c < n.channels; ++c)
      if (!keep[c]) flow.dead[n.id].push_back(c);
  }
  return flow;
}

}  // namespace chanprune
