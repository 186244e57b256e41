#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "chanprune/graph.hpp"

namespace chanprune {

/// Which output channels of every node survive once some conv filters are
/// removed. Indices are in each node's own (unpruned) channel space. Both
/// the masked forward (zero the dead channels) and physical surgery (drop
/// them) are driven by this one analysis.
struct ChannelFlow {
  struct Selection {
    NodeId add = 0;
    std::size_t slot = 0;                // identity input of the add
    std::vector<std::size_t> retained;   // channels the add keeps
    std::vector<long> gather;            // position in the identity input's alive list, or -1
  };

  std::vector<std::vector<std::size_t>> alive;
  std::vector<std::vector<std::size_t>> dead;
  std::vector<Selection> selections;

  bool trivial() const;
};

/// `retained` maps conv id -> kept filters; convs not listed keep everything.
/// Adds whose two inputs disagree get a Selection on their identity input;
/// two pruned branches that disagree raise ChannelAlignmentError.
ChannelFlow trace_channel_flow(const Graph& graph, const std::map<NodeId, std::vector<std::size_t>>& retained);

}  // namespace chanprune
