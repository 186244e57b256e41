#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "chanprune/channel_flow.hpp"
#include "chanprune/dataset.hpp"
#include "chanprune/graph.hpp"
#include "chanprune/plan.hpp"

namespace chanprune {

/// Same structure as the source graph with pruned filters' weights, biases
/// and following BN scale/shift set to zero. `flow` must be passed to the
/// executor so channels cut by a channel select are silenced too.
struct MaskedGraph {
  Graph graph;
  ChannelFlow flow;
};

MaskedGraph apply_mask(const Graph& graph, const PrunePlan& plan);

struct SurgeryLogEntry {
  std::string layer;
  std::size_t before = 0;
  std::size_t after = 0;
};

struct SurgeryResult {
  Graph graph;
  std::vector<SurgeryLogEntry> log;  // one line per conv
  std::size_t channel_selects = 0;   // inserted nodes

  std::string log_text() const;
};

/// Builds a physically smaller graph: drops pruned filters and the matching
/// input slices of every consumer, trims BN parameters and running stats,
/// and inserts channel selects on identity shortcuts. The input is not modified.
SurgeryResult physical_prune(const Graph& graph, const PrunePlan& plan);

/// Max |logit difference| between the masked and the physically pruned graph
/// over the first `n_batches` batches (deterministic order).
double equivalence_check(const Graph& graph, const PrunePlan& plan, const Dataset& ds, std::size_t n_batches,
                         std::size_t batch_size = 32);

}  // namespace chanprune
