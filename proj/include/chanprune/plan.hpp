#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "chanprune/graph.hpp"

namespace chanprune {

/// Retained/pruned filters of one search unit (a conv or a whole group).
struct PlanEntry {
  std::vector<NodeId> layers;
  std::vector<std::string> names;
  std::size_t channels = 0;
  std::vector<std::size_t> retained;  // sorted
  std::vector<std::size_t> pruned;    // sorted
};

struct PrunePlan {
  std::string arch;
  std::vector<PlanEntry> entries;
  double theta = 0.0;          // loss-variation budget used
  double phi = 0.0;            // loss of the unpruned network
  double achieved_rate = 0.0;  // 1 - params(pruned) / params(original)

  std::size_t pruned_filters() const;
  bool empty() const { return pruned_filters() == 0; }
  /// conv id -> retained filters, only for convs that lose at least one filter.
  std::map<NodeId, std::vector<std::size_t>> retained_by_conv() const;
  /// Throws PlanError when the plan does not fit `graph`.
  void validate(const Graph& graph) const;

  std::string to_text() const;
  static PrunePlan parse(std::string_view text);
};

/// Builds an entry from the filters to drop; `layers` must share one channel count.
PlanEntry make_plan_entry(const Graph& graph, std::vector<NodeId> layers, std::vector<std::size_t> pruned);

PrunePlan load_plan(const std::string& path);
void save_plan(const PrunePlan& plan, const std::string& path);

}  // namespace chanprune
