#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chanprune/dataset.hpp"
#include "chanprune/graph.hpp"
#include "chanprune/groups.hpp"

namespace chanprune {

/// First-order saliency of every filter of each conv in `convs` for one
/// batch: G_k = |sum over the filter's elements of dL/dw * w|, with the
/// gradient of the batch-mean loss and BN in eval mode. Clears and then
/// leaves parameter grads populated.
std::vector<std::vector<double>> filter_saliency(Graph& graph, const Batch& batch, std::span<const NodeId> convs);

/// 1-based ascending ranks; equal values are ranked by filter index.
std::vector<int> ascending_ranks(std::span<const double> values);

struct LayerScores {
  NodeId layer = 0;
  std::string name;
  std::size_t channels = 0;
  std::vector<std::vector<double>> saliency;  // [batch][filter]
  std::vector<std::vector<int>> ranks;        // [batch][filter], 1-based
  std::vector<long long> rank_sums;           // sum over batches of the rank
  std::vector<double> score;                  // rank_sums / channels
};

/// Fills ranks, rank_sums and score from `saliency`.
void aggregate_layer(LayerScores& layer);

struct ScoreTable {
  std::size_t batches = 0;
  std::vector<LayerScores> layers;  // topological conv order

  const LayerScores& at(NodeId layer) const;
  /// "layer,name,filter,score" rows.
  std::string to_csv() const;
  /// Restores scores only (saliencies and ranks are not stored).
  static ScoreTable parse_csv(const std::string& text);
};

/// One pass over `batches` in order (must not shuffle): per-batch saliency,
/// ranks, and aggregated scores for every conv in the graph.
ScoreTable aggregate_scores(Graph& graph, const Dataset& ds, std::size_t batch_size,
                            std::size_t max_batches = 0);

/// Depth-weighted group score: sum_i (d_i / s) * score of member i.
std::vector<double> group_scores(const ScoreTable& table, const PruneGroup& group);

/// Scores driving the search for one unit (a group or a single conv).
std::vector<double> unit_scores(const ScoreTable& table, const PruneUnit& unit);

void save_scores(const ScoreTable& table, const std::string& path);
ScoreTable load_scores(const std::string& path);

}  // namespace chanprune
