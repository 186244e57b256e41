#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "chanprune/channel_flow.hpp"
#include "chanprune/dataset.hpp"
#include "chanprune/executor.hpp"
#include "chanprune/graph.hpp"
#include "chanprune/groups.hpp"
#include "chanprune/importance.hpp"
#include "chanprune/plan.hpp"

namespace chanprune {

struct SearchConfig {
  double theta_init = 0.05;
  double gamma = 0.5;
  double epsilon = 0.01;
  std::size_t max_outer_iters = 30;
  std::size_t eval_subset = 0;  // 0 = every scoring batch
  bool sequential = false;      // accumulate W' unit by unit instead of probing against W

  /// Throws ConfigError unless 0 < epsilon < gamma < 1, theta_init > 0 and max_outer_iters >= 1.
  void validate() const;
};

/// Mean loss over a fixed, pre-materialised list of batches. Batches are
/// evaluated independently and reduced in index order.
class LossEvaluator {
 public:
  LossEvaluator(const Dataset& ds, std::size_t batch_size, std::size_t max_batches = 0);

  double loss(const Graph& graph, const ChannelFlow* mask = nullptr) const;
  BatchStats stats(const Graph& graph, const ChannelFlow* mask = nullptr) const;
  std::size_t batches() const { return batches_.size(); }
  std::size_t calls() const { return calls_; }

 private:
  std::vector<Batch> batches_;
  mutable std::size_t calls_ = 0;
};

/// Loss with the given filters (conv id -> pruned filter indices) masked.
double masked_loss(const Graph& graph, const std::map<NodeId, std::vector<std::size_t>>& pruned,
                   const LossEvaluator& eval);

/// Loss variation |phi' - phi| of pruning the `rank` lowest-scored filters.
using RankProbe = std::function<double(std::size_t rank)>;

struct RankSearchResult {
  std::size_t rank = 0;  // filters pruned in the last successful probe (0 = none)
  std::size_t evaluations = 0;
  std::vector<std::size_t> probed;  // ranks in probe order
};

/// Halving search over prefixes of the score order: rank = floor(C/2),
/// step = rank; each probe halves step first and then moves rank down on
/// failure (variation > theta) or records and moves up on success.
RankSearchResult binary_rank_search(std::size_t channels, double theta, const RankProbe& probe);

/// Filter indices sorted by ascending score, ties by index.
std::vector<std::size_t> ascending_order(const std::vector<double>& scores);

struct UnitSearchResult {
  std::vector<std::size_t> pruned;  // sorted filter indices
  std::size_t evaluations = 0;
};

/// Layer (or group) search against the unmodified graph; `base` holds filters
/// already pruned elsewhere that stay masked while probing (sequential mode).
UnitSearchResult layer_prune_search(const Graph& graph, const PruneUnit& unit, const std::vector<double>& scores,
                                    double theta, double phi, const LossEvaluator& eval,
                                    const std::map<NodeId, std::vector<std::size_t>>& base = {});

/// Runs the layer search over every unit at a fixed theta.
PrunePlan plan_for_theta(const Graph& graph, const ScoreTable& scores, double theta, double phi,
                         const LossEvaluator& eval, bool sequential = false);

/// 1 - params(pruned) / params(original), counted on the surgically pruned graph.
double pruning_rate(const Graph& graph, const PrunePlan& plan);

struct ThresholdTrial {
  double theta = 0.0;
  double rate = 0.0;
};

struct ThresholdSearchResult {
  double theta = 0.0;        // threshold that produced the accepted plan
  double theta_upper = 0.0;  // upper bound after the final update
  double rate = 0.0;
  std::vector<ThresholdTrial> trials;
};

/// Outer search on theta against any rate function: start at theta_init with
/// lower bound 0; if the rate overshoots gamma, halve toward the lower bound,
/// otherwise raise the lower bound and grow the upper by twice the interval.
/// Throws SearchError with the closest trial after max_outer_iters.
ThresholdSearchResult threshold_search(const SearchConfig& config, const std::function<double(double)>& rate_of);

struct GlobalSearchResult {
  PrunePlan plan;
  ThresholdSearchResult search;
  std::size_t loss_evaluations = 0;
};

/// Full global search on a graph. Per-unit probe losses do not depend on
/// theta (units are evaluated against the original weights), so they are
/// memoised across outer iterations.
GlobalSearchResult global_threshold_search(const Graph& graph, const ScoreTable& scores, const SearchConfig& config,
                                           const LossEvaluator& eval);

struct EvaluationAudit {
  std::size_t binary_evals = 0;
  std::size_t linear_evals = 0;
};

/// Probe counts of the halving search versus a one-by-one scan (C - 1).
EvaluationAudit evaluation_count_audit(std::size_t channels);

}  // namespace chanprune
