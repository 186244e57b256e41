#include "chanprune/search.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>

#include "chanprune/counting.hpp"
#include "chanprune/errors.hpp"
#include "chanprune/surgery.hpp"

namespace chanprune {

void SearchConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  if (!(epsilon > 0.0 && epsilon < gamma)) throw ConfigError("epsilon must lie in (0, gamma)");
  if (!(theta_init > 0.0) || !std::isfinite(theta_init)) throw ConfigError("theta_init must be positive and finite");
  if (max_outer_iters < 1) throw ConfigError("max_outer_iters must be at least 1");
}

LossEvaluator::LossEvaluator(const Dataset& ds, std::size_t batch_size, std::size_t max_batches) {
  Batches b(ds, batch_size, false, 0);
  const std::size_t n = max_batches ? std::min(max_batches, b.count()) : b.count();
  batches_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) batches_.push_back(b.get(i));
}

BatchStats LossEvaluator::stats(const Graph& graph, const ChannelFlow* mask) const {
  ++calls_;
  const long n = static_cast<long>(batches_.size());
  std::vector<BatchStats> per(batches_.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    try {
      per[i] = evaluate_batch(graph, batches_[i].images, batches_[i].labels, mask);
    } catch (...) {
#pragma omp critical
      failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  BatchStats total;
  for (const auto& s : per) {
    total.loss += s.loss * static_cast<double>(s.count);
    total.correct += s.correct;
    total.count += s.count;
  }
  total.loss /= static_cast<double>(total.count);
  return total;
}

double LossEvaluator::loss(const Graph& graph, const ChannelFlow* mask) const { return stats(graph, mask).loss; }

namespace {

std::map<NodeId, std::vector<std::size_t>> retained_from_pruned(const Graph& graph,
                                                                const std::map<NodeId, std::vector<std::size_t>>& pruned) {
  std::map<NodeId, std::vector<std::size_t>> retained;
  for (const auto& [id, drop] : pruned) {
    if (drop.empty()) continue;
    const std::size_t c = graph.node(id).channels;
    std::vector<bool> gone(c, false);
    for (std::size_t k : drop) {
      if (k >= c) throw PlanError("filter " + std::to_string(k) + " out of range for '" + graph.node(id).name + "'");
      gone[k] = true;
    }
    auto& keep = retained[id];
    for (std::size_t k = 0; k < c; ++k)
      if (!gone[k]) keep.push_back(k);
  }
  return retained;
}

}  // namespace

double masked_loss(const Graph& graph, const std::map<NodeId, std::vector<std::size_t>>& pruned,
                   const LossEvaluator& eval) {
  const ChannelFlow flow = trace_channel_flow(graph, retained_from_pruned(graph, pruned));
  return eval.loss(graph, &flow);
}

RankSearchResult binary_rank_search(std::size_t channels, double theta, const RankProbe& probe) {
  RankSearchResult r;
  if (channels < 2) return r;
  std::size_t rank = channels / 2;
  std::size_t step = rank;
  while (step >= 1) {
    const double variation = probe(rank);
    ++r.evaluations;
    r.probed.push_back(rank);
    step /= 2;
    if (variation > theta) {
      rank -= step;
    } else {
      r.rank = rank;
      rank += step;
    }
  }
  return r;
}

std::vector<std::size_t> ascending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

namespace {

std::vector<std::size_t> prefix(const std::vector<std::size_t>& order, std::size_t rank) {
  std::vector<std::size_t> out(order.begin(), order.begin() + static_cast<long>(rank));
  std::sort(out.begin(), out.end());
  return out;
}

RankProbe unit_probe(const Graph& graph, const PruneUnit& unit, const std::vector<std::size_t>& order, double phi,
                     const LossEvaluator& eval, const std::map<NodeId, std::vector<std::size_t>>& base) {
  return [&graph, &unit, &order, phi, &eval, &base](std::size_t rank) {
    auto pruned = base;
    const auto drop = prefix(order, rank);
    for (NodeId id : unit.layers) pruned[id] = drop;
    return std::abs(masked_loss(graph, pruned, eval) - phi);
  };
}

}  // namespace

UnitSearchResult layer_prune_search(const Graph& graph, const PruneUnit& unit, const std::vector<double>& scores,
                                    double theta, double phi, const LossEvaluator& eval,
                                    const std::map<NodeId, std::vector<std::size_t>>& base) {
  if (scores.size() != unit.channels) throw ConfigError("score vector does not cover every filter of the unit");
  const auto order = ascending_order(scores);
  const auto r = binary_rank_search(unit.channels, theta, unit_probe(graph, unit, order, phi, eval, base));
  return {prefix(order, r.rank), r.evaluations};
}

namespace {

struct UnitContext {
  PruneUnit unit;
  std::vector<std::size_t> order;
  std::map<std::size_t, double> cache;  // rank -> variation, against the original weights
};

PrunePlan make_plan(const Graph& graph, const std::vector<UnitContext>& units,
                    const std::vector<std::size_t>& ranks, double theta, double phi) {
  PrunePlan plan;
  plan.arch = graph.arch();
  plan.theta = theta;
  plan.phi = phi;
  for (std::size_t u = 0; u < units.size(); ++u)
    plan.entries.push_back(make_plan_entry(graph, units[u].unit.layers, prefix(units[u].order, ranks[u])));
  return plan;
}

std::vector<UnitContext> build_units(const Graph& graph, const PruneLayout& layout, const ScoreTable& scores) {
  std::vector<UnitContext> units;
  for (auto& u : prune_units(graph, layout)) {
    const auto s = unit_scores(scores, u);
    if (s.size() != u.channels) throw ConfigError("score table does not match the graph");
    units.push_back({u, ascending_order(s), {}});
  }
  return units;
}

// Per-unit search at one theta. Independent mode probes each unit against W
// and memoises variations; sequential mode keeps earlier units masked.
PrunePlan search_units(const Graph& graph, std::vector<UnitContext>& units, double theta, double phi,
                       const LossEvaluator& eval, bool sequential, std::size_t& evaluations) {
  std::vector<std::size_t> ranks(units.size(), 0);
  std::map<NodeId, std::vector<std::size_t>> base;
  for (std::size_t u = 0; u < units.size(); ++u) {
    auto& ctx = units[u];
    const auto fresh = unit_probe(graph, ctx.unit, ctx.order, phi, eval, base);
    RankProbe probe = fresh;
    if (!sequential)
      probe = [&ctx, &fresh, &evaluations](std::size_t rank) {
        auto it = ctx.cache.find(rank);
        if (it != ctx.cache.end()) return it->second;
        ++evaluations;
        return ctx.cache[rank] = fresh(rank);
      };
    const auto r = binary_rank_search(ctx.unit.channels, theta, probe);
    if (sequential) evaluations += r.evaluations;
    ranks[u] = r.rank;
    if (sequential && r.rank > 0)
      for (NodeId id : ctx.unit.layers) base[id] = prefix(ctx.order, r.rank);
  }
  return make_plan(graph, units, ranks, theta, phi);
}

}  // namespace

PrunePlan plan_for_theta(const Graph& graph, const ScoreTable& scores, double theta, double phi,
                         const LossEvaluator& eval, bool sequential) {
  const PruneLayout layout = identify_prune_groups(graph);
  auto units = build_units(graph, layout, scores);
  std::size_t evaluations = 0;
  PrunePlan plan = search_units(graph, units, theta, phi, eval, sequential, evaluations);
  plan.achieved_rate = pruning_rate(graph, plan);
  return plan;
}

double pruning_rate(const Graph& graph, const PrunePlan& plan) {
  const double before = static_cast<double>(count_params(graph));
  if (plan.empty()) return 0.0;
  const double after = static_cast<double>(count_params(physical_prune(graph, plan).graph));
  return 1.0 - after / before;
}

ThresholdSearchResult threshold_search(const SearchConfig& config, const std::function<double(double)>& rate_of) {
  config.validate();
  ThresholdSearchResult r;
  double upper = config.theta_init, lower = 0.0;
  ThresholdTrial best{0.0, 0.0};
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < config.max_outer_iters; ++it) {
    const double rate = rate_of(upper);
    r.trials.push_back({upper, rate});
    const double gap = std::abs(rate - config.gamma);
    if (gap < best_gap) {
      best_gap = gap;
      best = {upper, rate};
    }
    const double tried = upper;
    const double step = upper - lower;
    if (rate > config.gamma) {
      upper = (upper + lower) / 2.0;
    } else {
      lower = upper;
      upper = upper + 2.0 * step;
    }
    if (gap <= config.epsilon) {
      r.theta = tried;
      r.theta_upper = upper;
      r.rate = rate;
      return r;
    }
  }
  throw SearchError("threshold search did not reach the target rate within " + std::to_string(config.max_outer_iters) +
                        " iterations (closest: theta=" + std::to_string(best.theta) +
                        ", rate=" + std::to_string(best.rate) + ")",
                    best.theta, best.rate);
}

GlobalSearchResult global_threshold_search(const Graph& graph, const ScoreTable& scores, const SearchConfig& config,
                                           const LossEvaluator& eval) {
  config.validate();
  const PruneLayout layout = identify_prune_groups(graph);
  auto units = build_units(graph, layout, scores);
  const double phi = eval.loss(graph);
  GlobalSearchResult out;
  std::map<double, PrunePlan> plans;
  out.search = threshold_search(config, [&](double theta) {
    PrunePlan plan = search_units(graph, units, theta, phi, eval, config.sequential, out.loss_evaluations);
    plan.achieved_rate = pruning_rate(graph, plan);
    const double rate = plan.achieved_rate;
    plans[theta] = std::move(plan);
    return rate;
  });
  out.plan = std::move(plans.at(out.search.theta));
  return out;
}

EvaluationAudit evaluation_count_audit(std::size_t channels) {
  const auto r = binary_rank_search(channels, 0.0, [](std::size_t) { return 0.0; });
  return {r.evaluations, channels > 0 ? channels - 1 : 0};
}

}  // namespace chanprune
