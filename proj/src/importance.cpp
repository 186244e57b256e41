#include "chanprune/importance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "chanprune/errors.hpp"
#include "chanprune/executor.hpp"

namespace chanprune {

std::vector<std::vector<double>> filter_saliency(Graph& graph, const Batch& batch, std::span<const NodeId> convs) {
  zero_grads(graph);
  auto acts = forward(graph, batch.images, ops::Mode::eval);
  ops::softmax_cross_entropy(acts.logits(), batch.labels);
  ops::softmax_cross_entropy_backward(acts.logits(), batch.labels);
  backward(graph, acts);

  std::vector<std::vector<double>> out;
  out.reserve(convs.size());
  for (NodeId id : convs) {
    const auto& w = graph.node(id).weight().tensor;
    const std::size_t filters = w.dim(0), per = w.size() / filters;
    std::vector<double> g(filters, 0.0);
    for (std::size_t k = 0; k < filters; ++k) {
      double dot = 0.0;
      for (std::size_t i = k * per; i < (k + 1) * per; ++i) dot += w.grad[i] * w.values[i];
      g[k] = std::abs(dot);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<int> ascending_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<int> ranks(values.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = static_cast<int>(r + 1);
  return ranks;
}

void aggregate_layer(LayerScores& layer) {
  layer.ranks.clear();
  layer.rank_sums.assign(layer.channels, 0);
  for (const auto& g : layer.saliency) {
    if (g.size() != layer.channels) throw ConfigError("saliency row does not match channel count of '" + layer.name + "'");
    auto z = ascending_ranks(g);
    for (std::size_t k = 0; k < z.size(); ++k) layer.rank_sums[k] += z[k];
    layer.ranks.push_back(std::move(z));
  }
  layer.score.resize(layer.channels);
  for (std::size_t k = 0; k < layer.channels; ++k)
    layer.score[k] = static_cast<double>(layer.rank_sums[k]) / static_cast<double>(layer.channels);
}

const LayerScores& ScoreTable::at(NodeId layer) const {
  for (const auto& l : layers)
    if (l.layer == layer) return l;
  throw ConfigError("score table has no entry for layer " + std::to_string(layer));
}

std::string ScoreTable::to_csv() const {
  std::ostringstream out;
  out << "layer,name,filter,score\n";
  char buf[64];
  for (const auto& l : layers)
    for (std::size_t k = 0; k < l.channels; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", l.score[k]);
      out << l.layer << ',' << l.name << ',' << k << ',' << buf << '\n';
    }
  return out.str();
}

ScoreTable ScoreTable::parse_csv(const std::string& text) {
  ScoreTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "layer,name,filter,score") throw IngestionError("score file: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string layer, name, filter, score;
    if (!std::getline(row, layer, ',') || !std::getline(row, name, ',') || !std::getline(row, filter, ',') ||
        !std::getline(row, score))
      throw IngestionError("score file: malformed row '" + line + "'");
    const NodeId id = std::stoul(layer);
    if (t.layers.empty() || t.layers.back().layer != id) t.layers.push_back(LayerScores{id, name, 0, {}, {}, {}, {}});
    auto& l = t.layers.back();
    if (std::stoul(filter) != l.channels) throw IngestionError("score file: filters of '" + name + "' out of order");
    l.score.push_back(std::stod(score));
    ++l.channels;
  }
  return t;
}

ScoreTable aggregate_scores(Graph& graph, const Dataset& ds, std::size_t batch_size, std::size_t max_batches) {
  const auto convs = graph.conv_ids();
  Batches batches(ds, batch_size, false, 0);
  const std::size_t P = max_batches ? std::min(max_batches, batches.count()) : batches.count();
  ScoreTable table;
  table.batches = P;
  for (NodeId id : convs) table.layers.push_back(LayerScores{id, graph.node(id).name, graph.node(id).channels, {}, {}, {}, {}});
  for (std::size_t i = 0; i < P; ++i) {
    const auto g = filter_saliency(graph, batches.get(i), convs);
    for (std::size_t l = 0; l < convs.size(); ++l) table.layers[l].saliency.push_back(g[l]);
  }
  zero_grads(graph);
  for (auto& l : table.layers) aggregate_layer(l);
  return table;
}

std::vector<double> group_scores(const ScoreTable& table, const PruneGroup& group) {
  std::vector<double> out(group.channels, 0.0);
  for (std::size_t i = 0; i < group.members.size(); ++i) {
    const auto& s = table.at(group.members[i]).score;
    if (s.size() != group.channels) throw ChannelAlignmentError("group member '" + table.at(group.members[i]).name +
                                                                "' has a different channel count");
    const double w = static_cast<double>(group.depths[i]) / static_cast<double>(group.max_depth);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w * s[k];
  }
  return out;
}

std::vector<double> unit_scores(const ScoreTable& table, const PruneUnit& unit) {
  if (unit.group) return group_scores(table, *unit.group);
  return table.at(unit.layers.front()).score;
}

void save_scores(const ScoreTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path + "'");
  out << table.to_csv();
}

ScoreTable load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open score file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ScoreTable::parse_csv(ss.str());
}

}  // namespace chanprune
