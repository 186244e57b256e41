#include "chanprune/surgery.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "chanprune/errors.hpp"
#include "chanprune/executor.hpp"

namespace chanprune {
namespace {

std::vector<double> gather(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v.at(i));
  return out;
}

}  // namespace

MaskedGraph apply_mask(const Graph& graph, const PrunePlan& plan) {
  plan.validate(graph);
  MaskedGraph m{graph, trace_channel_flow(graph, plan.retained_by_conv())};
  for (const auto& e : plan.entries)
    for (NodeId id : e.layers) {
      LayerNode& conv = m.graph.node(id);
      const std::size_t per = conv.weight().tensor.size() / conv.channels;
      for (std::size_t k : e.pruned) {
        std::fill_n(conv.weight().tensor.values.begin() + static_cast<long>(k * per), per, 0.0);
        if (conv.bias()) conv.bias()->tensor.values[k] = 0.0;
      }
      if (auto bn = graph.batchnorm_after(id))
        for (std::size_t k : e.pruned)
          for (auto& p : m.graph.node(*bn).params) p.tensor.values[k] = 0.0;
    }
  return m;
}

std::string SurgeryResult::log_text() const {
  std::ostringstream out;
  out << "layer,before,after\n";
  for (const auto& e : log) out << e.layer << ',' << e.before << ',' << e.after << '\n';
  return out.str();
}

SurgeryResult physical_prune(const Graph& graph, const PrunePlan& plan) {
  plan.validate(graph);
  if (!graph.trainable()) throw TopologyError("graph '" + graph.arch() + "' has concat nodes; surgery is unsupported");
  const ChannelFlow flow = trace_channel_flow(graph, plan.retained_by_conv());
  const auto& alive = flow.alive;

  SurgeryResult result{Graph(graph.arch(), graph.input_spec(), graph.num_classes()), {}, 0};
  Graph& g = result.graph;
  g.metadata() = graph.metadata();
  g.node(0).name = graph.node(0).name;
  std::vector<NodeId> map(graph.size(), 0);

  for (const auto& n : graph.nodes()) {
    if (n.kind == LayerKind::input) continue;
    LayerNode out;
    out.name = n.name;
    out.kind = n.kind;
    for (NodeId p : n.inputs) out.inputs.push_back(map[p]);
    out.channels = alive[n.id].size();
    switch (n.kind) {
      case LayerKind::conv: {
        const auto& a = n.conv();
        const auto& rows = alive[n.id];
        const auto& cols = alive[n.inputs[0]];
        const std::size_t kk = a.kernel * a.kernel;
        Tensor w({rows.size(), cols.size(), a.kernel, a.kernel});
        for (std::size_t o = 0; o < rows.size(); ++o)
          for (std::size_t i = 0; i < cols.size(); ++i)
            std::copy_n(n.weight().tensor.values.begin() + static_cast<long>((rows[o] * a.in_channels + cols[i]) * kk),
                        kk, w.values.begin() + static_cast<long>((o * cols.size() + i) * kk));
        out.attrs = ConvAttrs{cols.size(), rows.size(), a.kernel, a.stride, a.padding, a.bias};
        out.params.emplace_back(std::move(w), n.weight().decay);
        if (n.bias()) out.params.emplace_back(Tensor({rows.size()}, gather(n.bias()->tensor.values, rows)), n.bias()->decay);
        result.log.push_back({n.name, n.channels, rows.size()});
        break;
      }
      case LayerKind::bn: {
        BatchNormAttrs a = n.bn();
        const auto& keep = alive[n.id];
        a.channels = keep.size();
        if (a.stats.initialized()) {
          a.stats.mean = gather(a.stats.mean, keep);
          a.stats.var = gather(a.stats.var, keep);
        }
        out.attrs = a;
        for (const auto& p : n.params) out.params.emplace_back(Tensor({keep.size()}, gather(p.tensor.values, keep)), p.decay);
        break;
      }
      case LayerKind::linear: {
        const auto& a = n.linear();
        const auto& cols = alive[n.inputs[0]];
        Tensor w({a.out_features, cols.size()});
        for (std::size_t o = 0; o < a.out_features; ++o)
          for (std::size_t i = 0; i < cols.size(); ++i)
            w.values[o * cols.size() + i] = n.weight().tensor.values[o * a.in_features + cols[i]];
        out.attrs = LinearAttrs{cols.size(), a.out_features, a.bias};
        out.params.emplace_back(std::move(w), n.weight().decay);
        if (n.bias()) out.params.push_back(*n.bias());
        break;
      }
      case LayerKind::channel_select: {
        // Re-point existing gathers at the producer's surviving channels.
        ChannelSelectAttrs a = n.select();
        const auto& src = alive[n.inputs[0]];
        for (auto& gi : a.gather) {
          if (gi < 0) continue;
          auto it = std::lower_bound(src.begin(), src.end(), static_cast<std::size_t>(gi));
          gi = it != src.end() && *it == static_cast<std::size_t>(gi) ? static_cast<long>(it - src.begin()) : -1;
        }
        a.in_channels = src.size();
        out.attrs = a;
        break;
      }
      case LayerKind::add: {
        for (const auto& sel : flow.selections) {
          if (sel.add != n.id) continue;
          const NodeId from = out.inputs[sel.slot];
          out.inputs[sel.slot] = g.channel_select(n.name + ".select", from, sel.retained, sel.gather);
          ++result.channel_selects;
        }
        break;
      }
      case LayerKind::concat:
        throw TopologyError("layer '" + n.name + "': concat surgery is unsupported");
      default:
        out.attrs = n.attrs;
        break;
    }
    map[n.id] = g.append(std::move(out));
  }
  g.validate();
  return result;
}

double equivalence_check(const Graph& graph, const PrunePlan& plan, const Dataset& ds, std::size_t n_batches,
                         std::size_t batch_size) {
  const MaskedGraph masked = apply_mask(graph, plan);
  const Graph pruned = physical_prune(graph, plan).graph;
  Batches batches(ds, std::min(batch_size, ds.size()), false, 0, false, false);
  double worst = 0.0;
  for (std::size_t i = 0; i < std::min(n_batches, batches.count()); ++i) {
    const Batch b = batches.get(i);
    const Tensor a = infer(masked.graph, b.images, &masked.flow);
    const Tensor p = infer(pruned, b.images);
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a.values[k] - p.values[k]));
  }
  return worst;
}

}  // namespace chanprune
