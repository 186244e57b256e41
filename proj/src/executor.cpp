#include "chanprune/executor.hpp"

#include "chanprune/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace chanprune {
namespace {

// Runs every node; `stats_sink` receives BN running-stat updates in train
// mode. With `release`, tensors are dropped after their last consumer.
Activations run_forward(const Graph& graph, const Tensor& input, ops::Mode mode, const ChannelFlow* mask,
                        Graph* stats_sink, bool release) {
  if (input.rank() != 4 || input.dim(1) != graph.input_spec().channels)
    throw ConfigError("graph '" + graph.arch() + "': input batch " + shape_str(input.shape) +
                      " does not match input channels " + std::to_string(graph.input_spec().channels));
  if (mask && mask->alive.size() != graph.size())
    throw ConfigError("mask was traced on a different graph");
  const std::size_t count = graph.size();
  Activations acts;
  acts.mode = mode;
  acts.values.resize(count);
  if (!release) {
    acts.bn.resize(count);
    acts.argmax.resize(count);
  }
  std::vector<std::size_t> remaining_uses(count, 0);
  if (release)
    for (const auto& n : graph.nodes())
      for (NodeId p : n.inputs) ++remaining_uses[p];

  for (const auto& n : graph.nodes()) {
    auto in = [&](std::size_t slot = 0) -> const Tensor& { return acts.values[n.inputs.at(slot)]; };
    Tensor out;
    switch (n.kind) {
      case LayerKind::input:
        out = input;
        break;
      case LayerKind::conv: {
        const auto& a = n.conv();
        out = ops::conv2d(in(), n.weight().tensor, n.bias() ? &n.bias()->tensor : nullptr, a.stride, a.padding,
                          n.name);
        break;
      }
      case LayerKind::bn: {
        const auto& a = n.bn();
        ops::BatchNormCache* cache = release ? nullptr : &acts.bn[n.id];
        if (mode == ops::Mode::train) {
          auto& stats = stats_sink->node(n.id).bn().stats;
          out = ops::batchnorm2d(in(), n.params[0].tensor, n.params[1].tensor, stats, mode, a.momentum, a.eps,
                                 cache, n.name);
        } else {
          out = ops::batchnorm2d_eval(in(), n.params[0].tensor, n.params[1].tensor, a.stats, a.eps, cache, n.name);
        }
        break;
      }
      case LayerKind::relu:
        out = ops::relu(in());
        break;
      case LayerKind::pool: {
        const auto& a = n.pool();
        if (a.type == PoolType::max)
          out = ops::maxpool2d(in(), a.kernel, a.stride, a.padding, release ? nullptr : &acts.argmax[n.id]);
        else if (a.type == PoolType::avg)
          out = ops::avgpool2d(in(), a.kernel, a.stride);
        else
          out = ops::global_avgpool(in());
        break;
      }
      case LayerKind::linear:
        out = ops::linear(in(), n.weight().tensor, n.bias() ? &n.bias()->tensor : nullptr, n.name);
        break;
      case LayerKind::add:
        out = ops::residual_add(in(0), in(1), graph.node(n.inputs[0]).name, graph.node(n.inputs[1]).name);
        break;
      case LayerKind::concat: {
        std::vector<const Tensor*> parts;
        for (NodeId p : n.inputs) parts.push_back(&acts.values[p]);
        out = ops::channel_concat(parts);
        break;
      }
      case LayerKind::channel_select:
        out = ops::channel_select(in(), n.select().gather);
        break;
      case LayerKind::output:
        out = in();
        break;
    }
    if (mask) ops::zero_channels(out, mask->dead[n.id]);
    acts.values[n.id] = std::move(out);
    if (release)
      for (NodeId p : n.inputs)
        if (--remaining_uses[p] == 0) acts.values[p] = Tensor();
  }
  return acts;
}

}  // namespace

Activations forward(Graph& graph, const Tensor& input, ops::Mode mode, const ChannelFlow* mask) {
  if (mode == ops::Mode::train && !graph.trainable())
    throw ConfigError("graph '" + graph.arch() + "' is counting-only and cannot be trained");
  return run_forward(graph, input, mode, mask, &graph, false);
}

Tensor infer(const Graph& graph, const Tensor& input, const ChannelFlow* mask) {
  auto acts = run_forward(graph, input, ops::Mode::eval, mask, nullptr, true);
  return std::move(acts.values.back());
}

void backward(Graph& graph, Activations& acts) {
  for (NodeId id = graph.size(); id-- > 1;) {
    LayerNode& n = graph.node(id);
    Tensor& out = acts.values[id];
    if (!out.has_grad()) continue;
    auto in = [&](std::size_t slot = 0) -> Tensor& { return acts.values[n.inputs.at(slot)]; };
    const bool propagate = n.inputs.front() != 0;
    switch (n.kind) {
      case LayerKind::conv: {
        const auto& a = n.conv();
        ops::conv2d_backward(out, in(), n.weight().tensor, n.bias() ? &n.bias()->tensor : nullptr, a.stride,
                             a.padding, propagate);
        break;
      }
      case LayerKind::bn:
        ops::batchnorm2d_backward(out, in(), n.params[0].tensor, n.params[1].tensor, acts.bn[id]);
        break;
      case LayerKind::relu:
        ops::relu_backward(out, in());
        break;
      case LayerKind::pool: {
        const auto& a = n.pool();
        if (a.type == PoolType::max)
          ops::maxpool2d_backward(out, in(), acts.argmax[id]);
        else if (a.type == PoolType::avg)
          ops::avgpool2d_backward(out, in(), a.kernel, a.stride);
        else
          ops::global_avgpool_backward(out, in());
        break;
      }
      case LayerKind::linear:
        ops::linear_backward(out, in(), n.weight().tensor, n.bias() ? &n.bias()->tensor : nullptr, propagate);
        break;
      case LayerKind::add:
        ops::residual_add_backward(out, in(0), in(1));
        break;
      case LayerKind::channel_select:
        ops::channel_select_backward(out, in(), n.select().gather);
        break;
      case LayerKind::output: {
        auto g = in().ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
        break;
      }
      case LayerKind::concat:
        throw ConfigError("layer '" + n.name + "': concat has no backward (counting-only graphs)");
      case LayerKind::input:
        break;
    }
  }
}

void zero_grads(Graph& graph) {
  for (Parameter* p : graph.parameters()) p->tensor.zero_grad();
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

BatchStats train_step_gradients(Graph& graph, const Tensor& images, std::span<const int> labels, ops::Mode mode) {
  auto acts = forward(graph, images, mode);
  Tensor& logits = acts.logits();
  BatchStats s;
  s.loss = ops::softmax_cross_entropy(logits, labels);
  s.correct = ops::count_correct(logits, labels);
  s.count = labels.size();
  ops::softmax_cross_entropy_backward(logits, labels);
  backward(graph, acts);
  return s;
}

BatchStats evaluate_batch(const Graph& graph, const Tensor& images, std::span<const int> labels,
                          const ChannelFlow* mask) {
  const Tensor logits = infer(graph, images, mask);
  return {ops::softmax_cross_entropy(logits, labels), ops::count_correct(logits, labels), labels.size()};
}

}  // namespace chanprune
