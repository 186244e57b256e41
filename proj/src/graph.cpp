#include "chanprune/graph.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include "chanprune/errors.hpp"

namespace chanprune {
namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 10> kKindNames{{
    {LayerKind::input, "input"},
    {LayerKind::conv, "conv"},
    {LayerKind::bn, "bn"},
    {LayerKind::relu, "relu"},
    {LayerKind::pool, "pool"},
    {LayerKind::linear, "linear"},
    {LayerKind::add, "add"},
    {LayerKind::concat, "concat"},
    {LayerKind::channel_select, "channel_select"},
    {LayerKind::output, "output"},
}};

std::string quote(const LayerNode& n) { return "'" + n.name + "'"; }

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(PoolType type) {
  switch (type) {
    case PoolType::max: return "max";
    case PoolType::avg: return "avg";
    case PoolType::global_avg: return "global_avg";
  }
  return "?";
}

PoolType pool_type_from_string(std::string_view name) {
  if (name == "max") return PoolType::max;
  if (name == "avg") return PoolType::avg;
  if (name == "global_avg") return PoolType::global_avg;
  throw ConfigError("unknown pool type '" + std::string(name) + "'");
}

Graph::Graph(std::string arch, InputSpec input, std::size_t num_classes)
    : arch_(std::move(arch)), input_(input), num_classes_(num_classes) {
  LayerNode in;
  in.name = "input";
  in.kind = LayerKind::input;
  in.channels = input.channels;
  push(std::move(in));
}

NodeId Graph::push(LayerNode node) {
  node.id = nodes_.size();
  for (NodeId p : node.inputs)
    if (p >= node.id)
      throw ConfigError("layer " + quote(node) + ": producer id " + std::to_string(p) + " is not earlier");
  nodes_.push_back(std::move(node));
  return nodes_.back().id;
}

NodeId Graph::append(LayerNode node) { return push(std::move(node)); }

NodeId Graph::conv(const std::string& name, NodeId from, std::size_t out_channels, std::size_t kernel,
                   std::size_t stride, std::size_t padding, bool bias) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::conv;
  n.inputs = {from};
  n.channels = out_channels;
  ConvAttrs a{node(from).channels, out_channels, kernel, stride, padding, bias};
  n.params.emplace_back(Tensor({out_channels, a.in_channels, kernel, kernel}));
  if (bias) n.params.emplace_back(Tensor({out_channels}));
  n.attrs = a;
  return push(std::move(n));
}

NodeId Graph::batchnorm(const std::string& name, NodeId from) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::bn;
  n.inputs = {from};
  n.channels = node(from).channels;
  BatchNormAttrs a;
  a.channels = n.channels;
  a.stats.mean.assign(n.channels, 0.0);
  a.stats.var.assign(n.channels, 1.0);
  n.params.emplace_back(Tensor({n.channels}, 1.0), false);
  n.params.emplace_back(Tensor({n.channels}, 0.0), false);
  n.attrs = std::move(a);
  return push(std::move(n));
}

NodeId Graph::relu(const std::string& name, NodeId from) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::relu;
  n.inputs = {from};
  n.channels = node(from).channels;
  return push(std::move(n));
}

NodeId Graph::maxpool(const std::string& name, NodeId from, std::size_t kernel, std::size_t stride,
                      std::size_t padding) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::pool;
  n.inputs = {from};
  n.channels = node(from).channels;
  n.attrs = PoolAttrs{PoolType::max, kernel, stride, padding};
  return push(std::move(n));
}

NodeId Graph::avgpool(const std::string& name, NodeId from, std::size_t kernel, std::size_t stride) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::pool;
  n.inputs = {from};
  n.channels = node(from).channels;
  n.attrs = PoolAttrs{PoolType::avg, kernel, stride, 0};
  return push(std::move(n));
}

NodeId Graph::global_avgpool(const std::string& name, NodeId from) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::pool;
  n.inputs = {from};
  n.channels = node(from).channels;
  n.attrs = PoolAttrs{PoolType::global_avg, 0, 0, 0};
  return push(std::move(n));
}

NodeId Graph::linear(const std::string& name, NodeId from, std::size_t out_features, bool bias) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::linear;
  n.inputs = {from};
  n.channels = out_features;
  LinearAttrs a{node(from).channels, out_features, bias};
  n.params.emplace_back(Tensor({out_features, a.in_features}));
  if (bias) n.params.emplace_back(Tensor({out_features}));
  n.attrs = a;
  return push(std::move(n));
}

NodeId Graph::add(const std::string& name, NodeId a, NodeId b) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::add;
  if (node(a).channels != node(b).channels)
    throw ChannelAlignmentError("add '" + name + "': '" + node(a).name + "' has " + std::to_string(node(a).channels) +
                                " channels, '" + node(b).name + "' has " + std::to_string(node(b).channels));
  n.inputs = {a, b};
  n.channels = node(a).channels;
  return push(std::move(n));
}

NodeId Graph::concat(const std::string& name, std::vector<NodeId> from) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::concat;
  n.channels = 0;
  for (NodeId p : from) n.channels += node(p).channels;
  n.inputs = std::move(from);
  return push(std::move(n));
}

NodeId Graph::channel_select(const std::string& name, NodeId from, std::vector<std::size_t> retained,
                             std::vector<long> gather) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::channel_select;
  n.inputs = {from};
  n.channels = retained.size();
  n.attrs = ChannelSelectAttrs{node(from).channels, std::move(retained), std::move(gather)};
  return push(std::move(n));
}

NodeId Graph::output(NodeId from) {
  LayerNode n;
  n.name = "output";
  n.kind = LayerKind::output;
  n.inputs = {from};
  n.channels = node(from).channels;
  return push(std::move(n));
}

NodeId Graph::output_id() const {
  if (nodes_.empty() || nodes_.back().kind != LayerKind::output)
    throw ConfigError("graph '" + arch_ + "' has no output node");
  return nodes_.back().id;
}

NodeId Graph::find(std::string_view name) const {
  for (const auto& n : nodes_)
    if (n.name == name) return n.id;
  throw ConfigError("no layer named '" + std::string(name) + "'");
}

std::vector<std::vector<NodeId>> Graph::consumers() const {
  std::vector<std::vector<NodeId>> out(nodes_.size());
  for (const auto& n : nodes_)
    for (NodeId p : n.inputs) out[p].push_back(n.id);
  return out;
}

std::vector<NodeId> Graph::conv_ids() const {
  std::vector<NodeId> ids;
  for (const auto& n : nodes_)
    if (n.kind == LayerKind::conv) ids.push_back(n.id);
  return ids;
}

std::optional<NodeId> Graph::batchnorm_after(NodeId conv) const {
  std::optional<NodeId> found;
  std::size_t uses = 0;
  for (const auto& n : nodes_)
    for (NodeId p : n.inputs)
      if (p == conv) {
        ++uses;
        if (n.kind == LayerKind::bn) found = n.id;
      }
  if (uses != 1) return std::nullopt;
  return found;
}

bool Graph::is_ancestor(NodeId ancestor, NodeId node_id) const {
  if (ancestor >= node_id) return false;
  std::vector<bool> seen(node_id + 1, false);
  std::vector<NodeId> stack{node_id};
  while (!stack.empty()) {
    const NodeId cur = stack.back();
    stack.pop_back();
    for (NodeId p : nodes_[cur].inputs) {
      if (p == ancestor) return true;
      if (p > ancestor && !seen[p]) {
        seen[p] = true;
        stack.push_back(p);
      }
    }
  }
  return false;
}

std::vector<Parameter*> Graph::parameters() {
  std::vector<Parameter*> out;
  for (auto& n : nodes_)
    for (auto& p : n.params) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> Graph::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& n : nodes_)
    for (const auto& p : n.params) out.push_back(&p);
  return out;
}

bool Graph::trainable() const {
  return std::none_of(nodes_.begin(), nodes_.end(),
                      [](const LayerNode& n) { return n.kind == LayerKind::concat; });
}

std::vector<NodeShape> Graph::infer_shapes(const InputSpec& input) const {
  std::vector<NodeShape> shapes(nodes_.size());
  for (const auto& n : nodes_) {
    NodeShape s;
    const NodeShape* in = n.inputs.empty() ? nullptr : &shapes[n.inputs.front()];
    switch (n.kind) {
      case LayerKind::input:
        s = {input.channels, input.height, input.width, true};
        break;
      case LayerKind::conv: {
        const auto& a = n.conv();
        if (!in->spatial) throw ConfigError("layer " + quote(n) + ": conv needs a spatial input");
        if (in->height + 2 * a.padding < a.kernel || in->width + 2 * a.padding < a.kernel)
          throw ConfigError("layer " + quote(n) + ": kernel larger than padded input");
        s = {a.out_channels, (in->height + 2 * a.padding - a.kernel) / a.stride + 1,
             (in->width + 2 * a.padding - a.kernel) / a.stride + 1, true};
        break;
      }
      case LayerKind::pool: {
        const auto& a = n.pool();
        if (a.type == PoolType::global_avg) {
          s = {in->channels, 1, 1, false};
        } else {
          if (in->height + 2 * a.padding < a.kernel || in->width + 2 * a.padding < a.kernel)
            throw ConfigError("layer " + quote(n) + ": pool window larger than input");
          s = {in->channels, (in->height + 2 * a.padding - a.kernel) / a.stride + 1,
               (in->width + 2 * a.padding - a.kernel) / a.stride + 1, true};
        }
        break;
      }
      case LayerKind::linear:
        s = {n.linear().out_features, 1, 1, false};
        break;
      case LayerKind::concat: {
        s = *in;
        s.channels = 0;
        for (NodeId p : n.inputs) {
          if (shapes[p].height != in->height || shapes[p].width != in->width)
            throw ConfigError("layer " + quote(n) + ": concat inputs differ spatially");
          s.channels += shapes[p].channels;
        }
        break;
      }
      case LayerKind::channel_select:
        s = *in;
        s.channels = n.select().retained.size();
        break;
      case LayerKind::add: {
        const auto& b = shapes[n.inputs.at(1)];
        if (b.channels != in->channels || b.height != in->height || b.width != in->width)
          throw ChannelAlignmentError("layer " + quote(n) + ": add of '" + nodes_[n.inputs[0]].name + "' (" +
                                      std::to_string(in->channels) + " ch) and '" +
                                      nodes_[n.inputs[1]].name + "' (" + std::to_string(b.channels) +
                                      " ch) is misaligned");
        s = *in;
        break;
      }
      default:
        s = *in;
        break;
    }
    shapes[n.id] = s;
  }
  return shapes;
}

void Graph::validate() const {
  if (nodes_.empty() || nodes_.front().kind != LayerKind::input)
    throw ConfigError("graph '" + arch_ + "': node 0 must be the input");
  for (const auto& n : nodes_) {
    if (n.id != static_cast<NodeId>(&n - nodes_.data()))
      throw ConfigError("layer " + quote(n) + ": id does not match position");
    for (NodeId p : n.inputs)
      if (p >= n.id) throw ConfigError("layer " + quote(n) + ": graph is not topologically ordered");
    if (n.kind == LayerKind::input) {
      if (n.id != 0 || !n.inputs.empty()) throw ConfigError("layer " + quote(n) + ": stray input node");
      continue;
    }
    if (n.inputs.empty()) throw ConfigError("layer " + quote(n) + ": no producer");
    const auto& src = nodes_[n.inputs.front()];
    switch (n.kind) {
      case LayerKind::conv: {
        const auto& a = n.conv();
        if (n.inputs.size() != 1 || a.in_channels != src.channels)
          throw ConfigError("layer " + quote(n) + ": Cin " + std::to_string(a.in_channels) +
                            " does not match producer '" + src.name + "' with " +
                            std::to_string(src.channels) + " channels");
        if (a.out_channels != n.channels || a.stride < 1 || a.kernel < 1)
          throw ConfigError("layer " + quote(n) + ": inconsistent conv attributes");
        if (n.params.size() != (a.bias ? 2u : 1u) ||
            n.params[0].tensor.shape != Shape{a.out_channels, a.in_channels, a.kernel, a.kernel} ||
            (a.bias && n.params[1].tensor.shape != Shape{a.out_channels}))
          throw ConfigError("layer " + quote(n) + ": conv parameter shapes disagree with attributes");
        break;
      }
      case LayerKind::linear: {
        const auto& a = n.linear();
        if (a.in_features != src.channels)
          throw ConfigError("layer " + quote(n) + ": in_features " + std::to_string(a.in_features) +
                            " does not match producer '" + src.name + "'");
        if (n.params.size() != (a.bias ? 2u : 1u) ||
            n.params[0].tensor.shape != Shape{a.out_features, a.in_features})
          throw ConfigError("layer " + quote(n) + ": linear parameter shapes disagree with attributes");
        break;
      }
      case LayerKind::bn: {
        const auto& a = n.bn();
        if (a.channels != src.channels || n.channels != src.channels || n.params.size() != 2 ||
            n.params[0].tensor.size() != a.channels || n.params[1].tensor.size() != a.channels)
          throw ConfigError("layer " + quote(n) + ": batch-norm width does not match producer");
        break;
      }
      case LayerKind::add:
        if (n.inputs.size() != 2)
          throw ConfigError("layer " + quote(n) + ": add needs exactly two producers");
        if (nodes_[n.inputs[0]].channels != nodes_[n.inputs[1]].channels)
          throw ChannelAlignmentError("layer " + quote(n) + ": producers '" + nodes_[n.inputs[0]].name +
                                      "' and '" + nodes_[n.inputs[1]].name + "' disagree on channels");
        break;
      case LayerKind::channel_select: {
        const auto& a = n.select();
        if (a.in_channels != src.channels || a.gather.size() != a.retained.size() ||
            n.channels != a.retained.size())
          throw ConfigError("layer " + quote(n) + ": channel_select bookkeeping is inconsistent");
        for (std::size_t i = 0; i < a.retained.size(); ++i) {
          if (i && a.retained[i] <= a.retained[i - 1])
            throw ConfigError("layer " + quote(n) + ": retained indices must be sorted and unique");
          if (a.gather[i] >= static_cast<long>(src.channels))
            throw ConfigError("layer " + quote(n) + ": gather index out of range");
        }
        break;
      }
      default:
        if (n.kind != LayerKind::concat && n.inputs.size() != 1)
          throw ConfigError("layer " + quote(n) + ": expected a single producer");
        break;
    }
  }
  if (nodes_.back().kind != LayerKind::output) throw ConfigError("graph '" + arch_ + "': missing output node");
  infer_shapes();
}

}  // namespace chanprune
