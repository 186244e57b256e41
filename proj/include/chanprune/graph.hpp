#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "chanprune/ops.hpp"
#include "chanprune/tensor.hpp"

namespace chanprune {

enum class LayerKind { input, conv, bn, relu, pool, linear, add, concat, channel_select, output };
enum class PoolType { max, avg, global_avg };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);
std::string_view to_string(PoolType type);
PoolType pool_type_from_string(std::string_view name);

using NodeId = std::size_t;

struct ConvAttrs {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;
};

struct LinearAttrs {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  bool bias = true;
};

struct BatchNormAttrs {
  std::size_t channels = 0;
  double momentum = 0.1;
  double eps = 1e-5;
  ops::BatchNormStats stats;
};

struct PoolAttrs {
  PoolType type = PoolType::max;
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
};

/// Non-parametric channel picker placed on identity shortcuts after group
/// pruning. `retained` lists the kept channels in the coordinates of the
/// unpruned stage; `gather[c]` is the position of retained[c] in the actual
/// input, or -1 when the producer itself dropped that channel (zero-filled).
struct ChannelSelectAttrs {
  std::size_t in_channels = 0;
  std::vector<std::size_t> retained;
  std::vector<long> gather;
};

using LayerAttrs =
    std::variant<std::monostate, ConvAttrs, LinearAttrs, BatchNormAttrs, PoolAttrs, ChannelSelectAttrs>;

struct LayerNode {
  NodeId id = 0;
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<NodeId> inputs;
  std::size_t channels = 0;  // output channels (features for rank-2 outputs)
  LayerAttrs attrs;
  // conv/linear: weight then optional bias; bn: scale then shift.
  std::vector<Parameter> params;

  const ConvAttrs& conv() const { return std::get<ConvAttrs>(attrs); }
  const LinearAttrs& linear() const { return std::get<LinearAttrs>(attrs); }
  const BatchNormAttrs& bn() const { return std::get<BatchNormAttrs>(attrs); }
  BatchNormAttrs& bn() { return std::get<BatchNormAttrs>(attrs); }
  const PoolAttrs& pool() const { return std::get<PoolAttrs>(attrs); }
  const ChannelSelectAttrs& select() const { return std::get<ChannelSelectAttrs>(attrs); }

  Parameter& weight() { return params.at(0); }
  const Parameter& weight() const { return params.at(0); }
  Parameter* bias() { return params.size() > 1 && kind != LayerKind::bn ? &params[1] : nullptr; }
  const Parameter* bias() const { return params.size() > 1 && kind != LayerKind::bn ? &params[1] : nullptr; }
};

struct InputSpec {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
};

/// Activation extent of one node for a single sample; rank-2 outputs have
/// spatial == false and height == width == 1.
struct NodeShape {
  std::size_t channels = 0;
  std::size_t height = 1;
  std::size_t width = 1;
  bool spatial = true;
};

/// DAG of layers in topological order: node ids are positions and every
/// producer id is smaller than its consumer's. Node 0 is the input.
class Graph {
 public:
  Graph() = default;
  Graph(std::string arch, InputSpec input, std::size_t num_classes);

  NodeId conv(const std::string& name, NodeId from, std::size_t out_channels, std::size_t kernel,
              std::size_t stride, std::size_t padding, bool bias);
  NodeId batchnorm(const std::string& name, NodeId from);
  NodeId relu(const std::string& name, NodeId from);
  NodeId maxpool(const std::string& name, NodeId from, std::size_t kernel, std::size_t stride,
                 std::size_t padding = 0);
  NodeId avgpool(const std::string& name, NodeId from, std::size_t kernel, std::size_t stride);
  NodeId global_avgpool(const std::string& name, NodeId from);
  NodeId linear(const std::string& name, NodeId from, std::size_t out_features, bool bias = true);
  NodeId add(const std::string& name, NodeId a, NodeId b);
  NodeId concat(const std::string& name, std::vector<NodeId> from);
  NodeId channel_select(const std::string& name, NodeId from, std::vector<std::size_t> retained,
                        std::vector<long> gather);
  NodeId output(NodeId from);

  /// Appends a fully formed node (used by surgery and deserialisation).
  NodeId append(LayerNode node);

  std::span<const LayerNode> nodes() const { return nodes_; }
  std::span<LayerNode> nodes() { return nodes_; }
  const LayerNode& node(NodeId id) const { return nodes_.at(id); }
  LayerNode& node(NodeId id) { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  NodeId output_id() const;
  NodeId find(std::string_view name) const;

  const std::string& arch() const { return arch_; }
  const InputSpec& input_spec() const { return input_; }
  std::size_t num_classes() const { return num_classes_; }

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  std::vector<std::vector<NodeId>> consumers() const;
  std::vector<NodeId> conv_ids() const;
  /// The bn node that directly and solely consumes `conv`, if any.
  std::optional<NodeId> batchnorm_after(NodeId conv) const;
  /// True when `ancestor` reaches `node` through producer edges.
  bool is_ancestor(NodeId ancestor, NodeId node) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  /// Counting-only graphs (concat topologies) cannot be trained or pruned.
  bool trainable() const;
  void validate() const;
  std::vector<NodeShape> infer_shapes(const InputSpec& input) const;
  std::vector<NodeShape> infer_shapes() const { return infer_shapes(input_); }

 private:
  NodeId push(LayerNode node);

  std::string arch_;
  InputSpec input_;
  std::size_t num_classes_ = 0;
  std::vector<LayerNode> nodes_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace chanprune
