#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chanprune/graph.hpp"

namespace chanprune {

/// Names accepted by build_architecture. densenet40_cifar and googlenet_cifar
/// are counting-only (concat topologies).
std::span<const std::string_view> architecture_names();

/// Builds a zoo architecture with freshly initialised weights:
/// He-normal (fan-in) convolutions, fan-in uniform linear layers, zero
/// biases, BN scale 1 / shift 0 / running mean 0 / running var 1.
/// num_classes == 0 picks the dataset default (1000 for ImageNet, else 10).
Graph build_architecture(std::string_view name, std::size_t num_classes = 0, std::uint64_t seed = 0);

struct ChainLayer {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool bias = false;
  bool batchnorm = true;
  bool relu = true;
  std::size_t maxpool = 0;  // window == stride; 0 for none
};

/// Plain conv chain, optionally closed by global pooling and a linear
/// classifier (num_classes == 0 leaves the last layer as the output).
Graph build_plain_chain(std::string name, InputSpec input, std::span<const ChainLayer> layers,
                        std::size_t num_classes, std::uint64_t seed = 0);

void initialize_weights(Graph& graph, std::uint64_t seed);

}  // namespace chanprune
