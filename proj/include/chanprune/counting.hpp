#pragma once

#include <cstdint>
#include <string>

#include "chanprune/graph.hpp"

namespace chanprune {

/// Multiply-accumulate count of one forward pass for a single sample:
/// conv contributes Cout*Cin*p*p*H'*W', linear Cout*Cin, everything else 0.
std::uint64_t count_flops(const Graph& graph, const InputSpec& input);
std::uint64_t count_flops(const Graph& graph);

/// Conv/linear weights and biases plus BN scale and shift; running
/// statistics are state, not parameters.
std::uint64_t count_params(const Graph& graph);

/// "313.73M", "1.52B" style rendering with two decimals.
std::string format_count(std::uint64_t value);

}  // namespace chanprune
