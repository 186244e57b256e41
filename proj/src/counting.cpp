#include "chanprune/counting.hpp"

#include <cstdio>

namespace chanprune {

std::uint64_t count_flops(const Graph& graph, const InputSpec& input) {
  const auto shapes = graph.infer_shapes(input);
  std::uint64_t total = 0;
  for (const auto& n : graph.nodes()) {
    if (n.kind == LayerKind::conv) {
      const auto& a = n.conv();
      total += static_cast<std::uint64_t>(a.out_channels) * a.in_channels * a.kernel * a.kernel *
               shapes[n.id].height * shapes[n.id].width;
    } else if (n.kind == LayerKind::linear) {
      total += static_cast<std::uint64_t>(n.linear().out_features) * n.linear().in_features;
    }
  }
  return total;
}

std::uint64_t count_flops(const Graph& graph) { return count_flops(graph, graph.input_spec()); }

std::uint64_t count_params(const Graph& graph) {
  std::uint64_t total = 0;
  for (const auto& n : graph.nodes()) {
    switch (n.kind) {
      case LayerKind::conv: {
        const auto& a = n.conv();
        total += static_cast<std::uint64_t>(a.out_channels) * a.in_channels * a.kernel * a.kernel;
        if (a.bias) total += a.out_channels;
        break;
      }
      case LayerKind::linear: {
        const auto& a = n.linear();
        total += static_cast<std::uint64_t>(a.out_features) * a.in_features;
        if (a.bias) total += a.out_features;
        break;
      }
      case LayerKind::bn:
        total += 2 * static_cast<std::uint64_t>(n.bn().channels);
        break;
      default:
        break;
    }
  }
  return total;
}

std::string format_count(std::uint64_t value) {
  char buf[32];
  if (value >= 1'000'000'000ULL)
    std::snprintf(buf, sizeof buf, "%.2fB", static_cast<double>(value) / 1e9);
  else if (value >= 1'000'000ULL)
    std::snprintf(buf, sizeof buf, "%.2fM", static_cast<double>(value) / 1e6);
  else if (value >= 1'000ULL)
    std::snprintf(buf, sizeof buf, "%.2fK", static_cast<double>(value) / 1e3);
  else
    std::snprintf(buf, sizeof buf, "%llu", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace chanprune
