#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "chanprune/graph.hpp"

namespace chanprune {

/// Generic container: 8-byte magic, u64 little-endian header length, UTF-8
/// JSON header, then raw little-endian float64 arrays back to back. The
/// header's "manifest" lists each array's offset (in elements) and shape.
struct Container {
  nlohmann::ordered_json header;
  std::vector<std::vector<double>> arrays;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

std::string serialize_graph(const Graph& graph);  // container bytes
Graph deserialize_graph(const std::string& bytes);

void save_model(const Graph& graph, const std::string& path);
/// Throws IngestionError on unreadable or malformed files.
Graph load_model(const std::string& path);

}  // namespace chanprune
