#include "chanprune/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "chanprune/errors.hpp"

namespace chanprune {
namespace {

constexpr char kMagic[8] = {'C', 'H', 'P', 'R', 'U', 'N', 'E', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::string encode(const Container& c) {
  auto header = c.header;
  auto& manifest = header["manifest"];
  if (!manifest.is_array() || manifest.size() != c.arrays.size())
    throw ConfigError("container manifest does not describe every array");
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < c.arrays.size(); ++i) {
    manifest[i]["offset"] = offset;
    manifest[i]["count"] = c.arrays[i].size();
    offset += c.arrays[i].size();
  }
  const std::string text = header.dump();
  std::string out(kMagic, 8);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const auto& a : c.arrays)
    for (double v : a) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Container decode(const std::string& bytes, const std::string& what) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw IngestionError(what + ": not a chanprune container");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t len = get_u64(p + 8);
  if (len > bytes.size() - 16) throw IngestionError(what + ": truncated header");
  Container c;
  try {
    c.header = nlohmann::ordered_json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(what + ": malformed header: " + e.what());
  }
  const std::size_t data = 16 + len;
  const std::uint64_t total = (bytes.size() - data) / 8;
  for (const auto& m : c.header.at("manifest")) {
    const std::uint64_t off = m.at("offset").get<std::uint64_t>();
    const std::uint64_t count = m.at("count").get<std::uint64_t>();
    if (off + count > total) throw IngestionError(what + ": array data truncated");
    std::vector<double> a(count);
    for (std::uint64_t i = 0; i < count; ++i) a[i] = std::bit_cast<double>(get_u64(p + data + 8 * (off + i)));
    c.arrays.push_back(std::move(a));
  }
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::ordered_json attrs_json(const LayerNode& n) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  switch (n.kind) {
    case LayerKind::conv: {
      const auto& a = n.conv();
      j = {{"in_channels", a.in_channels}, {"out_channels", a.out_channels}, {"kernel", a.kernel},
           {"stride", a.stride},           {"padding", a.padding},           {"bias", a.bias}};
      break;
    }
    case LayerKind::linear: {
      const auto& a = n.linear();
      j = {{"in_features", a.in_features}, {"out_features", a.out_features}, {"bias", a.bias}};
      break;
    }
    case LayerKind::bn: {
      const auto& a = n.bn();
      j = {{"channels", a.channels}, {"momentum", a.momentum}, {"eps", a.eps}, {"stats", a.stats.initialized()}};
      break;
    }
    case LayerKind::pool: {
      const auto& a = n.pool();
      j = {{"type", std::string(to_string(a.type))}, {"kernel", a.kernel}, {"stride", a.stride}, {"padding", a.padding}};
      break;
    }
    case LayerKind::channel_select: {
      const auto& a = n.select();
      j = {{"in_channels", a.in_channels}, {"retained", a.retained}, {"gather", a.gather}};
      break;
    }
    default:
      break;
  }
  return j;
}

}  // namespace

void write_container(const std::string& path, const Container& c) {
  const std::string bytes = encode(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestionError("short write to '" + path + "'");
}

Container read_container(const std::string& path) { return decode(read_file(path), path); }

std::string serialize_graph(const Graph& graph) {
  Container c;
  auto& h = c.header;
  h["format"] = "chanprune-model/1";
  h["arch"] = graph.arch();
  h["input"] = {graph.input_spec().channels, graph.input_spec().height, graph.input_spec().width};
  h["num_classes"] = graph.num_classes();
  h["metadata"] = graph.metadata();
  auto& nodes = h["nodes"] = nlohmann::ordered_json::array();
  auto& manifest = h["manifest"] = nlohmann::ordered_json::array();
  auto add_array = [&](NodeId id, const std::string& role, const Shape& shape, const std::vector<double>& v) {
    manifest.push_back({{"node", id}, {"role", role}, {"shape", shape}});
    c.arrays.push_back(v);
  };
  for (const auto& n : graph.nodes()) {
    nodes.push_back({{"name", n.name},
                     {"kind", std::string(to_string(n.kind))},
                     {"inputs", n.inputs},
                     {"channels", n.channels},
                     {"attrs", attrs_json(n)}});
    for (std::size_t i = 0; i < n.params.size(); ++i) {
      const auto& t = n.params[i].tensor;
      add_array(n.id, "param" + std::to_string(i), t.shape, t.values);
    }
    if (n.kind == LayerKind::bn && n.bn().stats.initialized()) {
      add_array(n.id, "running_mean", {n.channels}, n.bn().stats.mean);
      add_array(n.id, "running_var", {n.channels}, n.bn().stats.var);
    }
  }
  return encode(c);
}

Graph deserialize_graph(const std::string& bytes) {
  const Container c = decode(bytes, "model");
  const auto& h = c.header;
  try {
    if (h.value("format", "") != "chanprune-model/1") throw IngestionError("model: unknown format");
    const auto in = h.at("input").get<std::vector<std::size_t>>();
    if (in.size() != 3) throw IngestionError("model: bad input shape");
    Graph g(h.at("arch").get<std::string>(), InputSpec{in[0], in[1], in[2]}, h.at("num_classes").get<std::size_t>());
    g.metadata() = h.at("metadata").get<std::map<std::string, std::string>>();
    const auto& nodes = h.at("nodes");
    if (nodes.empty() || nodes[0].at("kind") != "input") throw IngestionError("model: first node must be the input");
    g.node(0).name = nodes[0].at("name").get<std::string>();

    std::vector<std::vector<std::pair<std::string, std::size_t>>> arrays(nodes.size());
    const auto& manifest = h.at("manifest");
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto id = manifest[i].at("node").get<std::size_t>();
      if (id >= nodes.size()) throw IngestionError("model: manifest references unknown node");
      arrays[id].emplace_back(manifest[i].at("role").get<std::string>(), i);
    }
    for (std::size_t id = 1; id < nodes.size(); ++id) {
      const auto& jn = nodes[id];
      const auto& ja = jn.at("attrs");
      LayerNode n;
      n.name = jn.at("name").get<std::string>();
      n.kind = layer_kind_from_string(jn.at("kind").get<std::string>());
      n.inputs = jn.at("inputs").get<std::vector<NodeId>>();
      n.channels = jn.at("channels").get<std::size_t>();
      switch (n.kind) {
        case LayerKind::conv:
          n.attrs = ConvAttrs{ja.at("in_channels"), ja.at("out_channels"), ja.at("kernel"),
                              ja.at("stride"),      ja.at("padding"),      ja.at("bias")};
          break;
        case LayerKind::linear:
          n.attrs = LinearAttrs{ja.at("in_features"), ja.at("out_features"), ja.at("bias")};
          break;
        case LayerKind::bn: {
          BatchNormAttrs a;
          a.channels = ja.at("channels");
          a.momentum = ja.at("momentum");
          a.eps = ja.at("eps");
          n.attrs = a;
          break;
        }
        case LayerKind::pool:
          n.attrs = PoolAttrs{pool_type_from_string(ja.at("type").get<std::string>()), ja.at("kernel"),
                              ja.at("stride"), ja.at("padding")};
          break;
        case LayerKind::channel_select:
          n.attrs = ChannelSelectAttrs{ja.at("in_channels"), ja.at("retained").get<std::vector<std::size_t>>(),
                                       ja.at("gather").get<std::vector<long>>()};
          break;
        default:
          break;
      }
      for (const auto& [role, index] : arrays[id]) {
        const auto shape = manifest[index].at("shape").get<Shape>();
        if (shape_size(shape) != c.arrays[index].size()) throw IngestionError("model: array length mismatch");
        if (role == "running_mean") {
          n.bn().stats.mean = c.arrays[index];
        } else if (role == "running_var") {
          n.bn().stats.var = c.arrays[index];
        } else {
          n.params.emplace_back(Tensor(shape, c.arrays[index]), n.kind != LayerKind::bn);
        }
      }
      g.append(std::move(n));
    }
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("model: malformed header: ") + e.what());
  } catch (const IngestionError&) {
    throw;
  } catch (const Error& e) {
    throw IngestionError(std::string("model: invalid graph: ") + e.what());
  }
}

void save_model(const Graph& graph, const std::string& path) {
  const std::string bytes = serialize_graph(graph);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Graph load_model(const std::string& path) {
  try {
    return deserialize_graph(read_file(path));
  } catch (const IngestionError& e) {
    throw IngestionError(path + ": " + e.what());
  }
}

}  // namespace chanprune
