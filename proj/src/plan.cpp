#include "chanprune/plan.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "chanprune/errors.hpp"

namespace chanprune {

std::size_t PrunePlan::pruned_filters() const {
  std::size_t total = 0;
  for (const auto& e : entries) total += e.pruned.size() * e.layers.size();
  return total;
}

std::map<NodeId, std::vector<std::size_t>> PrunePlan::retained_by_conv() const {
  std::map<NodeId, std::vector<std::size_t>> out;
  for (const auto& e : entries) {
    if (e.pruned.empty()) continue;
    for (NodeId id : e.layers) out[id] = e.retained;
  }
  return out;
}

void PrunePlan::validate(const Graph& graph) const {
  std::vector<bool> seen(graph.size(), false);
  for (const auto& e : entries) {
    if (e.layers.empty()) throw PlanError("plan entry without layers");
    if (e.retained.empty())
      throw PlanError("plan would leave layer '" + (e.names.empty() ? std::string("?") : e.names.front()) +
                      "' with zero channels");
    if (e.retained.size() + e.pruned.size() != e.channels)
      throw PlanError("plan entry retained + pruned != channel count");
    for (std::size_t i = 0; i < e.layers.size(); ++i) {
      const NodeId id = e.layers[i];
      if (id >= graph.size() || graph.node(id).kind != LayerKind::conv)
        throw PlanError("plan references non-conv node " + std::to_string(id));
      if (i < e.names.size() && graph.node(id).name != e.names[i])
        throw PlanError("plan layer '" + e.names[i] + "' does not match graph layer '" + graph.node(id).name + "'");
      if (graph.node(id).channels != e.channels)
        throw PlanError("plan entry for '" + graph.node(id).name + "' expects " + std::to_string(e.channels) +
                        " channels, graph has " + std::to_string(graph.node(id).channels));
      if (seen[id]) throw PlanError("layer '" + graph.node(id).name + "' appears twice in plan");
      seen[id] = true;
    }
    std::vector<std::size_t> all = e.retained;
    all.insert(all.end(), e.pruned.begin(), e.pruned.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all[i] != i) throw PlanError("plan entry indices are out of range or duplicated");
  }
}

std::string PrunePlan::to_text() const {
  nlohmann::ordered_json j;
  j["format"] = "chanprune-plan/1";
  j["arch"] = arch;
  j["theta"] = theta;
  j["phi"] = phi;
  j["achieved_rate"] = achieved_rate;
  auto& arr = j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json je;
    je["layers"] = e.layers;
    je["names"] = e.names;
    je["channels"] = e.channels;
    je["retained"] = e.retained;
    je["pruned"] = e.pruned;
    arr.push_back(std::move(je));
  }
  return j.dump(2) + "\n";
}

PrunePlan PrunePlan::parse(std::string_view text) {
  PrunePlan plan;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", "") != "chanprune-plan/1") throw PlanError("not a chanprune plan");
    plan.arch = j.at("arch").get<std::string>();
    plan.theta = j.at("theta").get<double>();
    plan.phi = j.at("phi").get<double>();
    plan.achieved_rate = j.at("achieved_rate").get<double>();
    for (const auto& je : j.at("entries")) {
      PlanEntry e;
      e.layers = je.at("layers").get<std::vector<NodeId>>();
      e.names = je.at("names").get<std::vector<std::string>>();
      e.channels = je.at("channels").get<std::size_t>();
      e.retained = je.at("retained").get<std::vector<std::size_t>>();
      e.pruned = je.at("pruned").get<std::vector<std::size_t>>();
      plan.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw PlanError(std::string("malformed plan: ") + ex.what());
  }
  return plan;
}

PlanEntry make_plan_entry(const Graph& graph, std::vector<NodeId> layers, std::vector<std::size_t> pruned) {
  PlanEntry e;
  e.channels = graph.node(layers.front()).channels;
  for (NodeId id : layers) e.names.push_back(graph.node(id).name);
  e.layers = std::move(layers);
  std::sort(pruned.begin(), pruned.end());
  std::vector<bool> drop(e.channels, false);
  for (std::size_t k : pruned) {
    if (k >= e.channels) throw PlanError("filter index " + std::to_string(k) + " out of range");
    drop[k] = true;
  }
  for (std::size_t k = 0; k < e.channels; ++k) (drop[k] ? e.pruned : e.retained).push_back(k);
  if (e.retained.empty()) throw PlanError("plan would remove every filter of '" + e.names.front() + "'");
  return e;
}

PrunePlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PlanError("cannot open plan file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return PrunePlan::parse(ss.str());
}

void save_plan(const PrunePlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw PlanError("cannot write plan file '" + path + "'");
  out << plan.to_text();
}

}  // namespace chanprune
