#include "dtmdp/topology.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

using nlohmann::json;

TopologyGraph::TopologyGraph(std::vector<Entity> nodes, std::vector<Edge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  const std::size_t n = nodes_.size();
  std::set<Entity> unique_nodes(nodes_.begin(), nodes_.end());
  if (unique_nodes.size() != n) throw Error(ErrorCode::InvalidGraph, "duplicate (name, etype) node");
  out_.assign(n, {});
  in_.assign(n, {});
  std::set<Edge> seen;
  for (const auto& [u, v] : edges_) {
    if (u >= n || v >= n) throw Error(ErrorCode::InvalidGraph, "edge endpoint out of range");
    if (u == v) throw Error(ErrorCode::InvalidGraph, "self-loop on " + to_display(nodes_[u]));
    if (!seen.insert({u, v}).second) throw Error(ErrorCode::InvalidGraph, "duplicate edge");
    out_[u].push_back(v);
    in_[v].push_back(u);
  }
}

std::optional<NodeId> TopologyGraph::find(const Entity& e) const {
  auto it = std::find(nodes_.begin(), nodes_.end(), e);
  if (it == nodes_.end()) return std::nullopt;
  return static_cast<NodeId>(it - nodes_.begin());
}

NodeId TopologyGraph::id_of(const Entity& e) const {
  if (auto id = find(e)) return *id;
  throw Error(ErrorCode::UnknownEntity, to_display(e) + " is not a node of the graph");
}

bool TopologyGraph::has_edge(NodeId from, NodeId to) const {
  const auto& succ = out_.at(from);
  return std::find(succ.begin(), succ.end(), to) != succ.end();
}

namespace {

std::vector<int> bfs_from(const TopologyGraph& g, NodeId source) {
  std::vector<int> dist(g.node_count(), -1);
  std::deque<NodeId> frontier{source};
  dist[source] = 0;
  while (!frontier.empty()) {
    const NodeId u = frontier.front();
    frontier.pop_front();
    for (NodeId v : g.successors(u)) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        frontier.push_back(v);
      }
    }
  }
  return dist;
}

}  // namespace

std::optional<int> shortest_distance(const TopologyGraph& g, const Entity& from, const Entity& to) {
  const NodeId s = g.id_of(from);
  const NodeId t = g.id_of(to);
  const int d = bfs_from(g, s)[t];
  return d < 0 ? std::nullopt : std::optional<int>(d);
}

DistanceTable::DistanceTable(const TopologyGraph& g) : n_(g.node_count()), dist_(n_ * n_, -1) {
  for (NodeId s = 0; s < n_; ++s) {
    const auto row = bfs_from(g, s);
    std::copy(row.begin(), row.end(), dist_.begin() + static_cast<std::ptrdiff_t>(s * n_));
    for (int d : row) diameter_ = std::max(diameter_, d);
  }
}

std::vector<double> hubs_scores(const TopologyGraph& g, int max_iter, double tol) {
  if (g.edge_count() == 0) throw Error(ErrorCode::EmptyGraphNoEdges, "HITS needs at least one edge");
  const std::size_t n = g.node_count();
  auto normalize = [](std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : v) x /= norm;
    }
  };

  std::vector<double> hub(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> authority(n);
  std::vector<double> next(n);
  for (int iter = 0; iter < max_iter; ++iter) {
    std::fill(authority.begin(), authority.end(), 0.0);
    for (const auto& [u, v] : g.edges()) authority[v] += hub[u];
    normalize(authority);
    std::fill(next.begin(), next.end(), 0.0);
    for (const auto& [u, v] : g.edges()) next[u] += authority[v];
    normalize(next);
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - hub[i]));
    hub.swap(next);
    if (change < tol) break;
  }
  return hub;
}

json graph_to_json(const TopologyGraph& g) {
  json nodes = json::array();
  for (const Entity& e : g.nodes()) nodes.push_back(entity_to_json(e));
  json edges = json::array();
  for (const auto& [u, v] : g.edges()) edges.push_back(json::array({u, v}));
  return json{{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

TopologyGraph graph_from_json(const json& j) {
  try {
    if (!j.is_object() || !j.contains("nodes") || !j.contains("edges")) {
      throw Error(ErrorCode::InvalidGraph, "graph needs 'nodes' and 'edges'");
    }
    for (const auto& item : j.items()) {
      if (item.key() != "nodes" && item.key() != "edges") {
        throw Error(ErrorCode::InvalidGraph, "unknown graph field '" + item.key() + "'");
      }
    }
    std::vector<Entity> nodes;
    for (const json& nj : j.at("nodes")) nodes.push_back(entity_from_json(nj));
    std::vector<Edge> edges;
    for (const json& ej : j.at("edges")) {
      if (!ej.is_array() || ej.size() != 2) throw Error(ErrorCode::InvalidGraph, "edge must be [from, to]");
      edges.emplace_back(ej[0].get<NodeId>(), ej[1].get<NodeId>());
    }
    return TopologyGraph(std::move(nodes), std::move(edges));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidGraph, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedRecord) throw Error(ErrorCode::InvalidGraph, e.what());
    throw;
  }
}

TopologyGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in && !std::filesystem::exists(path)) throw Error(ErrorCode::MissingArtifact, "missing " + path.string());
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open graph " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidGraph, e.what());
  }
  return graph_from_json(j);
}

void save_graph(const TopologyGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write graph " + path.string());
  out << graph_to_json(g).dump(2) << '\n';
}

}  // namespace dtmdp
