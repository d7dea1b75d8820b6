#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dtmdp/data_model.hpp"

namespace dtmdp {

using NodeId = std::size_t;
using Edge = std::pair<NodeId, NodeId>;

/// Directed propagation graph: an edge u -> v means events propagate from u
/// to v. Immutable after construction; node ids are positions in `nodes()`.
class TopologyGraph {
 public:
  TopologyGraph() = default;
  /// Throws Error(InvalidGraph) on duplicate nodes, out-of-range endpoints,
  /// self-loops or duplicate edges.
  TopologyGraph(std::vector<Entity> nodes, std::vector<Edge> edges);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const std::vector<Entity>& nodes() const noexcept { return nodes_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const Entity& node(NodeId id) const { return nodes_.at(id); }

  std::optional<NodeId> find(const Entity& e) const;
  /// Like find() but throws Error(UnknownEntity).
  NodeId id_of(const Entity& e) const;

  const std::vector<NodeId>& successors(NodeId id) const { return out_.at(id); }
  const std::vector<NodeId>& predecessors(NodeId id) const { return in_.at(id); }
  bool has_edge(NodeId from, NodeId to) const;

  bool operator==(const TopologyGraph& other) const {
    return nodes_ == other.nodes_ && edges_ == other.edges_;
  }

 private:
  std::vector<Entity> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<NodeId>> out_;
  std::vector<std::vector<NodeId>> in_;
};

/// Number of edges on a shortest directed path, or nullopt if unreachable.
std::optional<int> shortest_distance(const TopologyGraph& g, const Entity& from, const Entity& to);

/// Row-major all-pairs directed BFS distances; -1 marks unreachable.
class DistanceTable {
 public:
  explicit DistanceTable(const TopologyGraph& g);

  std::optional<int> at(NodeId from, NodeId to) const {
    const int d = dist_[from * n_ + to];
    return d < 0 ? std::nullopt : std::optional<int>(d);
  }
  std::size_t size() const noexcept { return n_; }
  /// Largest finite distance (0 for a graph without edges).
  int diameter() const noexcept { return diameter_; }

 private:
  std::size_t n_ = 0;
  std::vector<int> dist_;
  int diameter_ = 0;
};

inline constexpr int kHitsDefaultMaxIter = 100;
inline constexpr double kHitsDefaultTol = 1e-10;

/// HITS hub vector (unit Euclidean norm, indexed by NodeId) by alternating
/// power iteration a = E^T h, h = E a from the uniform start. Stops once the
/// max-abs change between successive hub vectors is below `tol`.
/// Throws Error(EmptyGraphNoEdges).
std::vector<double> hubs_scores(const TopologyGraph& g, int max_iter = kHitsDefaultMaxIter,
                                double tol = kHitsDefaultTol);

// Graph file: {"nodes": [{name, etype}...], "edges": [[from, to]...]}.
nlohmann::json graph_to_json(const TopologyGraph& g);
TopologyGraph graph_from_json(const nlohmann::json& j);
TopologyGraph load_graph(const std::filesystem::path& path);
void save_graph(const TopologyGraph& g, const std::filesystem::path& path);

}  // namespace dtmdp
