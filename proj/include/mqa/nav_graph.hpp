#pragma once

#include "mqa/fusion.hpp"
#include "mqa/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mqa {

struct BuildParams {
  std::uint32_t degree_bound = 32;  // R
  std::uint32_t build_beam = 100;   // L_build
  double alpha = 1.2;
  std::uint32_t passes = 2;  // the first pass always prunes with alpha = 1
  std::uint64_t seed = 0x4d51412d67726170ULL;

  /// Throws InvalidConfig naming the offending field.
  void validate() const;
};

using Adjacency = std::vector<std::vector<VertexId>>;

/// Bounded-degree directed proximity graph over the vertices of a FusedSet.
struct NavGraph {
  Adjacency adjacency;
  VertexId entry = 0;
  std::uint32_t degree_bound = 0;
  /// Edges added by reachability repair; these may push a vertex past the bound.
  std::size_t repair_edges = 0;

  std::size_t size() const { return adjacency.size(); }
  bool operator==(const NavGraph& other) const {
    return adjacency == other.adjacency && entry == other.entry &&
           degree_bound == other.degree_bound;
  }
};

struct Candidate {
  VertexId id = 0;
  float distance = 0;

  friend bool operator<(const Candidate& a, const Candidate& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  }
  bool operator==(const Candidate&) const = default;
};

// The five build stages. Each is usable on its own; build_index chains them.

/// Stage 1: min(R, n-1) distinct uniformly random out-neighbours per vertex.
Adjacency init_graph(std::size_t n, std::uint32_t degree_bound, std::uint64_t seed);

/// Stage 2: beam search from the entry toward p; returns the expanded vertices
/// other than p with their distance to p, ascending.
std::vector<Candidate> acquire_candidates(const NavGraph& graph, const FusedSet& vectors,
                                          VertexId p, std::uint32_t build_beam);

/// Stage 3: robust prune. Repeatedly keeps the nearest remaining candidate c and
/// discards every c' with alpha * d(c, c') <= d(p, c'). Distances are squared.
std::vector<VertexId> select_neighbors(VertexId p, std::vector<Candidate> candidates,
                                       double alpha, std::uint32_t degree_bound,
                                       const FusedSet& vectors);

/// Stage 4: adds c -> p for every selected c, re-pruning c when it overflows R.
void add_reverse_edges(NavGraph& graph, const FusedSet& vectors, VertexId p,
                       std::span<const VertexId> selected, double alpha);

/// Vertex closest to the centroid, ties to the smaller id.
VertexId medoid(const FusedSet& vectors);

/// Stage 5: entry = medoid, then links every vertex unreachable from the entry
/// from its nearest reachable vertex, in ascending id order.
void finalize_entry_and_repair(NavGraph& graph, const FusedSet& vectors);

/// Throws EmptyCollection when `vectors` is empty.
NavGraph build_index(const FusedSet& vectors, const BuildParams& params);

struct ValidationReport {
  std::vector<std::string> violations;
  /// Vertices above the degree bound but within the repair allowance of R extra edges.
  std::size_t over_degree_vertices = 0;
  std::size_t unreachable = 0;

  bool ok() const { return violations.empty(); }
};

ValidationReport validate_graph(const NavGraph& graph);

/// "MQAG" v1: u32 N, u32 R, u32 entry, then per vertex u32 degree + ids. Little-endian.
std::string serialize_graph(const NavGraph& graph);
NavGraph deserialize_graph(std::string_view bytes);
std::size_t save_graph(const std::filesystem::path& path, const NavGraph& graph);
NavGraph load_graph(const std::filesystem::path& path);

}  // namespace mqa
