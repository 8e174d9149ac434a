#include "mqa/nav_graph.hpp"

#include "binary_io.hpp"
#include "mqa/error.hpp"
#include "mqa/search.hpp"

#include <algorithm>
#include <deque>
#include <random>

namespace mqa {

namespace {

constexpr std::string_view kGraphMagic = "MQAG";
constexpr std::uint32_t kGraphVersion = 1;

float row_distance(const FusedSet& s, VertexId a, VertexId b) {
  return (s.data.row(a) - s.data.row(b)).squaredNorm();
}

// Marks everything reachable from `start` that is not yet marked; appends the
// newly reached vertices to `order`.
void mark_reachable(const Adjacency& adj, VertexId start, std::vector<char>& reached,
                    std::vector<VertexId>& order) {
  if (reached[start]) return;
  std::deque<VertexId> queue{start};
  reached[start] = 1;
  order.push_back(start);
  while (!queue.empty()) {
    auto v = queue.front();
    queue.pop_front();
    for (auto u : adj[v]) {
      if (u >= adj.size() || reached[u]) continue;
      reached[u] = 1;
      order.push_back(u);
      queue.push_back(u);
    }
  }
}

}  // namespace

void BuildParams::validate() const {
  if (degree_bound < 2) throw Error(ErrorCode::InvalidConfig, "R must be at least 2", "R");
  if (build_beam < degree_bound)
    throw Error(ErrorCode::InvalidConfig, "L_build must be at least R", "L_build");
  if (!(alpha >= 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha must be >= 1", "alpha");
  if (passes < 1) throw Error(ErrorCode::InvalidConfig, "passes must be >= 1", "passes");
}

Adjacency init_graph(std::size_t n, std::uint32_t degree_bound, std::uint64_t seed) {
  Adjacency adj(n);
  if (n <= 1) return adj;
  const std::size_t want = std::min<std::size_t>(degree_bound, n - 1);
  std::mt19937_64 rng(seed);
  for (std::size_t v = 0; v < n; ++v) {
    auto& nb = adj[v];
    nb.reserve(want);
    if (want == n - 1) {
      for (std::size_t u = 0; u < n; ++u)
        if (u != v) nb.push_back(static_cast<VertexId>(u));
      continue;
    }
    while (nb.size() < want) {
      auto u = static_cast<VertexId>(rng() % n);
      if (u == v || std::find(nb.begin(), nb.end(), u) != nb.end()) continue;
      nb.push_back(u);
    }
    std::sort(nb.begin(), nb.end());
  }
  return adj;
}

std::vector<Candidate> acquire_candidates(const NavGraph& graph, const FusedSet& vectors,
                                          VertexId p, std::uint32_t build_beam) {
  const VectorXf target = vectors.data.row(p).transpose();
  auto out = beam_search(graph, vectors, target, build_beam, /*prune=*/true);
  std::vector<Candidate> candidates;
  candidates.reserve(out.expanded.size());
  for (const auto& c : out.expanded)
    if (c.id != p) candidates.push_back(c);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

std::vector<VertexId> select_neighbors(VertexId p, std::vector<Candidate> candidates,
                                       double alpha, std::uint32_t degree_bound,
                                       const FusedSet& vectors) {
  std::sort(candidates.begin(), candidates.end());
  // Keep the first (nearest) occurrence of each id and drop p itself.
  std::vector<Candidate> unique;
  unique.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (c.id == p) continue;
    if (std::any_of(unique.begin(), unique.end(), [&](const Candidate& u) { return u.id == c.id; }))
      continue;
    unique.push_back(c);
  }

  // Slack rises from 1 to alpha so the most diverse neighbours are taken first;
  // min_gap[j] is the smallest d(c, c_j) over kept c nearer to p than c_j.
  std::vector<VertexId> kept;
  std::vector<char> taken(unique.size(), 0);
  std::vector<float> min_gap(unique.size(), std::numeric_limits<float>::infinity());
  for (double slack = 1.0; kept.size() < degree_bound; slack = std::min(slack * 1.2, alpha)) {
    for (std::size_t i = 0; i < unique.size() && kept.size() < degree_bound; ++i) {
      if (taken[i] || slack * min_gap[i] <= unique[i].distance) continue;
      taken[i] = 1;
      kept.push_back(unique[i].id);
      for (std::size_t j = i + 1; j < unique.size(); ++j)
        if (!taken[j])
          min_gap[j] = std::min(min_gap[j], row_distance(vectors, unique[i].id, unique[j].id));
    }
    if (slack >= alpha) break;
  }
  return kept;
}

void add_reverse_edges(NavGraph& graph, const FusedSet& vectors, VertexId p,
                       std::span<const VertexId> selected, double alpha) {
  for (auto c : selected) {
    auto& nb = graph.adjacency[c];
    if (c == p || std::find(nb.begin(), nb.end(), p) != nb.end()) continue;
    nb.push_back(p);
    if (nb.size() <= graph.degree_bound) continue;
    std::vector<Candidate> candidates;
    candidates.reserve(nb.size());
    for (auto u : nb) candidates.push_back({u, row_distance(vectors, c, u)});
    nb = select_neighbors(c, std::move(candidates), alpha, graph.degree_bound, vectors);
  }
}

VertexId medoid(const FusedSet& vectors) {
  if (vectors.size() == 0) throw Error(ErrorCode::EmptyCollection, "no vectors");
  const Eigen::RowVectorXd centroid = vectors.data.cast<double>().colwise().mean();
  VertexId best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < vectors.data.rows(); ++i) {
    double d = (vectors.data.row(i).cast<double>() - centroid).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<VertexId>(i);
    }
  }
  return best;
}

void finalize_entry_and_repair(NavGraph& graph, const FusedSet& vectors) {
  graph.entry = medoid(vectors);
  const auto n = graph.size();
  std::vector<char> reached(n, 0);
  std::vector<VertexId> order;
  order.reserve(n);
  mark_reachable(graph.adjacency, graph.entry, reached, order);
  for (std::size_t u = 0; u < n; ++u) {
    if (reached[u]) continue;
    const auto target = static_cast<VertexId>(u);
    VertexId from = order.front();
    float best = std::numeric_limits<float>::infinity();
    for (auto v : order) {
      float d = row_distance(vectors, v, target);
      if (d < best || (d == best && v < from)) {
        best = d;
        from = v;
      }
    }
    graph.adjacency[from].push_back(target);
    ++graph.repair_edges;
    mark_reachable(graph.adjacency, target, reached, order);
  }
}

NavGraph build_index(const FusedSet& vectors, const BuildParams& params) {
  params.validate();
  const auto n = vectors.size();
  if (n == 0) throw Error(ErrorCode::EmptyCollection, "cannot build an index over 0 vectors");

  NavGraph graph;
  graph.degree_bound = params.degree_bound;
  graph.adjacency = init_graph(n, params.degree_bound, params.seed);
  graph.entry = medoid(vectors);

  for (std::uint32_t pass = 0; pass < params.passes; ++pass) {
    const double alpha = pass == 0 ? 1.0 : params.alpha;
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = static_cast<VertexId>(i);
      auto candidates = acquire_candidates(graph, vectors, p, params.build_beam);
      for (auto u : graph.adjacency[p])
        if (std::none_of(candidates.begin(), candidates.end(),
                         [&](const Candidate& c) { return c.id == u; }))
          candidates.push_back({u, row_distance(vectors, p, u)});
      graph.adjacency[p] =
          select_neighbors(p, std::move(candidates), alpha, params.degree_bound, vectors);
      add_reverse_edges(graph, vectors, p, graph.adjacency[p], alpha);
    }
  }

  finalize_entry_and_repair(graph, vectors);
  return graph;
}

ValidationReport validate_graph(const NavGraph& graph) {
  ValidationReport report;
  const auto n = graph.size();
  if (n == 0) {
    report.violations.push_back("graph has no vertices");
    return report;
  }
  if (graph.entry >= n) {
    report.violations.push_back("entry " + std::to_string(graph.entry) + " is out of range");
    return report;
  }
  const std::size_t bound = graph.degree_bound;
  for (std::size_t v = 0; v < n; ++v) {
    const auto& nb = graph.adjacency[v];
    std::vector<VertexId> sorted = nb;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      report.violations.push_back("vertex " + std::to_string(v) + " has duplicate neighbours");
    for (auto u : nb) {
      if (u == v) report.violations.push_back("vertex " + std::to_string(v) + " has a self-loop");
      if (u >= n)
        report.violations.push_back("vertex " + std::to_string(v) + " links to missing vertex " +
                                    std::to_string(u));
    }
    if (nb.size() > 2 * bound)
      report.violations.push_back("vertex " + std::to_string(v) + " has degree " +
                                  std::to_string(nb.size()) + " > 2R");
    else if (nb.size() > bound)
      ++report.over_degree_vertices;
  }

  std::vector<char> reached(n, 0);
  std::vector<VertexId> order;
  mark_reachable(graph.adjacency, graph.entry, reached, order);
  report.unreachable = n - order.size();
  if (report.unreachable > 0)
    report.violations.push_back(std::to_string(report.unreachable) +
                                " vertices unreachable from the entry");
  return report;
}

std::string serialize_graph(const NavGraph& graph) {
  detail::ByteWriter w;
  w.put_bytes(kGraphMagic);
  w.put_u32(kGraphVersion);
  w.put_u32(static_cast<std::uint32_t>(graph.size()));
  w.put_u32(graph.degree_bound);
  w.put_u32(graph.entry);
  for (const auto& nb : graph.adjacency) {
    w.put_u32(static_cast<std::uint32_t>(nb.size()));
    for (auto u : nb) w.put_u32(u);
  }
  return w.bytes();
}

NavGraph deserialize_graph(std::string_view bytes) {
  detail::ByteReader r(bytes, "graph file");
  if (r.bytes(4) != kGraphMagic)
    throw Error(ErrorCode::FormatError, "graph file: bad magic");
  if (auto version = r.u32(); version != kGraphVersion)
    throw Error(ErrorCode::FormatError, "graph file: unsupported version " +
                                            std::to_string(version));
  NavGraph g;
  const auto n = r.u32();
  g.degree_bound = r.u32();
  g.entry = r.u32();
  if (n > 0 && g.entry >= n) throw Error(ErrorCode::FormatError, "graph file: entry out of range");
  // Each vertex needs at least its degree word.
  if (r.remaining() < std::size_t{n} * 4)
    throw Error(ErrorCode::FormatError, "graph file: truncated file");
  g.adjacency.resize(n);
  for (auto& nb : g.adjacency) {
    const auto degree = r.u32();
    if (r.remaining() < std::size_t{degree} * 4)
      throw Error(ErrorCode::FormatError, "graph file: truncated file");
    nb.resize(degree);
    for (auto& u : nb) {
      u = r.u32();
      if (u >= n) throw Error(ErrorCode::FormatError, "graph file: neighbour id out of range");
    }
  }
  r.expect_end();
  return g;
}

std::size_t save_graph(const std::filesystem::path& path, const NavGraph& graph) {
  auto bytes = serialize_graph(graph);
  detail::write_file(path, bytes);
  return bytes.size();
}

NavGraph load_graph(const std::filesystem::path& path) {
  return deserialize_graph(detail::read_file(path));
}

}  // namespace mqa
