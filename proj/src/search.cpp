#include "mqa/search.hpp"

#include "mqa/encoding.hpp"
#include "mqa/error.hpp"

#include <algorithm>
#include <chrono>

namespace mqa {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<Hit> top_hits(const std::vector<Candidate>& sorted, std::size_t k) {
  std::vector<Hit> hits;
  hits.reserve(std::min(k, sorted.size()));
  for (std::size_t i = 0; i < sorted.size() && i < k; ++i)
    hits.push_back({sorted[i].id, sorted[i].distance});
  return hits;
}

void check_query(const ModalityVectors<float>& query, const EncodedVectors& vectors) {
  if (query.size() != vectors.modality_count())
    throw Error(ErrorCode::DimensionMismatch, "query has the wrong number of modalities");
  for (std::size_t m = 0; m < query.size(); ++m)
    if (query[m].size() != vectors.per_modality[m].cols())
      throw Error(ErrorCode::DimensionMismatch,
                  "query modality " + std::to_string(m) + " has the wrong dimension");
}

float weighted_row_distance(const EncodedVectors& vectors, const ModalityVectors<float>& query,
                            VertexId v, const WeightVector& w) {
  float total = 0;
  for (std::size_t m = 0; m < query.size(); ++m)
    total += static_cast<float>(w[m]) *
             (query[m] - vectors.per_modality[m].row(v).transpose()).squaredNorm();
  return total;
}

RowMatrixXf joint_matrix(const EncodedVectors& vectors) {
  Eigen::Index width = 0;
  for (const auto& m : vectors.per_modality) width = std::max(width, m.cols());
  RowMatrixXf out = RowMatrixXf::Zero(static_cast<Eigen::Index>(vectors.size()), width);
  for (const auto& m : vectors.per_modality) out.leftCols(m.cols()) += m;
  out /= static_cast<float>(vectors.modality_count());
  return out;
}

}  // namespace

std::string_view to_string(Framework f) {
  switch (f) {
    case Framework::Must: return "MUST";
    case Framework::Mr: return "MR";
    case Framework::Je: return "JE";
  }
  return "?";
}

Framework parse_framework(std::string_view name) {
  for (auto f : kAllFrameworks)
    if (to_string(f) == name) return f;
  throw Error(ErrorCode::InvalidArgument,
              "unknown framework '" + std::string(name) + "' (expected MUST, MR or JE)",
              "framework");
}

void SearchParams::validate() const {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1", "k");
  if (beam < k) throw Error(ErrorCode::InvalidArgument, "L must be at least k", "L");
}

std::vector<VertexId> SearchResult::ids() const {
  std::vector<VertexId> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(h.vertex);
  return out;
}

BeamSearchOutput beam_search(const NavGraph& graph, const FusedSet& vectors,
                             const VectorXf& query, std::size_t beam, bool prune) {
  const auto n = graph.size();
  if (n != vectors.size())
    throw Error(ErrorCode::DimensionMismatch, "graph and vector set sizes differ");
  if (query.size() != vectors.dim())
    throw Error(ErrorCode::DimensionMismatch, "query length does not match the index");
  BeamSearchOutput out;
  if (n == 0) return out;
  beam = std::max<std::size_t>(beam, 1);

  struct Slot {
    Candidate c;
    bool expanded;
  };
  std::vector<Slot> pool;
  pool.reserve(beam + 1);
  std::vector<char> seen(n, 0);

  const auto entry = graph.entry;
  seen[entry] = 1;
  pool.push_back({{entry, *incremental_distance(query, vectors.data.row(entry).transpose(),
                                                vectors.layout)},
                  false});
  ++out.stats.full_evals;

  constexpr float kInf = std::numeric_limits<float>::infinity();
  std::size_t cursor = 0;  // every slot before cursor is expanded
  while (cursor < pool.size()) {
    auto& slot = pool[cursor];
    slot.expanded = true;
    const auto current = slot.c;
    out.expanded.push_back(current);
    ++out.stats.visited;

    std::size_t lowest_insert = pool.size();
    for (auto u : graph.adjacency[current.id]) {
      if (seen[u]) continue;
      seen[u] = 1;
      const float threshold = prune && pool.size() >= beam ? pool.back().c.distance : kInf;
      auto d = incremental_distance(query, vectors.data.row(u).transpose(), vectors.layout,
                                    threshold);
      if (!d) {
        ++out.stats.abandoned;
        continue;
      }
      ++out.stats.full_evals;
      const Candidate cand{u, *d};
      if (pool.size() >= beam && !(cand < pool.back().c)) continue;
      auto pos = std::upper_bound(pool.begin(), pool.end(), cand,
                                  [](const Candidate& a, const Slot& s) { return a < s.c; });
      lowest_insert = std::min(lowest_insert, static_cast<std::size_t>(pos - pool.begin()));
      pool.insert(pos, {cand, false});
      if (pool.size() > beam) pool.pop_back();
    }
    cursor = std::min(cursor + 1, lowest_insert);
    while (cursor < pool.size() && pool[cursor].expanded) ++cursor;
  }

  out.pool.reserve(pool.size());
  for (const auto& s : pool) out.pool.push_back(s.c);
  return out;
}

SearchResult greedy_search(const NavGraph& graph, const FusedSet& vectors, const VectorXf& query,
                           std::size_t k, std::size_t beam, bool prune) {
  auto start = Clock::now();
  auto out = beam_search(graph, vectors, query, std::max(beam, k), prune);
  SearchResult result{top_hits(out.pool, k), out.stats};
  result.stats.latency_ms = elapsed_ms(start);
  return result;
}

SearchResult brute_force_topk(const FusedSet& vectors, const VectorXf& query, std::size_t k) {
  auto start = Clock::now();
  if (query.size() != vectors.dim())
    throw Error(ErrorCode::DimensionMismatch, "query length does not match the vector set");
  std::vector<Candidate> all;
  all.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto v = static_cast<VertexId>(i);
    all.push_back({v, *incremental_distance(query, vectors.data.row(v).transpose(),
                                            vectors.layout)});
  }
  const auto keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end());
  SearchResult result{top_hits(all, keep), {}};
  result.stats.full_evals = all.size();
  result.stats.latency_ms = elapsed_ms(start);
  return result;
}

double recall_at_k(const SearchResult& got, const SearchResult& truth, std::size_t k) {
  const auto truth_n = std::min(k, truth.hits.size());
  if (truth_n == 0) return 1.0;
  std::size_t found = 0;
  for (std::size_t i = 0; i < truth_n; ++i) {
    const auto target = truth.hits[i].vertex;
    for (std::size_t j = 0; j < got.hits.size() && j < k; ++j)
      if (got.hits[j].vertex == target) {
        ++found;
        break;
      }
  }
  return static_cast<double>(found) / static_cast<double>(truth_n);
}

RetrievalEngine::RetrievalEngine(EncodedVectors vectors, WeightVector weights,
                                 const BuildParams& params, std::span<const Framework> frameworks)
    : vectors_(std::move(vectors)), weights_(std::move(weights)) {
  if (vectors_.modality_count() == 0)
    throw Error(ErrorCode::InvalidArgument, "engine needs at least one modality");
  if (vectors_.size() == 0) throw Error(ErrorCode::EmptyCollection, "no objects to index");
  fused_ = fuse_all(vectors_, weights_);
  auto wants = [&](Framework f) {
    return std::find(frameworks.begin(), frameworks.end(), f) != frameworks.end();
  };
  if (wants(Framework::Must)) must_graph_ = build_index(fused_, params);
  if (wants(Framework::Mr)) {
    for (const auto& m : vectors_.per_modality) {
      modality_sets_.push_back(single_segment(m));
      modality_graphs_.push_back(build_index(modality_sets_.back(), params));
    }
  }
  if (wants(Framework::Je)) {
    joint_set_ = single_segment(joint_matrix(vectors_));
    joint_graph_ = build_index(*joint_set_, params);
  }
}

bool RetrievalEngine::has(Framework f) const {
  switch (f) {
    case Framework::Must: return must_graph_.has_value();
    case Framework::Mr: return !modality_graphs_.empty();
    case Framework::Je: return joint_graph_.has_value();
  }
  return false;
}

const NavGraph& RetrievalEngine::must_graph() const {
  if (!must_graph_) throw Error(ErrorCode::IndexNotBuilt, "MUST index was not built");
  return *must_graph_;
}

const NavGraph& RetrievalEngine::modality_graph(std::size_t m) const {
  if (modality_graphs_.empty()) throw Error(ErrorCode::IndexNotBuilt, "MR indexes were not built");
  return modality_graphs_.at(m);
}

const NavGraph& RetrievalEngine::joint_graph() const {
  if (!joint_graph_) throw Error(ErrorCode::IndexNotBuilt, "JE index was not built");
  return *joint_graph_;
}

SearchResult RetrievalEngine::search_must(const ModalityVectors<float>& query,
                                          const SearchParams& params) const {
  auto start = Clock::now();
  params.validate();
  const auto& graph = must_graph();
  check_query(query, vectors_);
  auto out = beam_search(graph, fused_, fuse<float>(query, weights_), params.beam);

  SearchResult result;
  result.stats = out.stats;
  if (params.weight_override && !(*params.weight_override == weights_)) {
    const auto& w = *params.weight_override;
    if (w.size() != weights_.size())
      throw Error(ErrorCode::DimensionMismatch, "weight override has the wrong modality count",
                  "weights");
    for (auto& c : out.pool) c.distance = weighted_row_distance(vectors_, query, c.id, w);
    result.stats.full_evals += out.pool.size();
    std::sort(out.pool.begin(), out.pool.end());
  }
  result.hits = top_hits(out.pool, params.k);
  result.stats.latency_ms = elapsed_ms(start);
  return result;
}

SearchResult RetrievalEngine::search_mr(const ModalityVectors<float>& query,
                                        const SearchParams& params) const {
  auto start = Clock::now();
  params.validate();
  if (modality_graphs_.empty()) throw Error(ErrorCode::IndexNotBuilt, "MR indexes were not built");
  check_query(query, vectors_);
  const auto& w = params.weight_override ? *params.weight_override : weights_;
  if (w.size() != weights_.size())
    throw Error(ErrorCode::DimensionMismatch, "weight override has the wrong modality count",
                "weights");

  SearchResult result;
  std::vector<char> in_union(vectors_.size(), 0);
  std::vector<VertexId> members;
  for (std::size_t m = 0; m < modality_graphs_.size(); ++m) {
    auto out = beam_search(modality_graphs_[m], modality_sets_[m], query[m], params.beam);
    result.stats += out.stats;
    for (const auto& c : out.pool)
      if (!in_union[c.id]) {
        in_union[c.id] = 1;
        members.push_back(c.id);
      }
  }
  std::vector<Candidate> merged;
  merged.reserve(members.size());
  for (auto v : members) merged.push_back({v, weighted_row_distance(vectors_, query, v, w)});
  result.stats.full_evals += merged.size();
  std::sort(merged.begin(), merged.end());
  result.hits = top_hits(merged, params.k);
  result.stats.latency_ms = elapsed_ms(start);
  return result;
}

SearchResult RetrievalEngine::search_je(const ModalityVectors<float>& query,
                                        const SearchParams& params) const {
  auto start = Clock::now();
  params.validate();
  const auto& graph = joint_graph();
  check_query(query, vectors_);
  const VectorXf joint = joint_encode<float>(query);
  auto out = beam_search(graph, *joint_set_, joint, params.beam);
  SearchResult result{top_hits(out.pool, params.k), out.stats};
  result.stats.latency_ms = elapsed_ms(start);
  return result;
}

SearchResult RetrievalEngine::search(const ModalityVectors<float>& query,
                                     const SearchParams& params) const {
  switch (params.framework) {
    case Framework::Must: return search_must(query, params);
    case Framework::Mr: return search_mr(query, params);
    case Framework::Je: return search_je(query, params);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown framework");
}

SearchResult RetrievalEngine::ground_truth(const ModalityVectors<float>& query,
                                           const SearchParams& params) const {
  check_query(query, vectors_);
  const auto& w = params.weight_override ? *params.weight_override : weights_;
  if (&w == &weights_) return brute_force_topk(fused_, fuse<float>(query, weights_), params.k);

  auto start = Clock::now();
  std::vector<Candidate> all;
  all.reserve(vectors_.size());
  for (std::size_t i = 0; i < vectors_.size(); ++i) {
    const auto v = static_cast<VertexId>(i);
    all.push_back({v, weighted_row_distance(vectors_, query, v, w)});
  }
  std::sort(all.begin(), all.end());
  SearchResult result{top_hits(all, params.k), {}};
  result.stats.full_evals = all.size();
  result.stats.latency_ms = elapsed_ms(start);
  return result;
}

std::vector<FrameworkOutcome> compare_frameworks(const RetrievalEngine& engine,
                                                 const ModalityVectors<float>& query,
                                                 const SearchParams& params) {
  std::vector<FrameworkOutcome> out;
  for (auto f : kAllFrameworks) {
    FrameworkOutcome outcome;
    outcome.framework = f;
    auto p = params;
    p.framework = f;
    try {
      outcome.result = engine.search(query, p);
    } catch (const Error& e) {
      outcome.error = std::string(to_string(e.code())) + ": " + e.what();
    }
    out.push_back(std::move(outcome));
  }
  return out;
}

}  // namespace mqa
