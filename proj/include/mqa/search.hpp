#pragma once

#include "mqa/catalog.hpp"
#include "mqa/fusion.hpp"
#include "mqa/nav_graph.hpp"
#include "mqa/types.hpp"

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mqa {

enum class Framework { Must, Mr, Je };

constexpr std::array<Framework, 3> kAllFrameworks{Framework::Must, Framework::Mr, Framework::Je};

std::string_view to_string(Framework f);
Framework parse_framework(std::string_view name);

struct SearchParams {
  std::size_t k = 10;
  std::size_t beam = 100;  // L
  Framework framework = Framework::Must;
  std::optional<WeightVector> weight_override;

  void validate() const;
};

struct SearchStats {
  std::size_t visited = 0;     // vertices expanded
  std::size_t full_evals = 0;  // distances computed to completion
  std::size_t abandoned = 0;   // distances cut short by the admission threshold
  double latency_ms = 0;

  SearchStats& operator+=(const SearchStats& o) {
    visited += o.visited;
    full_evals += o.full_evals;
    abandoned += o.abandoned;
    return *this;
  }
};

struct Hit {
  VertexId vertex = 0;
  float distance = 0;
  bool operator==(const Hit&) const = default;
};

/// Hits ordered by (distance, vertex id).
struct SearchResult {
  std::vector<Hit> hits;
  SearchStats stats;

  std::vector<VertexId> ids() const;
};

/// Squared distance accumulated one segment at a time. Returns nullopt
/// (abandoned) as soon as a partial sum exceeds `threshold`.
template <typename DerivedQ, typename DerivedO>
std::optional<typename DerivedQ::Scalar> incremental_distance(
    const Eigen::MatrixBase<DerivedQ>& q, const Eigen::MatrixBase<DerivedO>& o,
    const SegmentLayout& layout,
    typename DerivedQ::Scalar threshold = std::numeric_limits<typename DerivedQ::Scalar>::infinity()) {
  using Scalar = typename DerivedQ::Scalar;
  if (q.size() != layout.total || o.size() != layout.total)
    throw Error(ErrorCode::DimensionMismatch, "vector length does not match segment layout");
  Scalar partial = 0;
  for (std::size_t s = 0; s < layout.segments(); ++s) {
    partial += (q.segment(layout.offsets[s], layout.dims[s]) -
                o.segment(layout.offsets[s], layout.dims[s]))
                   .squaredNorm();
    if (partial > threshold) return std::nullopt;
  }
  return partial;
}

struct BeamSearchOutput {
  std::vector<Candidate> pool;      // best `beam` seen, ascending
  std::vector<Candidate> expanded;  // in expansion order
  SearchStats stats;
};

/// Best-first beam search from the graph entry. With `prune`, neighbour
/// distances are abandoned against the current beam-th best distance.
BeamSearchOutput beam_search(const NavGraph& graph, const FusedSet& vectors,
                             const VectorXf& query, std::size_t beam, bool prune = true);

SearchResult greedy_search(const NavGraph& graph, const FusedSet& vectors, const VectorXf& query,
                           std::size_t k, std::size_t beam, bool prune = true);

/// Exact top-k by full distance, same tie rule as greedy_search.
SearchResult brute_force_topk(const FusedSet& vectors, const VectorXf& query, std::size_t k);

/// |got(top k) ∩ truth(top k)| / min(k, |truth|).
double recall_at_k(const SearchResult& got, const SearchResult& truth, std::size_t k);

/// Every index family over one encoded collection: the unified fused graph,
/// one graph per modality, and a graph over joint-mean vectors.
class RetrievalEngine {
 public:
  RetrievalEngine(EncodedVectors vectors, WeightVector weights, const BuildParams& params,
                  std::span<const Framework> frameworks = kAllFrameworks);

  const EncodedVectors& vectors() const { return vectors_; }
  const WeightVector& weights() const { return weights_; }
  bool has(Framework f) const;

  const FusedSet& fused() const { return fused_; }
  const NavGraph& must_graph() const;
  const NavGraph& modality_graph(std::size_t m) const;
  const NavGraph& joint_graph() const;

  /// One search in the unified graph. A weight override reranks the beam by the
  /// override-weighted distance.
  SearchResult search_must(const ModalityVectors<float>& query, const SearchParams& params) const;
  /// Per-modality searches, candidate union, rerank by full weighted distance.
  SearchResult search_mr(const ModalityVectors<float>& query, const SearchParams& params) const;
  /// One search in joint-mean space; distances are joint-space distances.
  SearchResult search_je(const ModalityVectors<float>& query, const SearchParams& params) const;

  SearchResult search(const ModalityVectors<float>& query, const SearchParams& params) const;

  /// Exact top-k under the engine weights (or the override).
  SearchResult ground_truth(const ModalityVectors<float>& query, const SearchParams& params) const;

 private:
  EncodedVectors vectors_;
  WeightVector weights_;
  FusedSet fused_;
  std::optional<NavGraph> must_graph_;
  std::vector<FusedSet> modality_sets_;
  std::vector<NavGraph> modality_graphs_;
  std::optional<FusedSet> joint_set_;
  std::optional<NavGraph> joint_graph_;
};

struct FrameworkOutcome {
  Framework framework = Framework::Must;
  std::optional<SearchResult> result;
  std::string error;
};

/// Runs every framework on the same query; a failing framework reports its error
/// while the others still run.
std::vector<FrameworkOutcome> compare_frameworks(const RetrievalEngine& engine,
                                                 const ModalityVectors<float>& query,
                                                 const SearchParams& params);

}  // namespace mqa
