#pragma once

#include "mqa/catalog.hpp"
#include "mqa/error.hpp"
#include "mqa/types.hpp"

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mqa {

/// True when every entry is >= 0 and the entries sum to 1 within `tol`.
bool on_simplex(const VectorXd& w, double tol = 1e-6);

/// Per-modality importance weights on the probability simplex, schema order.
class WeightVector {
 public:
  WeightVector() = default;
  /// Throws InvalidArgument when `w` is not on the simplex.
  explicit WeightVector(VectorXd w);

  static WeightVector uniform(std::size_t modalities);
  /// softmax(logits), computed with the max subtracted.
  static WeightVector from_logits(const VectorXd& logits);

  const VectorXd& values() const { return w_; }
  std::size_t size() const { return static_cast<std::size_t>(w_.size()); }
  double operator[](std::size_t m) const { return w_[static_cast<Eigen::Index>(m)]; }

  bool operator==(const WeightVector& other) const { return w_ == other.w_; }

 private:
  VectorXd w_;
};

/// Where each modality lives inside a fused vector.
struct SegmentLayout {
  std::vector<Eigen::Index> offsets;
  std::vector<Eigen::Index> dims;
  Eigen::Index total = 0;

  static SegmentLayout from_dims(std::span<const std::size_t> dims);
  static SegmentLayout from_schema(const ModalitySchema& schema);
  static SegmentLayout single(Eigen::Index dim) { return {{0}, {dim}, dim}; }
  std::size_t segments() const { return dims.size(); }

  bool operator==(const SegmentLayout&) const = default;
};

namespace detail {
template <typename Scalar>
void check_pair(std::span<const Vector<Scalar>> q, std::span<const Vector<Scalar>> o,
                std::size_t weights) {
  if (q.size() != o.size() || q.size() != weights)
    throw Error(ErrorCode::DimensionMismatch, "modality count mismatch");
  for (std::size_t m = 0; m < q.size(); ++m)
    if (q[m].size() != o[m].size())
      throw Error(ErrorCode::DimensionMismatch,
                  "dimension mismatch in modality " + std::to_string(m));
}
}  // namespace detail

/// Sum over modalities of w_m * ||q_m - o_m||^2.
template <typename Scalar>
Scalar weighted_distance(std::span<const Vector<Scalar>> q, std::span<const Vector<Scalar>> o,
                         const WeightVector& w) {
  detail::check_pair(q, o, w.size());
  Scalar total = 0;
  for (std::size_t m = 0; m < q.size(); ++m)
    total += static_cast<Scalar>(w[m]) * (q[m] - o[m]).squaredNorm();
  return total;
}

/// Per-modality squared distances ||q_m - o_m||^2, unweighted.
template <typename Scalar>
Vector<Scalar> modality_distances(std::span<const Vector<Scalar>> q,
                                  std::span<const Vector<Scalar>> o) {
  if (q.size() != o.size()) throw Error(ErrorCode::DimensionMismatch, "modality count mismatch");
  Vector<Scalar> d(static_cast<Eigen::Index>(q.size()));
  for (std::size_t m = 0; m < q.size(); ++m) {
    if (q[m].size() != o[m].size())
      throw Error(ErrorCode::DimensionMismatch,
                  "dimension mismatch in modality " + std::to_string(m));
    d[static_cast<Eigen::Index>(m)] = (q[m] - o[m]).squaredNorm();
  }
  return d;
}

/// Concatenation of sqrt(w_m) * v_m in schema order, so that squared Euclidean
/// distance between fused vectors equals weighted_distance.
template <typename Scalar>
Vector<Scalar> fuse(std::span<const Vector<Scalar>> vectors, const WeightVector& w) {
  if (vectors.size() != w.size())
    throw Error(ErrorCode::DimensionMismatch, "modality count does not match weights");
  Eigen::Index total = 0;
  for (const auto& v : vectors) total += v.size();
  Vector<Scalar> out(total);
  Eigen::Index offset = 0;
  for (std::size_t m = 0; m < vectors.size(); ++m) {
    out.segment(offset, vectors[m].size()) =
        static_cast<Scalar>(std::sqrt(w[m])) * vectors[m];
    offset += vectors[m].size();
  }
  return out;
}

/// All objects of a collection in fused space, one row per vertex.
struct FusedSet {
  RowMatrixXf data;
  SegmentLayout layout;

  std::size_t size() const { return static_cast<std::size_t>(data.rows()); }
  Eigen::Index dim() const { return data.cols(); }
};

FusedSet fuse_all(const EncodedVectors& vectors, const WeightVector& w);

/// Wraps a plain matrix as a single-segment set.
FusedSet single_segment(RowMatrixXf data);

struct TrainingTriplet {
  ModalityVectors<double> query;
  ModalityVectors<double> positive;
  ModalityVectors<double> negative;
};

struct LearningConfig {
  double margin = 0.1;
  double learning_rate = 0.05;
  int epochs = 100;
};

struct LearningResult {
  WeightVector weights;
  VectorXd logits;
  /// loss_history[e] is the loss at the start of epoch e; the last entry is the final loss.
  std::vector<double> loss_history;
};

/// L(theta) = sum over triplets of max(0, margin + D_w(q,pos) - D_w(q,neg)), w = softmax(theta).
double hinge_loss(const VectorXd& logits, std::span<const TrainingTriplet> triplets, double margin);

/// Analytic dL/dtheta through the softmax.
VectorXd loss_gradient(const VectorXd& logits, std::span<const TrainingTriplet> triplets,
                       double margin);

/// Full-batch gradient descent from theta = 0. A step that would raise the loss
/// is halved until it does not. Throws EmptyTrainingSet.
LearningResult learn_weights(std::span<const TrainingTriplet> triplets,
                             const LearningConfig& config = {});

/// JSON-lines: {"q": {modality: [...]}, "pos": {...}, "neg": {...}} per line.
/// Modalities missing from a record are zero vectors.
std::vector<TrainingTriplet> load_triplets(const std::filesystem::path& path,
                                           const ModalitySchema& schema);
std::vector<TrainingTriplet> parse_triplets(std::string_view text, const ModalitySchema& schema);

/// {"modalities": [...], "weights": [...]}
void save_weights(const std::filesystem::path& path, const ModalitySchema& schema,
                  const WeightVector& w);
/// Reorders to `schema` order; throws FormatError on a modality mismatch.
WeightVector load_weights(const std::filesystem::path& path, const ModalitySchema& schema);

}  // namespace mqa
