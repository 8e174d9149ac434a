#include "mqa/fusion.hpp"

#include "binary_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace mqa {

namespace {

using nlohmann::json;

// Row t holds ||q_m - pos_m||^2 - ||q_m - neg_m||^2 for each modality m, so that
// D_w(q,pos) - D_w(q,neg) = row_t . w.
Eigen::MatrixXd margin_terms(std::span<const TrainingTriplet> triplets) {
  const auto modalities = triplets.front().query.size();
  Eigen::MatrixXd delta(static_cast<Eigen::Index>(triplets.size()),
                        static_cast<Eigen::Index>(modalities));
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& tr = triplets[t];
    if (tr.query.size() != modalities || tr.positive.size() != modalities ||
        tr.negative.size() != modalities)
      throw Error(ErrorCode::DimensionMismatch,
                  "triplet " + std::to_string(t) + " has the wrong modality count");
    delta.row(static_cast<Eigen::Index>(t)) =
        (modality_distances<double>(tr.query, tr.positive) -
         modality_distances<double>(tr.query, tr.negative))
            .transpose();
  }
  return delta;
}

double loss_from_terms(const Eigen::MatrixXd& delta, const VectorXd& w, double margin) {
  double loss = 0;
  for (Eigen::Index t = 0; t < delta.rows(); ++t)
    loss += std::max(0.0, margin + delta.row(t).dot(w));
  return loss;
}

VectorXd gradient_from_terms(const Eigen::MatrixXd& delta, const VectorXd& w, double margin) {
  VectorXd g = VectorXd::Zero(w.size());
  for (Eigen::Index t = 0; t < delta.rows(); ++t)
    if (margin + delta.row(t).dot(w) > 0) g += delta.row(t).transpose();
  // Softmax Jacobian: dw_i/dtheta_j = w_i (1[i=j] - w_j).
  return (w.array() * (g.array() - w.dot(g))).matrix();
}

constexpr int kMaxHalvings = 30;

void require_triplets(std::span<const TrainingTriplet> triplets) {
  if (triplets.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training triplets");
  if (triplets.front().query.empty())
    throw Error(ErrorCode::EmptyTrainingSet, "triplets carry no modalities");
}

}  // namespace

bool on_simplex(const VectorXd& w, double tol) {
  if (w.size() == 0) return false;
  if ((w.array() < 0).any() || !w.allFinite()) return false;
  return std::abs(w.sum() - 1.0) <= tol;
}

WeightVector::WeightVector(VectorXd w) : w_(std::move(w)) {
  if (!on_simplex(w_))
    throw Error(ErrorCode::InvalidArgument,
                "weights must be non-negative and sum to 1", "weights");
}

WeightVector WeightVector::uniform(std::size_t modalities) {
  if (modalities == 0) throw Error(ErrorCode::InvalidArgument, "no modalities");
  return WeightVector(VectorXd::Constant(static_cast<Eigen::Index>(modalities),
                                         1.0 / static_cast<double>(modalities)));
}

WeightVector WeightVector::from_logits(const VectorXd& logits) {
  VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return WeightVector(e / e.sum());
}

SegmentLayout SegmentLayout::from_dims(std::span<const std::size_t> dims) {
  SegmentLayout layout;
  for (auto d : dims) {
    layout.offsets.push_back(layout.total);
    layout.dims.push_back(static_cast<Eigen::Index>(d));
    layout.total += static_cast<Eigen::Index>(d);
  }
  return layout;
}

SegmentLayout SegmentLayout::from_schema(const ModalitySchema& schema) {
  std::vector<std::size_t> dims;
  for (const auto& m : schema) dims.push_back(m.dim);
  return from_dims(dims);
}

FusedSet fuse_all(const EncodedVectors& vectors, const WeightVector& w) {
  if (vectors.modality_count() != w.size())
    throw Error(ErrorCode::DimensionMismatch, "modality count does not match weights");
  std::vector<std::size_t> dims;
  for (const auto& m : vectors.per_modality) dims.push_back(static_cast<std::size_t>(m.cols()));
  FusedSet out;
  out.layout = SegmentLayout::from_dims(dims);
  out.data.resize(static_cast<Eigen::Index>(vectors.size()), out.layout.total);
  for (std::size_t m = 0; m < dims.size(); ++m)
    out.data.middleCols(out.layout.offsets[m], out.layout.dims[m]) =
        static_cast<float>(std::sqrt(w[m])) * vectors.per_modality[m];
  return out;
}

FusedSet single_segment(RowMatrixXf data) {
  FusedSet out;
  out.layout = SegmentLayout::single(data.cols());
  out.data = std::move(data);
  return out;
}

double hinge_loss(const VectorXd& logits, std::span<const TrainingTriplet> triplets,
                  double margin) {
  require_triplets(triplets);
  return loss_from_terms(margin_terms(triplets), WeightVector::from_logits(logits).values(),
                         margin);
}

VectorXd loss_gradient(const VectorXd& logits, std::span<const TrainingTriplet> triplets,
                       double margin) {
  require_triplets(triplets);
  return gradient_from_terms(margin_terms(triplets), WeightVector::from_logits(logits).values(),
                             margin);
}

LearningResult learn_weights(std::span<const TrainingTriplet> triplets,
                             const LearningConfig& config) {
  require_triplets(triplets);
  const auto delta = margin_terms(triplets);
  VectorXd theta = VectorXd::Zero(delta.cols());

  LearningResult out;
  out.loss_history.reserve(static_cast<std::size_t>(config.epochs) + 1);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const VectorXd w = WeightVector::from_logits(theta).values();
    const double loss = loss_from_terms(delta, w, config.margin);
    out.loss_history.push_back(loss);
    const VectorXd grad = gradient_from_terms(delta, w, config.margin);
    // The hinge is not smooth, so a full step can overshoot; halve it until the
    // loss does not rise, and stand still if no step helps.
    double step = config.learning_rate;
    for (int halving = 0; halving < kMaxHalvings; ++halving, step *= 0.5) {
      VectorXd next = theta - step * grad;
      if (loss_from_terms(delta, WeightVector::from_logits(next).values(), config.margin) <= loss) {
        theta = std::move(next);
        break;
      }
    }
  }
  out.weights = WeightVector::from_logits(theta);
  out.logits = theta;
  out.loss_history.push_back(loss_from_terms(delta, out.weights.values(), config.margin));
  return out;
}

std::vector<TrainingTriplet> parse_triplets(std::string_view text, const ModalitySchema& schema) {
  std::vector<TrainingTriplet> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto read_side = [&](const json& record, const char* key) {
    ModalityVectors<double> side;
    for (const auto& m : schema) side.push_back(VectorXd::Zero(static_cast<Eigen::Index>(m.dim)));
    auto it = record.find(key);
    if (it == record.end() || !it->is_object())
      throw Error(ErrorCode::ParseError, "triplets line " + std::to_string(line_no) +
                                             ": missing object '" + key + "'");
    for (const auto& [modality, values] : it->items()) {
      auto m = std::find_if(schema.begin(), schema.end(),
                            [&](const ModalitySpec& s) { return s.name == modality; });
      if (m == schema.end())
        throw Error(ErrorCode::SchemaViolation, "triplets line " + std::to_string(line_no) +
                                                    ": unknown modality '" + modality + "'");
      auto vec = values.get<std::vector<double>>();
      if (vec.size() != m->dim)
        throw Error(ErrorCode::DimensionMismatch, "triplets line " + std::to_string(line_no) +
                                                      ": modality '" + modality +
                                                      "' has the wrong dimension");
      side[static_cast<std::size_t>(m - schema.begin())] =
          Eigen::Map<const VectorXd>(vec.data(), static_cast<Eigen::Index>(vec.size()));
    }
    return side;
  };

  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() : eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      auto record = json::parse(line);
      out.push_back({read_side(record, "q"), read_side(record, "pos"), read_side(record, "neg")});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError,
                  "triplets line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TrainingTriplet> load_triplets(const std::filesystem::path& path,
                                           const ModalitySchema& schema) {
  return parse_triplets(detail::read_file(path), schema);
}

void save_weights(const std::filesystem::path& path, const ModalitySchema& schema,
                  const WeightVector& w) {
  if (schema.size() != w.size())
    throw Error(ErrorCode::DimensionMismatch, "weights do not match the modality schema");
  json doc;
  doc["modalities"] = json::array();
  doc["weights"] = json::array();
  for (std::size_t m = 0; m < schema.size(); ++m) {
    doc["modalities"].push_back(schema[m].name);
    doc["weights"].push_back(w[m]);
  }
  detail::write_file(path, doc.dump(2) + "\n");
}

WeightVector load_weights(const std::filesystem::path& path, const ModalitySchema& schema) {
  std::vector<std::string> names;
  std::vector<double> values;
  try {
    auto doc = json::parse(detail::read_file(path));
    names = doc.at("modalities").get<std::vector<std::string>>();
    values = doc.at("weights").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  if (names.size() != values.size() || names.size() != schema.size())
    throw Error(ErrorCode::FormatError, path.string() + ": modality count mismatch");
  VectorXd w(static_cast<Eigen::Index>(schema.size()));
  for (std::size_t m = 0; m < schema.size(); ++m) {
    auto it = std::find(names.begin(), names.end(), schema[m].name);
    if (it == names.end())
      throw Error(ErrorCode::FormatError,
                  path.string() + ": missing weight for modality '" + schema[m].name + "'");
    w[static_cast<Eigen::Index>(m)] = values[static_cast<std::size_t>(it - names.begin())];
  }
  if (!on_simplex(w))
    throw Error(ErrorCode::FormatError, path.string() + ": weights are not on the simplex");
  return WeightVector(std::move(w));
}

}  // namespace mqa
