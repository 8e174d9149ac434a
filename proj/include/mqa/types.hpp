#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace mqa {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorXf = Vector<float>;
using VectorXd = Vector<double>;
using RowMatrixXf = RowMatrix<float>;

/// Dense 0-based index of an object inside a knowledge base; also its graph vertex.
using VertexId = std::uint32_t;

/// One vector per modality, in schema order.
template <typename Scalar>
using ModalityVectors = std::vector<Vector<Scalar>>;

}  // namespace mqa
