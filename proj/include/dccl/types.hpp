#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dccl {

/// Row-major dense matrix: one instance per row.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using RowVectorXd = RowVector<double>;

using Index = Eigen::Index;
using ClassId = std::int32_t;

/// Class label of one instance; std::nullopt marks an unlabeled instance.
using Label = std::optional<ClassId>;
inline constexpr Label kUnlabeled = std::nullopt;

/// Label value used for unlabeled rows in files.
inline constexpr ClassId kUnlabeledFileValue = -1;

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (bad header, unparsable token).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Shapes or sizes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Arguments outside an operation's domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace dccl
