#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace otna {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using ColArray = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowArray = Eigen::Array<Scalar, 1, Eigen::Dynamic>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// Binary mask storage; 1 = observed, 0 = missing.
using MaskMatrix = Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic>;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input violates a numerical precondition (non-PSD matrix, zero probability, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& what)
{
    if (!condition) throw DomainError(what);
}

inline void require_dims(bool condition, const std::string& what)
{
    if (!condition) throw DimensionError(what);
}

} // namespace otna
