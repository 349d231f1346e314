#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "amcr/errors.hpp"

namespace amcr {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Spatial grids are row-major so on-disk layout equals memory layout.
template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorXd = Vector<double>;
using MatrixXd = Matrix<double>;
using GridD = Grid<double>;

// A scalar field on a width x height grid: rows() = height, cols() = width.
using ScalarField = GridD;

inline void require_finite(const ScalarField& field, const std::string& context) {
    if (!field.isFinite().all())
        throw NumericError(context + ": non-finite entry in scalar field");
}

inline void require_finite(const VectorXd& v, const std::string& context) {
    if (!v.array().isFinite().all())
        throw NumericError(context + ": non-finite entry in vector");
}

// Row-major flatten; the inverse of unflatten for matching shapes.
inline VectorXd flatten(const GridD& grid) {
    return Eigen::Map<const VectorXd>(grid.data(), grid.size());
}

inline GridD unflatten(const VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols)
        throw DimensionMismatch("unflatten: " + std::to_string(v.size()) + " values into " +
                                std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    GridD grid(rows, cols);
    Eigen::Map<VectorXd>(grid.data(), grid.size()) = v;
    return grid;
}

}  // namespace amcr
