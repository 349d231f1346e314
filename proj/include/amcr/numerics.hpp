#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "amcr/errors.hpp"
#include "amcr/types.hpp"

// Shared vector/grid arithmetic. Everything here is a pure function on
// immutable inputs; embedding vectors are expected unit-norm at module
// boundaries so cosine reduces to an inner product.
namespace amcr {

// Cosine similarity, clamped to [-1, 1] so rounding noise cannot leak past
// the bounded-similarity assumption downstream.
template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
    if (a.size() != b.size())
        throw DimensionMismatch("cosine: dimension mismatch " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
    const double na = a.template cast<double>().norm();
    const double nb = b.template cast<double>().norm();
    if (na == 0.0 || nb == 0.0)
        throw ZeroNormError("cosine: zero-norm vector");
    const double c = a.template cast<double>().dot(b.template cast<double>()) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

// (1/beta) * log sum_j exp(beta * sims_j), stabilized by shifting out the max.
// Exact for a single element; tends to max(sims) as beta grows.
template <typename Derived>
double lse_pool(const Eigen::DenseBase<Derived>& sims, double beta) {
    if (sims.size() == 0)
        throw ContractViolation("lse_pool: empty similarity sequence");
    if (!(beta > 0.0))
        throw ContractViolation("lse_pool: beta must be > 0");
    const double m = sims.template cast<double>().maxCoeff();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < sims.size(); ++i)
        acc += std::exp(beta * (static_cast<double>(sims.derived()(i)) - m));
    return m + std::log(acc) / beta;
}

inline double lse_pool(const std::vector<double>& sims, double beta) {
    return lse_pool(Eigen::Map<const VectorXd>(sims.data(), static_cast<Eigen::Index>(sims.size())), beta);
}

// Scales to unit Euclidean norm, preserving direction.
template <typename Derived>
VectorXd normalize_unit(const Eigen::MatrixBase<Derived>& v) {
    const double n = v.template cast<double>().norm();
    if (n == 0.0)
        throw ZeroNormError("normalize_unit: zero vector");
    return v.template cast<double>() / n;
}

// Affine map onto [0, 1]. A constant field maps to all zeros: a featureless
// map signals "no salient region" and triggers the uniform-weight fallback.
inline ScalarField normalize_range01(const ScalarField& field) {
    require_finite(field, "normalize_range01");
    const double lo = field.minCoeff();
    const double hi = field.maxCoeff();
    if (hi == lo) return ScalarField::Zero(field.rows(), field.cols());
    return (field - lo) / (hi - lo);
}

}  // namespace amcr
