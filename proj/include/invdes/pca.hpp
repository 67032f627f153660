#pragma once

#include <Eigen/Dense>

#include <vector>

#include "invdes/checkpoint.hpp"
#include "invdes/error.hpp"

namespace invdes {

/// Principal component model of flattened images: mean, M orthonormal
/// component rows, and the explained variances in nonincreasing order.
struct PcaModel {
    Eigen::VectorXd mean;        // [D]
    Eigen::MatrixXd components;  // [M, D], orthonormal rows
    Eigen::VectorXd variances;   // [M], nonincreasing

    Eigen::Index dimension() const { return mean.size(); }
    Eigen::Index n_components() const { return components.rows(); }

    std::vector<NamedArray> named_arrays() const;
    static PcaModel from_arrays(const std::vector<NamedArray>& arrays);
};

/// Top-M principal directions of the centered rows of `data` [n, D].
/// Throws when M exceeds the numerical rank of the centered data.
PcaModel pca_fit(const Eigen::MatrixXd& data, Eigen::Index M);

/// Projection of the centered image onto the components.
Eigen::VectorXd pca_transform(const PcaModel& model, const Eigen::VectorXd& image);

/// mean + components^T * coefficients. Inverse of transform on the span.
Eigen::VectorXd pca_inverse(const PcaModel& model, const Eigen::VectorXd& coefficients);

}  // namespace invdes
