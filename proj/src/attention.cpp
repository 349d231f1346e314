#include "amcr/attention.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "amcr/numerics.hpp"

namespace amcr {

void AttentionStack::validate() const {
    if (layers.empty()) throw ContractViolation("attention stack has no layers");
    if (token_labels.empty()) throw ContractViolation("attention stack has no tokens");
    const auto L = static_cast<Eigen::Index>(token_labels.size());
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& layer = layers[li];
        const std::string where = "attention layer " + std::to_string(li);
        if (layer.heads.empty()) throw ContractViolation(where + " has no heads");
        if (layer.rows < 1 || layer.cols < 1)
            throw ValidationError(where + " has an empty spatial grid");
        for (const auto& head : layer.heads) {
            if (head.rows() != static_cast<Eigen::Index>(layer.rows) * layer.cols ||
                head.cols() != L)
                throw ValidationError(where + " head shape does not match grid and tokens");
            if (!head.array().isFinite().all())
                throw NumericError(where + " contains non-finite attention");
            if ((head.array() < 0.0).any())
                throw ValidationError(where + " contains negative attention");
            for (Eigen::Index r = 0; r < head.rows(); ++r)
                if (head.row(r).sum() > 1.0 + 1e-6)
                    throw ValidationError(where + " row " + std::to_string(r) +
                                          " sums above 1");
        }
    }
}

void SoftMask::validate() const {
    require_finite(field, "soft mask");
    if (field.size() == 0) throw ContractViolation("soft mask is empty");
    if ((field < 0.0).any() || (field > 1.0).any())
        throw ValidationError("soft mask values must lie in [0, 1]");
}

MatrixXd head_average(const AttentionLayer& layer) {
    if (layer.heads.empty()) throw ContractViolation("head_average: layer has no heads");
    MatrixXd mean = layer.heads[0];
    for (std::size_t h = 1; h < layer.heads.size(); ++h) {
        if (layer.heads[h].rows() != mean.rows() || layer.heads[h].cols() != mean.cols())
            throw DimensionMismatch("head_average: heads disagree on shape");
        mean += layer.heads[h];
    }
    return mean / static_cast<double>(layer.heads.size());
}

ScalarField token_reduce_max(const MatrixXd& map, int rows, int cols,
                             const std::optional<std::vector<int>>& tokens) {
    if (map.cols() < 1) throw ContractViolation("token_reduce_max: no tokens");
    if (map.rows() != static_cast<Eigen::Index>(rows) * cols)
        throw DimensionMismatch("token_reduce_max: map rows do not match the grid");
    VectorXd per_patch;
    if (!tokens.has_value()) {
        per_patch = map.rowwise().maxCoeff();
    } else {
        if (tokens->empty())
            throw ContractViolation("token_reduce_max: empty token subset");
        per_patch = VectorXd::Constant(map.rows(),
                                       -std::numeric_limits<double>::infinity());
        for (int tok : *tokens) {
            if (tok < 0 || tok >= map.cols())
                throw ContractViolation("token_reduce_max: token index " +
                                        std::to_string(tok) + " out of range");
            per_patch = per_patch.cwiseMax(map.col(tok));
        }
    }
    return unflatten(per_patch, rows, cols);
}

ScalarField bilinear_resample(const ScalarField& field, Eigen::Index out_rows,
                              Eigen::Index out_cols) {
    require_finite(field, "bilinear_resample");
    if (field.rows() < 1 || field.cols() < 1)
        throw ContractViolation("bilinear_resample: empty input");
    if (out_rows < 1 || out_cols < 1)
        throw ContractViolation("bilinear_resample: empty output shape");

    auto src_coord = [](Eigen::Index i, Eigen::Index out, Eigen::Index in) {
        if (out == 1) return (static_cast<double>(in) - 1.0) / 2.0;
        return static_cast<double>(i) * (static_cast<double>(in) - 1.0) /
               (static_cast<double>(out) - 1.0);
    };

    ScalarField out(out_rows, out_cols);
    for (Eigen::Index i = 0; i < out_rows; ++i) {
        double y = src_coord(i, out_rows, field.rows());
        auto y0 = static_cast<Eigen::Index>(std::floor(y));
        Eigen::Index y1 = std::min(y0 + 1, field.rows() - 1);
        double fy = y - static_cast<double>(y0);
        for (Eigen::Index j = 0; j < out_cols; ++j) {
            double x = src_coord(j, out_cols, field.cols());
            auto x0 = static_cast<Eigen::Index>(std::floor(x));
            Eigen::Index x1 = std::min(x0 + 1, field.cols() - 1);
            double fx = x - static_cast<double>(x0);
            out(i, j) = (1.0 - fy) * ((1.0 - fx) * field(y0, x0) + fx * field(y0, x1)) +
                        fy * ((1.0 - fx) * field(y1, x0) + fx * field(y1, x1));
        }
    }
    return out;
}

ScalarField layer_aggregate(const std::vector<ScalarField>& fields,
                            const std::optional<std::vector<double>>& weights) {
    if (fields.empty()) throw ContractViolation("layer_aggregate: no fields");
    std::vector<double> w;
    if (weights.has_value()) {
        if (weights->size() != fields.size())
            throw ContractViolation("layer_aggregate: weight count does not match layers");
        double total = 0.0;
        for (double x : *weights) {
            if (x < 0.0 || !std::isfinite(x))
                throw ContractViolation("layer_aggregate: weights must be finite and >= 0");
            total += x;
        }
        if (total <= 0.0)
            throw ContractViolation("layer_aggregate: weights must not all be zero");
        w = *weights;
    } else {
        w.assign(fields.size(), 1.0);
    }

    Eigen::Index target_rows = 0, target_cols = 0;
    for (const auto& f : fields) {
        require_finite(f, "layer_aggregate");
        target_rows = std::max(target_rows, f.rows());
        target_cols = std::max(target_cols, f.cols());
    }

    ScalarField acc = ScalarField::Zero(target_rows, target_cols);
    double total_w = 0.0;
    for (std::size_t l = 0; l < fields.size(); ++l) {
        acc += w[l] * bilinear_resample(fields[l], target_rows, target_cols);
        total_w += w[l];
    }
    return acc / total_w;
}

SoftMask build_soft_mask(const AttentionStack& stack,
                         const std::optional<std::vector<double>>& layer_weights,
                         const std::optional<std::vector<int>>& tokens) {
    stack.validate();
    std::vector<ScalarField> fields;
    fields.reserve(stack.layers.size());
    for (const auto& layer : stack.layers)
        fields.push_back(
            token_reduce_max(head_average(layer), layer.rows, layer.cols, tokens));
    SoftMask mask;
    mask.field = normalize_range01(layer_aggregate(fields, layer_weights));
    mask.step = stack.step;
    mask.validate();
    return mask;
}

void export_mask(const SoftMask& mask, const std::filesystem::path& path) {
    mask.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << mask.field.cols() << " " << mask.field.rows() << "\n255\n";
    for (Eigen::Index i = 0; i < mask.field.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.field.cols(); ++j) {
            auto byte = static_cast<unsigned char>(
                std::floor(255.0 * mask.field(i, j) + 0.5));
            out.put(static_cast<char>(byte));
        }
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace amcr
