#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "amcr/types.hpp"

namespace amcr {

// Cross-attention maps captured at one denoising step for one layer: each
// head is (rows*cols) x L, rows attention distributions from flattened
// spatial patches (row-major) to L text tokens.
struct AttentionLayer {
    std::vector<MatrixXd> heads;
    int rows = 0;
    int cols = 0;
};

struct AttentionStack {
    std::vector<AttentionLayer> layers;
    std::vector<std::string> token_labels;
    int step = 0;

    int token_count() const { return static_cast<int>(token_labels.size()); }
    void validate() const;
};

// Region-of-interest mask on the finest layer grid, values in [0, 1].
struct SoftMask {
    ScalarField field;
    int step = 0;

    void validate() const;
};

// Elementwise mean over a layer's heads.
MatrixXd head_average(const AttentionLayer& layer);

// Per-patch max over tokens, reshaped to the layer grid. A token subset
// restricts the reduction (per-token inspection); nullopt means all tokens.
ScalarField token_reduce_max(const MatrixXd& map, int rows, int cols,
                             const std::optional<std::vector<int>>& tokens = {});

// Align-corners bilinear resampling: output index i samples input coordinate
// i*(in-1)/(out-1); a single output row or column samples the input center.
ScalarField bilinear_resample(const ScalarField& field, Eigen::Index out_rows,
                              Eigen::Index out_cols);

// Resample every field to the finest grid, then weighted mean (uniform when
// weights are absent).
ScalarField layer_aggregate(const std::vector<ScalarField>& fields,
                            const std::optional<std::vector<double>>& weights = {});

// head mean -> per-patch token max -> cross-layer aggregate -> [0,1]
// normalization. A constant aggregate yields the all-zero mask.
SoftMask build_soft_mask(const AttentionStack& stack,
                         const std::optional<std::vector<double>>& layer_weights = {},
                         const std::optional<std::vector<int>>& tokens = {});

// 8-bit grayscale PGM (P5), pixel = round-half-up(255 * m).
void export_mask(const SoftMask& mask, const std::filesystem::path& path);

}  // namespace amcr
