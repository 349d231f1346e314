#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amcr/errors.hpp"
#include "amcr/types.hpp"

namespace amcr {

// Text embedding backend. Implementations must be deterministic for a fixed
// id(): the same string always maps to the same unit vector.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;

    // One unit-norm embedding per input string, in order.
    virtual std::vector<VectorXd> embed(std::span<const std::string> texts) = 0;

    virtual std::string id() const = 0;
    virtual Eigen::Index dim() const = 0;
    virtual bool concurrent_safe() const { return false; }

    VectorXd embed_one(const std::string& text);
};

enum class PatchSource { Generated, Reference };

// Per-patch embeddings for one latent at one step. Row p holds the unit
// embedding of patch p in row-major patch order (grid_rows x grid_cols).
struct PatchEmbeddings {
    MatrixXd rows;  // P x dim
    int grid_rows = 0;
    int grid_cols = 0;
    PatchSource source = PatchSource::Generated;

    Eigen::Index count() const { return rows.rows(); }
    Eigen::Index dim() const { return rows.cols(); }
    void validate() const;
};

// Maps a latent grid to patch embeddings on a fixed patch grid.
class ImagePatchEncoder {
public:
    virtual ~ImagePatchEncoder() = default;

    virtual PatchEmbeddings embed_patches(const GridD& latent, int grid_rows,
                                          int grid_cols) = 0;
    virtual std::string id() const = 0;
    virtual Eigen::Index dim() const = 0;
};

// Hermetic text encoder for tests and offline runs. A small planted
// vocabulary occupies dims [0, 16) with hand-picked coefficients so that
// pairwise cosines between fixture phrases are known in closed form; any
// other string hashes to a deterministic unit vector supported on
// dims [16, dim), hence exactly orthogonal to every planted phrase.
class DeterministicTestEncoder : public TextEncoder {
public:
    using Planted = std::vector<std::pair<int, double>>;  // (axis, coeff)

    explicit DeterministicTestEncoder(std::uint64_t seed = 0, Eigen::Index dim = 64,
                                      std::map<std::string, Planted> extra_planted = {});

    std::vector<VectorXd> embed(std::span<const std::string> texts) override;
    std::string id() const override;
    Eigen::Index dim() const override { return dim_; }
    bool concurrent_safe() const override { return true; }

    static constexpr int kPlantedDims = 16;
    bool is_planted(const std::string& text) const;

private:
    VectorXd embed_folded(const std::string& key) const;

    std::uint64_t seed_;
    Eigen::Index dim_;
    std::map<std::string, Planted> planted_;  // keys folded
};

// Patch encoder backed by a fixed random linear map: each patch block is
// flattened and projected through a seeded matrix shared by all patches of
// the same block size, then unit-normalized. Linearity up to normalization
// keeps its gradients closed-form for the mitigation objective.
class LinearPatchEncoder : public ImagePatchEncoder {
public:
    explicit LinearPatchEncoder(std::uint64_t seed = 0, Eigen::Index dim = 64);

    PatchEmbeddings embed_patches(const GridD& latent, int grid_rows,
                                  int grid_cols) override;
    std::string id() const override;
    Eigen::Index dim() const override { return dim_; }

    // Projection applied to a flattened block of block_px pixels (dim x block_px).
    // Cached; building it is deterministic in (seed, block_px).
    const MatrixXd& projection_for(Eigen::Index block_px);

    // Extracts patch p of a grid_rows x grid_cols tiling as a flattened
    // block (row-major within the block). Latent dims must divide evenly.
    static VectorXd patch_block(const GridD& latent, int grid_rows, int grid_cols, int p);

private:
    std::uint64_t seed_;
    Eigen::Index dim_;
    std::map<Eigen::Index, MatrixXd> projections_;
};

// Deterministic stream of doubles used wherever reproducible noise is
// needed (hash fallback embeddings, projection matrices, latent noise).
// xorshift-style integer core so sequences are identical across platforms.
class SeededStream {
public:
    explicit SeededStream(std::uint64_t seed);

    std::uint64_t next_bits();
    double uniform();                       // [0, 1)
    double gaussian();                      // Box-Muller, no cached spare
    VectorXd gaussian_vector(Eigen::Index n);

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b);
    static std::uint64_t hash_string(const std::string& s);

private:
    std::uint64_t state_;
};

}  // namespace amcr
