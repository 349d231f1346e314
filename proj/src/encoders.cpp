#include "amcr/encoders.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "amcr/numerics.hpp"
#include "amcr/text_util.hpp"

namespace amcr {

VectorXd TextEncoder::embed_one(const std::string& text) {
    std::vector<std::string> one{text};
    auto out = embed(std::span<const std::string>(one));
    if (out.size() != 1)
        throw ProtocolError("encoder returned " + std::to_string(out.size()) +
                            " vectors for 1 input");
    return std::move(out.front());
}

void PatchEmbeddings::validate() const {
    if (grid_rows <= 0 || grid_cols <= 0)
        throw ValidationError("patch embeddings: non-positive grid shape");
    if (rows.rows() != static_cast<Eigen::Index>(grid_rows) * grid_cols)
        throw ValidationError("patch embeddings: " + std::to_string(rows.rows()) +
                              " rows for a " + std::to_string(grid_rows) + "x" +
                              std::to_string(grid_cols) + " grid");
    if (rows.cols() < 1) throw ValidationError("patch embeddings: empty dim");
    if (!rows.allFinite()) throw ValidationError("patch embeddings: non-finite entries");
    for (Eigen::Index p = 0; p < rows.rows(); ++p) {
        double n = rows.row(p).norm();
        if (std::abs(n - 1.0) > 1e-6)
            throw ValidationError("patch embeddings: row " + std::to_string(p) +
                                  " has norm " + std::to_string(n));
    }
}

// ---------------------------------------------------------------------------
// SeededStream

SeededStream::SeededStream(std::uint64_t seed) : state_(seed) {}

std::uint64_t SeededStream::next_bits() {
    // splitmix64: full-period counter hash, stable across platforms.
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double SeededStream::uniform() {
    return static_cast<double>(next_bits() >> 11) * 0x1.0p-53;
}

double SeededStream::gaussian() {
    // Box-Muller on raw bits; u1 shifted into (0,1] so log stays finite.
    double u1 = (static_cast<double>(next_bits() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(next_bits() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

VectorXd SeededStream::gaussian_vector(Eigen::Index n) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
}

std::uint64_t SeededStream::mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t SeededStream::hash_string(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// DeterministicTestEncoder

namespace {

// Built-in fixture vocabulary. Axes 0..9: 0 = the cap-and-overalls corpus
// direction, 3 = the bitten-apple corpus direction, 5 = the plumber corpus
// direction, 7 and 8 = further corpus directions, the rest are free axes
// that give related phrases partial overlap with a corpus direction.
const std::map<std::string, DeterministicTestEncoder::Planted>& builtin_planted() {
    static const std::map<std::string, DeterministicTestEncoder::Planted> table = {
        {"red cap and blue overalls", {{0, 1.0}}},
        {"minimal bitten apple logo with leaf", {{3, 1.0}}},
        {"mario the plumber", {{5, 1.0}}},
        {"mickey mouse", {{7, 1.0}}},
        {"iron man armor", {{8, 1.0}}},

        {"red cap", {{0, 0.90}, {1, 0.43589}}},
        {"blue overalls", {{0, 0.88}, {2, 0.47497}}},
        {"bitten apple logo", {{3, 0.93}, {4, 0.36755}}},
        {"plumber", {{5, 0.52}, {6, 0.85417}}},
        {"cheerful plumber", {{5, 0.55}, {6, 0.83516}}},

        {"neutral-colored protective cap", {{0, 0.10}, {1, 0.55}, {9, 0.82916}}},
        {"plain work hat", {{0, 0.14}, {1, 0.40}, {9, 0.90576}}},
        {"plain work uniform", {{0, 0.08}, {2, 0.52}, {9, 0.85}}},
        {"work uniform", {{0, 0.12}, {2, 0.42}, {9, 0.899}}},
        {"smiling technician", {{5, 0.10}, {6, 0.62}, {9, 0.77821}}},
        {"technician", {{5, 0.12}, {6, 0.60}, {9, 0.79095}}},
        {"fruit-shaped logo with a clean silhouette", {{3, 0.15}, {4, 0.45}, {9, 0.88034}}},
        {"simple round emblem", {{3, 0.05}, {4, 0.30}, {9, 0.95263}}},
    };
    return table;
}

}  // namespace

DeterministicTestEncoder::DeterministicTestEncoder(std::uint64_t seed, Eigen::Index dim,
                                                   std::map<std::string, Planted> extra_planted)
    : seed_(seed), dim_(dim), planted_(builtin_planted()) {
    if (dim_ < kPlantedDims + 8)
        throw ContractViolation("test encoder dim must be at least " +
                                std::to_string(kPlantedDims + 8) + ", got " +
                                std::to_string(dim_));
    for (auto& [key, coeffs] : extra_planted) planted_[fold(key)] = std::move(coeffs);
    for (const auto& [key, coeffs] : planted_) {
        if (coeffs.empty())
            throw ContractViolation("planted entry '" + key + "' has no coefficients");
        for (const auto& [axis, c] : coeffs) {
            (void)c;
            if (axis < 0 || axis >= kPlantedDims)
                throw ContractViolation("planted entry '" + key + "' uses axis " +
                                        std::to_string(axis) + " outside [0, " +
                                        std::to_string(kPlantedDims) + ")");
        }
    }
}

bool DeterministicTestEncoder::is_planted(const std::string& text) const {
    return planted_.count(fold(text)) > 0;
}

VectorXd DeterministicTestEncoder::embed_folded(const std::string& key) const {
    VectorXd v = VectorXd::Zero(dim_);
    auto it = planted_.find(key);
    if (it != planted_.end()) {
        for (const auto& [axis, c] : it->second) v[axis] += c;
    } else {
        // Hash into the non-planted tail so unknown strings are exactly
        // orthogonal to every planted phrase.
        std::uint64_t h = SeededStream::mix(seed_, SeededStream::hash_string(key));
        for (std::uint64_t attempt = 0;; ++attempt) {
            SeededStream rng(SeededStream::mix(h, attempt));
            for (Eigen::Index i = kPlantedDims; i < dim_; ++i) v[i] = rng.gaussian();
            if (v.norm() > 1e-9) break;
        }
    }
    return normalize_unit(v);
}

std::vector<VectorXd> DeterministicTestEncoder::embed(std::span<const std::string> texts) {
    std::vector<VectorXd> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_folded(fold(t)));
    return out;
}

std::string DeterministicTestEncoder::id() const {
    std::ostringstream os;
    os << "det-test/s" << seed_ << "/d" << dim_;
    return os.str();
}

// ---------------------------------------------------------------------------
// LinearPatchEncoder

LinearPatchEncoder::LinearPatchEncoder(std::uint64_t seed, Eigen::Index dim)
    : seed_(seed), dim_(dim) {
    if (dim_ < 1) throw ContractViolation("patch encoder dim must be positive");
}

const MatrixXd& LinearPatchEncoder::projection_for(Eigen::Index block_px) {
    auto it = projections_.find(block_px);
    if (it != projections_.end()) return it->second;
    SeededStream rng(SeededStream::mix(seed_, SeededStream::mix(0x50524F4Aull,
                                                                static_cast<std::uint64_t>(block_px))));
    MatrixXd phi(dim_, block_px);
    double scale = 1.0 / std::sqrt(static_cast<double>(block_px));
    for (Eigen::Index r = 0; r < dim_; ++r)
        for (Eigen::Index c = 0; c < block_px; ++c) phi(r, c) = scale * rng.gaussian();
    return projections_.emplace(block_px, std::move(phi)).first->second;
}

VectorXd LinearPatchEncoder::patch_block(const GridD& latent, int grid_rows, int grid_cols,
                                         int p) {
    if (grid_rows < 1 || grid_cols < 1)
        throw DimensionMismatch("patch grid must be at least 1x1");
    if (latent.rows() % grid_rows != 0 || latent.cols() % grid_cols != 0)
        throw DimensionMismatch("latent " + std::to_string(latent.rows()) + "x" +
                                std::to_string(latent.cols()) +
                                " does not tile into a " + std::to_string(grid_rows) +
                                "x" + std::to_string(grid_cols) + " patch grid");
    if (p < 0 || p >= grid_rows * grid_cols)
        throw DimensionMismatch("patch index " + std::to_string(p) + " out of range");
    Eigen::Index ph = latent.rows() / grid_rows;
    Eigen::Index pw = latent.cols() / grid_cols;
    Eigen::Index pr = p / grid_cols;
    Eigen::Index pc = p % grid_cols;
    GridD block = latent.block(pr * ph, pc * pw, ph, pw);
    return flatten(block);
}

PatchEmbeddings LinearPatchEncoder::embed_patches(const GridD& latent, int grid_rows,
                                                  int grid_cols) {
    require_finite(latent, "patch encoder input latent");
    Eigen::Index block_px =
        (latent.rows() / grid_rows) * (latent.cols() / grid_cols);
    // patch_block re-checks divisibility; trigger it for patch 0 first so the
    // error mentions the tiling rather than a projection size.
    VectorXd first = patch_block(latent, grid_rows, grid_cols, 0);
    const MatrixXd& phi = projection_for(block_px);

    PatchEmbeddings pe;
    pe.grid_rows = grid_rows;
    pe.grid_cols = grid_cols;
    pe.rows.resize(static_cast<Eigen::Index>(grid_rows) * grid_cols, dim_);
    for (int p = 0; p < grid_rows * grid_cols; ++p) {
        VectorXd block = (p == 0) ? first : patch_block(latent, grid_rows, grid_cols, p);
        VectorXd y = phi * block;
        double n = y.norm();
        if (n < 1e-12)
            throw ZeroNormError("patch " + std::to_string(p) +
                                " projects to a zero vector; latent block is degenerate");
        pe.rows.row(p) = y / n;
    }
    return pe;
}

std::string LinearPatchEncoder::id() const {
    std::ostringstream os;
    os << "linear-patch/s" << seed_ << "/d" << dim_;
    return os.str();
}

}  // namespace amcr
