// Regenerates the committed fixtures/ tree. Every artifact is a closed-form
// function of fixed constants, so reruns are byte-identical.

#include "amcr/io.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using namespace amcr;

namespace {

GridD wave_grid(Eigen::Index rows, Eigen::Index cols, double phase) {
    GridD g(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            g(r, c) = 0.6 * std::sin(0.7 * r + 1.3 * c + phase) +
                      0.4 * std::cos(0.9 * r - 0.5 * c + 2.0 * phase);
    return g;
}

const std::string kCorpus =
    R"({"phrase": "red cap and blue overalls", "tag": "character"})" "\n"
    R"({"phrase": "minimal bitten apple logo with leaf", "tag": "logo"})" "\n"
    R"({"phrase": "mario the plumber", "tag": "character"})" "\n"
    R"({"phrase": "mickey mouse", "tag": "character"})" "\n"
    R"({"phrase": "iron man armor", "tag": "character"})" "\n";

const std::string kCandidates =
    R"({"kind": "any", "phrase": "red cap", "candidates": ["neutral-colored protective cap", "plain work hat"]})" "\n"
    R"({"kind": "any", "phrase": "blue overalls", "candidates": ["plain work uniform", "work uniform"]})" "\n"
    R"({"kind": "any", "phrase": "cheerful plumber", "candidates": ["smiling technician", "technician"]})" "\n"
    R"({"kind": "any", "phrase": "plumber", "candidates": ["technician", "smiling technician"]})" "\n"
    R"({"kind": "any", "phrase": "bitten apple logo", "candidates": ["fruit-shaped logo with a clean silhouette", "simple round emblem"]})" "\n";

const std::string kPrompts =
    "A cheerful plumber fixing a sink, red cap, blue overalls, photo.\n"
    "A minimal bitten apple logo with a single leaf at an angled corner, "
    "flat design.\n";

const std::string kCalibrationPairs =
    R"({"label": "clean", "score": 0.05})" "\n"
    R"({"label": "clean", "score": 0.15})" "\n"
    R"({"label": "clean", "score": 0.3})" "\n"
    R"({"label": "infringing", "score": 0.42})" "\n"
    R"({"label": "clean", "score": 0.48})" "\n"
    R"({"label": "infringing", "score": 0.55})" "\n"
    R"({"label": "clean", "score": 0.63})" "\n"
    R"({"label": "infringing", "score": 0.71})" "\n"
    R"({"label": "infringing", "score": 0.84})" "\n"
    R"({"label": "infringing", "score": 0.92})" "\n";

// Two layers at different grid resolutions, two heads each, rows normalized
// to attention distributions over the three tokens.
AttentionStack shipped_stack() {
    AttentionStack stack;
    stack.step = 5;
    stack.token_labels = {"plumber", "red cap", "logo"};
    const int grids[2] = {4, 8};
    for (int layer_index = 0; layer_index < 2; ++layer_index) {
        AttentionLayer layer;
        layer.rows = grids[layer_index];
        layer.cols = grids[layer_index];
        const Eigen::Index patches =
            static_cast<Eigen::Index>(layer.rows) * layer.cols;
        for (int head = 0; head < 2; ++head) {
            MatrixXd m(patches, 3);
            for (Eigen::Index p = 0; p < patches; ++p) {
                for (Eigen::Index tok = 0; tok < 3; ++tok) {
                    const double raw =
                        std::sin(0.31 * static_cast<double>(p) +
                                 1.7 * static_cast<double>(tok) +
                                 0.9 * head + 0.4 * layer_index);
                    m(p, tok) = 1.0 + 0.8 * raw;  // positive before normalizing
                }
                m.row(p) /= m.row(p).sum();
            }
            layer.heads.push_back(std::move(m));
        }
        stack.layers.push_back(std::move(layer));
    }
    stack.validate();
    return stack;
}

std::map<int, SoftMask> shipped_masks(Eigen::Index rows, Eigen::Index cols) {
    std::map<int, SoftMask> masks;
    for (int t : {1, 4, 8}) {
        SoftMask mask;
        mask.step = t;
        mask.field = ScalarField(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                mask.field(r, c) =
                    0.5 + 0.5 * std::sin(0.5 * r + 0.8 * c + 0.3 * t);
        mask.validate();
        masks.emplace(t, std::move(mask));
    }
    return masks;
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("fixtures");
    fs::create_directories(root / "plumber" / "latents");
    fs::create_directories(root / "plumber" / "attention");
    fs::create_directories(root / "plumber" / "patches");
    fs::create_directories(root / "trajectory");

    write_text_file(root / "corpus.jsonl", kCorpus);
    write_text_file(root / "candidates.jsonl", kCandidates);
    write_text_file(root / "calibration_pairs.jsonl", kCalibrationPairs);

    write_text_file(root / "plumber" / "prompts.txt", kPrompts);
    write_text_file(root / "plumber" / "corpus.jsonl", kCorpus);

    LatentState plumber_ref;
    plumber_ref.grid = wave_grid(8, 8, 0.25);
    save_latent(plumber_ref, root / "plumber" / "latents" / "ref.lat");

    save_attention(shipped_stack(), root / "plumber" / "attention" / "step5.att");

    LinearPatchEncoder patch_encoder(0, 64);
    save_patch_embeddings(patch_encoder.embed_patches(plumber_ref.grid, 4, 4),
                          root / "plumber" / "patches" / "gen.pem");

    LatentState traj_ref;
    traj_ref.grid = wave_grid(8, 8, 1.1);
    save_latent(traj_ref, root / "trajectory" / "ref.lat");
    LatentState traj_gen;
    traj_gen.grid = wave_grid(8, 8, 1.8);
    save_latent(traj_gen, root / "trajectory" / "gen.lat");
    save_masks(shipped_masks(8, 8), root / "trajectory" / "masks.msk");

    save_mitigation_fixture(synthetic_mitigation_fixture(),
                            root / "mitigation");

    std::cout << "fixtures written under " << root.string() << "\n";
    return 0;
}
