#pragma once

#include <filesystem>
#include <vector>

#include "amcr/errors.hpp"

namespace amcr::cli {

struct LabeledPair {
    double score = 0.0;
    bool infringing = false;
};

struct CalibrationResult {
    double tau = 0.0;
    double f_score = 0.0;
    double f_beta = 1.0;
    int true_positives = 0;
    int false_positives = 0;
    int false_negatives = 0;
};

// F_beta-optimal threshold over the observed scores, classifying
// score >= tau as infringing. Ties break toward the larger tau, so the
// result is invariant to input order. Both classes must be present.
// f_beta < 1 favors precision, > 1 favors recall.
CalibrationResult calibrate(const std::vector<LabeledPair>& pairs, double f_beta = 1.0);

// Line-delimited {"score": number, "label": "infringing"|"clean"}.
std::vector<LabeledPair> load_labeled_pairs(const std::filesystem::path& file);

// Entry point behind the amcr binary. Exit codes: 0 success or clean,
// 1 infringement detected (detect only), 2 usage error, 3 provider or
// runtime error. Reports go to --out in canonical form, stdout otherwise.
int run(int argc, const char* const* argv);

}  // namespace amcr::cli
