#pragma once

#include <map>
#include <string>
#include <vector>

#include "amcr/attention.hpp"
#include "amcr/encoders.hpp"
#include "amcr/types.hpp"

namespace amcr {

enum class AggregationRule { WeightedMean, MaxOverSteps };
std::string aggregation_rule_name(AggregationRule r);
AggregationRule aggregation_rule_from_name(const std::string& name);

struct DetectionReport {
    std::map<int, double> per_step;  // t -> stepwise similarity
    double overall = 0.0;
    AggregationRule rule = AggregationRule::WeightedMean;
    double tau = 0.0;
    bool infringed = false;  // overall > tau, strictly
};

// One generation-side evaluation point: patch embeddings of the clean
// estimate plus the step's soft mask.
struct GenStep {
    int t = 0;
    PatchEmbeddings patches;
    SoftMask mask;
};

struct RefStep {
    int t = 0;
    PatchEmbeddings patches;
};

// Mask resampled to the patch grid, flattened row-major, normalized to sum
// 1; an all-zero mask falls back to uniform weights.
VectorXd mask_weights(const SoftMask& mask, int grid_rows, int grid_cols);

// Unit-normalized weighted patch sum. Exact cancellation raises
// DegeneratePoolError so the caller can retry with uniform weights.
VectorXd pooled_embedding(const PatchEmbeddings& patches, const VectorXd& weights);

// Sharp soft-max over cosines between the pooled generation embedding and
// every reference patch.
double partial_similarity(const VectorXd& g, const PatchEmbeddings& ref,
                          double beta);

// Stepwise similarities over aligned trajectories, aggregated into one
// score and thresholded. pi weights the steps under WeightedMean; empty pi
// means uniform.
DetectionReport detect(const std::vector<GenStep>& gen_steps,
                       const std::vector<RefStep>& ref_steps,
                       const std::vector<double>& pi, double beta, double tau,
                       AggregationRule rule = AggregationRule::WeightedMean);

}  // namespace amcr
