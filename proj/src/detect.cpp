#include "amcr/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "amcr/numerics.hpp"
#include "amcr/text_util.hpp"

namespace amcr {

std::string aggregation_rule_name(AggregationRule r) {
    switch (r) {
        case AggregationRule::WeightedMean: return "weighted-mean";
        case AggregationRule::MaxOverSteps: return "max-over-steps";
    }
    throw ValidationError("unknown aggregation rule value");
}

AggregationRule aggregation_rule_from_name(const std::string& name) {
    std::string n = fold(name);
    if (n == "weighted-mean" || n == "mean") return AggregationRule::WeightedMean;
    if (n == "max-over-steps" || n == "max") return AggregationRule::MaxOverSteps;
    throw ValidationError("unknown aggregation rule '" + name + "'");
}

VectorXd mask_weights(const SoftMask& mask, int grid_rows, int grid_cols) {
    mask.validate();
    if (grid_rows < 1 || grid_cols < 1)
        throw ContractViolation("mask_weights: empty patch grid");
    ScalarField field = mask.field;
    if (field.rows() != grid_rows || field.cols() != grid_cols)
        field = bilinear_resample(field, grid_rows, grid_cols);
    VectorXd flat = flatten(field);
    double total = flat.sum();
    if (total <= 0.0)
        return VectorXd::Constant(flat.size(), 1.0 / static_cast<double>(flat.size()));
    return flat / total;
}

VectorXd pooled_embedding(const PatchEmbeddings& patches, const VectorXd& weights) {
    patches.validate();
    if (weights.size() != patches.count())
        throw ContractViolation("pooled_embedding: " + std::to_string(weights.size()) +
                                " weights for " + std::to_string(patches.count()) +
                                " patches");
    if ((weights.array() < 0.0).any() || weights.sum() <= 0.0)
        throw ContractViolation("pooled_embedding: weights must be >= 0 and sum > 0");
    VectorXd pooled = patches.rows.transpose() * weights;
    if (pooled.norm() == 0.0)
        throw DegeneratePoolError("pooled embedding cancelled to zero");
    return normalize_unit(pooled);
}

double partial_similarity(const VectorXd& g, const PatchEmbeddings& ref,
                          double beta) {
    ref.validate();
    VectorXd sims(ref.count());
    for (Eigen::Index j = 0; j < ref.count(); ++j)
        sims[j] = cosine(g, VectorXd(ref.rows.row(j).transpose()));
    return lse_pool(sims, beta);
}

DetectionReport detect(const std::vector<GenStep>& gen_steps,
                       const std::vector<RefStep>& ref_steps,
                       const std::vector<double>& pi, double beta, double tau,
                       AggregationRule rule) {
    if (gen_steps.empty())
        throw ContractViolation("detect: no evaluation steps");
    if (gen_steps.size() != ref_steps.size())
        throw AlignmentError("detect: " + std::to_string(gen_steps.size()) +
                             " generation steps vs " +
                             std::to_string(ref_steps.size()) + " reference steps");
    for (std::size_t i = 0; i < gen_steps.size(); ++i)
        if (gen_steps[i].t != ref_steps[i].t)
            throw AlignmentError("detect: step mismatch at position " +
                                 std::to_string(i) + ": t=" +
                                 std::to_string(gen_steps[i].t) + " vs t=" +
                                 std::to_string(ref_steps[i].t));

    std::vector<double> weights;
    if (pi.empty()) {
        weights.assign(gen_steps.size(), 1.0 / static_cast<double>(gen_steps.size()));
    } else {
        if (pi.size() != gen_steps.size())
            throw ContractViolation("detect: pi length does not match the step count");
        double total = 0.0;
        for (double p : pi) {
            if (p < 0.0 || !std::isfinite(p))
                throw ContractViolation("detect: pi must be finite and >= 0");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw ContractViolation("detect: pi must sum to 1 over the steps");
        weights = pi;
    }

    DetectionReport report;
    report.rule = rule;
    report.tau = tau;

    double mean = 0.0, best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < gen_steps.size(); ++i) {
        const auto& gen = gen_steps[i];
        VectorXd w = mask_weights(gen.mask, gen.patches.grid_rows,
                                  gen.patches.grid_cols);
        VectorXd g;
        try {
            g = pooled_embedding(gen.patches, w);
        } catch (const DegeneratePoolError&) {
            VectorXd uniform = VectorXd::Constant(
                gen.patches.count(), 1.0 / static_cast<double>(gen.patches.count()));
            g = pooled_embedding(gen.patches, uniform);
        }
        double s = partial_similarity(g, ref_steps[i].patches, beta);
        report.per_step[gen.t] = s;
        mean += weights[i] * s;
        best = std::max(best, s);
    }

    report.overall = rule == AggregationRule::WeightedMean ? mean : best;
    report.infringed = report.overall > tau;
    return report;
}

}  // namespace amcr
