#include "amcr/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "amcr/text_util.hpp"

namespace amcr {

std::string schedule_family_name(ScheduleFamily f) {
    switch (f) {
        case ScheduleFamily::Cosine: return "cosine";
        case ScheduleFamily::Linear: return "linear";
    }
    throw ValidationError("unknown schedule family value");
}

ScheduleFamily schedule_family_from_name(const std::string& name) {
    std::string n = fold(name);
    if (n == "cosine") return ScheduleFamily::Cosine;
    if (n == "linear") return ScheduleFamily::Linear;
    throw ValidationError("unknown schedule family '" + name + "'");
}

double NoiseSchedule::alpha_at(int t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > T)
        throw ContractViolation("timestep " + std::to_string(t) + " outside [0, " +
                                std::to_string(T) + "]");
    return alpha[t - 1];
}

double NoiseSchedule::sigma_at(int t) const {
    if (t == 0) return 0.0;
    if (t < 0 || t > T)
        throw ContractViolation("timestep " + std::to_string(t) + " outside [0, " +
                                std::to_string(T) + "]");
    return sigma[t - 1];
}

void NoiseSchedule::validate() const {
    if (T < 1) throw ContractViolation("schedule needs T >= 1");
    if (alpha.size() != T || sigma.size() != T)
        throw ContractViolation("schedule arrays must have length T");
    for (int t = 1; t <= T; ++t) {
        double a = alpha[t - 1], s = sigma[t - 1];
        if (std::abs(a * a + s * s - 1.0) > 1e-9)
            throw NumericError("schedule is not variance-preserving at t = " +
                               std::to_string(t));
        if (t > 1 && (a > alpha[t - 2] + 1e-12 || s < sigma[t - 2] - 1e-12))
            throw NumericError("schedule is not monotone at t = " + std::to_string(t));
    }
    if (alpha[T - 1] <= 0.0) throw NumericError("schedule requires alpha_T > 0");
}

NoiseSchedule make_schedule(int T, ScheduleFamily family) {
    if (T < 1) throw ContractViolation("make_schedule: T must be >= 1");
    NoiseSchedule sched;
    sched.T = T;
    sched.family = family;
    sched.alpha.resize(T);
    sched.sigma.resize(T);
    for (int t = 1; t <= T; ++t) {
        if (family == ScheduleFamily::Cosine) {
            double theta = std::numbers::pi * t / (2.0 * (T + 1));
            sched.alpha[t - 1] = std::cos(theta);
            sched.sigma[t - 1] = std::sin(theta);
        } else {
            double s2 = static_cast<double>(t) / (T + 1);
            sched.sigma[t - 1] = std::sqrt(s2);
            sched.alpha[t - 1] = std::sqrt(1.0 - s2);
        }
    }
    sched.validate();
    return sched;
}

void LatentState::validate() const {
    if (grid.size() == 0) throw ContractViolation("latent grid is empty");
    if (channels != 1)
        throw ContractViolation("desk-scale latents are single-channel");
    if (step < 0) throw ContractViolation("latent step must be >= 0");
    require_finite(grid, "latent grid");
}

Conditioning Conditioning::prompt(std::vector<VectorXd> tokens) {
    Conditioning c;
    c.kind = Kind::Prompt;
    c.tokens = std::move(tokens);
    c.validate();
    return c;
}

void Conditioning::validate() const {
    if (kind == Kind::Minimal && !tokens.empty())
        throw ContractViolation("minimal conditioning must carry no tokens");
    if (kind == Kind::Prompt && tokens.empty())
        throw ContractViolation("prompt conditioning needs at least one token");
    for (const auto& tok : tokens) require_finite(tok, "conditioning token");
}

namespace {

void require_same_shape(const LatentState& a, const LatentState& b,
                        const std::string& context) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionMismatch(context + ": " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

}  // namespace

OracleVPredictor::OracleVPredictor(LatentState z0, NoiseSchedule sched)
    : z0_(std::move(z0)), sched_(std::move(sched)) {
    z0_.validate();
    sched_.validate();
}

LatentState OracleVPredictor::predict(const LatentState& z_t, int t,
                                      const Conditioning&) {
    require_same_shape(z_t, z0_, "oracle predictor");
    LatentState v;
    v.step = t;
    double s = sched_.sigma_at(t);
    if (s == 0.0) {
        v.grid = GridD::Zero(z_t.rows(), z_t.cols());
    } else {
        v.grid = (sched_.alpha_at(t) * z_t.grid - z0_.grid) / s;
    }
    return v;
}

LatentState ZeroVPredictor::predict(const LatentState& z_t, int t,
                                    const Conditioning&) {
    LatentState v;
    v.grid = GridD::Zero(z_t.rows(), z_t.cols());
    v.step = t;
    return v;
}

NoiseStream::NoiseStream(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols)
    : seed_(seed), rows_(rows), cols_(cols) {
    if (rows < 1 || cols < 1)
        throw ContractViolation("noise stream needs a nonempty grid shape");
}

LatentState NoiseStream::eps(int t) const {
    if (t < 0) throw ContractViolation("noise stream timestep must be >= 0");
    SeededStream stream(SeededStream::mix(seed_, static_cast<std::uint64_t>(t)));
    LatentState e;
    e.step = t;
    e.grid.resize(rows_, cols_);
    for (Eigen::Index i = 0; i < rows_; ++i)
        for (Eigen::Index j = 0; j < cols_; ++j) e.grid(i, j) = stream.gaussian();
    return e;
}

LatentState forward_diffuse(const LatentState& z0, int t, const NoiseSchedule& sched,
                            const LatentState& eps) {
    z0.validate();
    eps.validate();
    require_same_shape(z0, eps, "forward_diffuse");
    LatentState z_t;
    z_t.grid = sched.alpha_at(t) * z0.grid + sched.sigma_at(t) * eps.grid;
    z_t.step = t;
    return z_t;
}

LatentState estimate_clean(const LatentState& z_t, int t, const NoiseSchedule& sched,
                           VPredictor& predictor, const Conditioning& cond) {
    z_t.validate();
    cond.validate();
    LatentState v = predictor.predict(z_t, t, cond);
    require_same_shape(v, z_t, "estimate_clean: predictor output");
    require_finite(v.grid, "estimate_clean: predictor output");
    LatentState z0_hat;
    z0_hat.grid = sched.alpha_at(t) * z_t.grid - sched.sigma_at(t) * v.grid;
    z0_hat.step = t;
    return z0_hat;
}

std::vector<LatentState> estimate_trajectory(const LatentState& z,
                                             const NoiseSchedule& sched,
                                             VPredictor& predictor,
                                             const std::vector<int>& steps,
                                             const NoiseStream& noise,
                                             const Conditioning& cond) {
    z.validate();
    std::vector<LatentState> out;
    out.reserve(steps.size());
    for (int t : steps) {
        if (t < 1 || t > sched.T)
            throw ContractViolation("trajectory step " + std::to_string(t) +
                                    " outside [1, " + std::to_string(sched.T) + "]");
        LatentState z_t = forward_diffuse(z, t, sched, noise.eps(t));
        out.push_back(estimate_clean(z_t, t, sched, predictor, cond));
    }
    return out;
}

std::vector<LatentState> reference_trajectory(const LatentState& z_ref,
                                              const NoiseSchedule& sched,
                                              VPredictor& base_predictor,
                                              const std::vector<int>& steps,
                                              const NoiseStream& noise) {
    return estimate_trajectory(z_ref, sched, base_predictor, steps, noise,
                               Conditioning::minimal());
}

}  // namespace amcr
