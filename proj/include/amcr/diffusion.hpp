#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amcr/encoders.hpp"
#include "amcr/types.hpp"

namespace amcr {

enum class ScheduleFamily { Cosine, Linear };
std::string schedule_family_name(ScheduleFamily f);
ScheduleFamily schedule_family_from_name(const std::string& name);

// Variance-preserving noise schedule over timesteps 1..T. Index 0 is the
// conceptual no-noise endpoint: alpha_at(0) = 1, sigma_at(0) = 0.
struct NoiseSchedule {
    int T = 0;
    ScheduleFamily family = ScheduleFamily::Cosine;
    VectorXd alpha;  // alpha[t-1] for t = 1..T
    VectorXd sigma;

    double alpha_at(int t) const;
    double sigma_at(int t) const;
    void validate() const;
};

// Cosine: alpha_t = cos(pi t / (2(T+1))). Linear: sigma_t^2 = t / (T+1).
NoiseSchedule make_schedule(int T, ScheduleFamily family);

// One single-channel latent grid at one timestep.
struct LatentState {
    GridD grid;
    int step = 0;
    int channels = 1;

    Eigen::Index rows() const { return grid.rows(); }
    Eigen::Index cols() const { return grid.cols(); }
    void validate() const;
};

// Conditioning handed to the v-predictor. Minimal deliberately carries no
// token embeddings at all, so a backend cannot smuggle semantics into the
// reference trajectory.
struct Conditioning {
    enum class Kind { Minimal, Prompt };
    Kind kind = Kind::Minimal;
    std::vector<VectorXd> tokens;

    static Conditioning minimal() { return {}; }
    static Conditioning prompt(std::vector<VectorXd> tokens);
    void validate() const;
};

class VPredictor {
public:
    virtual ~VPredictor() = default;
    virtual LatentState predict(const LatentState& z_t, int t,
                                const Conditioning& cond) = 0;
    virtual std::string id() const = 0;
};

// Knows the clean latent it protects: v = (alpha_t z_t - z0) / sigma_t is
// the unique prediction for which estimate_clean returns z0 exactly on any
// point of the forward trajectory. At t = 0 the prediction is irrelevant
// (sigma = 0) and a zero grid is returned.
class OracleVPredictor : public VPredictor {
public:
    OracleVPredictor(LatentState z0, NoiseSchedule sched);
    LatentState predict(const LatentState& z_t, int t,
                        const Conditioning& cond) override;
    std::string id() const override { return "oracle-v"; }

private:
    LatentState z0_;
    NoiseSchedule sched_;
};

class ZeroVPredictor : public VPredictor {
public:
    LatentState predict(const LatentState& z_t, int t,
                        const Conditioning& cond) override;
    std::string id() const override { return "zero-v"; }
};

// Deterministic gaussian noise, one grid per timestep, derived from
// (seed, t) alone so matched timesteps share draws across trajectories
// regardless of evaluation order.
class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols);
    LatentState eps(int t) const;
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    Eigen::Index rows_, cols_;
};

// z_t = alpha_t z0 + sigma_t eps.
LatentState forward_diffuse(const LatentState& z0, int t, const NoiseSchedule& sched,
                            const LatentState& eps);

// z0_hat = alpha_t z_t - sigma_t * predictor(z_t, t, cond).
LatentState estimate_clean(const LatentState& z_t, int t, const NoiseSchedule& sched,
                           VPredictor& predictor, const Conditioning& cond);

// For each requested t: forward-diffuse z with the stream's eps(t), then
// reconstruct the clean estimate. Output aligned with `steps`.
std::vector<LatentState> estimate_trajectory(const LatentState& z,
                                             const NoiseSchedule& sched,
                                             VPredictor& predictor,
                                             const std::vector<int>& steps,
                                             const NoiseStream& noise,
                                             const Conditioning& cond);

// The minimally-conditioned baseline against which generation trajectories
// are compared; the conditioning cannot be overridden.
std::vector<LatentState> reference_trajectory(const LatentState& z_ref,
                                              const NoiseSchedule& sched,
                                              VPredictor& base_predictor,
                                              const std::vector<int>& steps,
                                              const NoiseStream& noise);

}  // namespace amcr
