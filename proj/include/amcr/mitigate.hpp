#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "amcr/attention.hpp"
#include "amcr/detect.hpp"
#include "amcr/diffusion.hpp"
#include "amcr/encoders.hpp"
#include "amcr/types.hpp"

namespace amcr {

// Timestep weighting families. Uniform is 1 everywhere; Snr is
// SNR/(1 + SNR) = alpha_t^2 under a VP schedule, emphasizing the low-noise
// refinement steps where infringing detail emerges.
enum class WeightSchedule { Uniform, Snr };
std::string weight_schedule_name(WeightSchedule w);
WeightSchedule weight_schedule_from_name(const std::string& name);

double snr_weight(int t, const NoiseSchedule& sched);
double schedule_weight(WeightSchedule w, int t, const NoiseSchedule& sched);

struct MitigationConfig {
    double lambda_r = 1.0;
    double lambda_a = 0.1;
    double beta = 20.0;               // shared with the detector
    std::vector<double> pi;           // positional over the evaluated steps; empty = uniform
    WeightSchedule w_preserve = WeightSchedule::Uniform;
    WeightSchedule w_risk = WeightSchedule::Snr;
    WeightSchedule w_align = WeightSchedule::Uniform;

    void validate() const;
};

// Linear stand-in for the denoising network: v_hat = W flatten(z_t) + b,
// reshaped back to the latent grid. Conditioning is accepted and ignored.
// Every loss gradient through it is exactly checkable.
class ToyPredictor : public VPredictor {
public:
    ToyPredictor(Eigen::Index rows, Eigen::Index cols);

    LatentState predict(const LatentState& z_t, int t,
                        const Conditioning& cond) override;
    std::string id() const override;

    Eigen::Index rows() const { return rows_; }
    Eigen::Index cols() const { return cols_; }
    Eigen::Index param_count() const { return W.size() + b.size(); }

    // Packed parameter vector [vec(W); b], the layout gradients use.
    VectorXd pack() const;
    void unpack(const VectorXd& theta);
    void randomize(std::uint64_t seed, double scale);

    MatrixXd W;  // N x N over flattened latents, N = rows * cols
    VectorXd b;  // N

private:
    Eigen::Index rows_, cols_;
};

struct LossReport {
    double l_preserve = 0.0;
    double l_risk = 0.0;
    double l_align = 0.0;
    double l_total = 0.0;
    double lambda_r = 0.0;
    double lambda_a = 0.0;
    std::map<int, double> step_risk;   // t -> S_t before pi/weight scaling
    std::map<int, double> step_align;  // t -> -cos(f_img, f_text)

    void validate() const;  // total = preserve + lambda_r*risk + lambda_a*align to 1e-9
};

struct PreserveSample {
    LatentState z0;
    LatentState eps;
    Conditioning cond = Conditioning::minimal();
    int t = 1;
};

struct RiskStep {
    int t = 0;
    PatchEmbeddings gen_patches;
    SoftMask mask;
    PatchEmbeddings ref_patches;
};

struct AlignStep {
    int t = 0;
    PatchEmbeddings gen_patches;
};

// v = alpha_t eps - sigma_t z0, the prediction target on the forward path.
LatentState v_target(const LatentState& z0, const LatentState& eps, int t,
                     const NoiseSchedule& sched);

// Mean over the batch of w(t) * |v - v_hat|^2. Predictor failures propagate.
double loss_preserve(const std::vector<PreserveSample>& batch, VPredictor& predictor,
                     const NoiseSchedule& sched,
                     WeightSchedule w = WeightSchedule::Uniform);

// Sum over steps of pi(t) * w_r(t) * S_t with S_t the masked partial
// similarity against the frozen reference patches. Exact pooling
// cancellation falls back to uniform weights, mirroring the detector.
double loss_risk(const std::vector<RiskStep>& steps, const NoiseSchedule& sched,
                 WeightSchedule w_r, const std::vector<double>& pi, double beta,
                 std::map<int, double>* per_step = nullptr);

// Sum over steps of pi(t) * w_a(t) * (-cos(f_img, f_text)) where f_img is
// the uniform-weight pooled patch embedding of the step's clean estimate.
double loss_align(const std::vector<AlignStep>& steps, const VectorXd& f_text,
                  const NoiseSchedule& sched, WeightSchedule w_a,
                  const std::vector<double>& pi,
                  std::map<int, double>* per_step = nullptr);

LossReport loss_total(double l_preserve, double l_risk, double l_align,
                      const MitigationConfig& cfg);

// Everything one desk-scale mitigation run needs: a clean latent, its noise
// draws, frozen reference patches and stop-gradient masks per evaluated
// step, and the sanitized prompt embedding. The starting predictor is not
// shipped as weights; it is reproduced by the pretraining recipe below.
struct MitigationFixture {
    GridD z0;
    NoiseSchedule sched;
    std::vector<int> steps;               // strictly increasing, within [1, T]
    std::map<int, GridD> eps;             // noise draw per step
    std::map<int, PatchEmbeddings> refs;  // frozen reference patches per step
    std::map<int, SoftMask> masks;        // constant w.r.t. predictor params
    VectorXd f_text;                      // unit prompt embedding
    int grid_rows = 0;
    int grid_cols = 0;
    std::uint64_t encoder_seed = 0;
    Eigen::Index embed_dim = 64;
    Conditioning cond = Conditioning::minimal();
    int pretrain_steps = 40;              // recipe for the starting predictor
    double pretrain_lr = 0.01;

    void validate() const;
};

// Deterministic infringing-reference fixture: the reference latent is a
// perturbed copy of z0, so a predictor that restores z0 well also restores
// the protected content.
MitigationFixture synthetic_mitigation_fixture(std::uint64_t seed = 11,
                                               Eigen::Index rows = 8,
                                               Eigen::Index cols = 8,
                                               std::vector<int> steps = {1, 4, 8},
                                               int T = 10);

// Binds a fixture and config, precomputing per-step constants. evaluate is
// the forward objective; gradient is the analytic reverse-mode derivative
// of l_total with respect to [vec(W); b], with masks held constant.
class MitigationObjective {
public:
    MitigationObjective(MitigationFixture fixture, MitigationConfig cfg);

    LossReport evaluate(ToyPredictor& predictor) const;
    VectorXd gradient(const ToyPredictor& predictor) const;

    const MitigationFixture& fixture() const { return fixture_; }
    const MitigationConfig& config() const { return cfg_; }

private:
    struct StepData {
        int t = 0;
        double alpha = 0.0, sigma = 0.0;
        double w_p = 0.0, w_r = 0.0, w_a = 0.0;
        LatentState z_t;
        VectorXd x;       // flatten(z_t)
        VectorXd v;       // flatten(v_target)
        VectorXd mask_w;  // pooling weights, stop-gradient
    };

    MitigationFixture fixture_;
    MitigationConfig cfg_;
    mutable LinearPatchEncoder encoder_;
    MatrixXd projection_;  // embed_dim x block_px, shared by all patches
    std::vector<std::vector<Eigen::Index>> patch_idx_;  // flattened-latent indices
    std::vector<double> pi_;
    std::vector<PreserveSample> batch_;
    std::vector<StepData> steps_;
};

// Max over coordinates of |central difference - analytic| / max(1, |fd|, |g|)
// at step size h. h = 0 is a contract violation; non-finite evaluations are
// numeric errors.
double finite_diff_check(const std::function<double(const VectorXd&)>& objective,
                         const VectorXd& analytic_grad, const VectorXd& params,
                         double h);

struct FinetuneResult {
    std::vector<LossReport> trajectory;  // params at iteration 0..steps
    bool diverged = false;
};

// Plain gradient descent on l_total. The predictor is updated in place; a
// non-finite loss or gradient stops the run with the trajectory so far.
FinetuneResult toy_finetune(ToyPredictor& predictor, const MitigationFixture& fixture,
                            const MitigationConfig& cfg, int steps, double lr);

// The fixture's documented starting state: gradient descent on the
// preservation loss alone, from zero parameters, for the recipe's steps.
ToyPredictor starting_predictor(const MitigationFixture& fixture);

}  // namespace amcr
