#include "amcr/mitigate.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "amcr/numerics.hpp"
#include "amcr/text_util.hpp"

namespace amcr {

std::string weight_schedule_name(WeightSchedule w) {
    switch (w) {
        case WeightSchedule::Uniform: return "uniform";
        case WeightSchedule::Snr: return "snr";
    }
    throw ValidationError("unknown weight schedule value");
}

WeightSchedule weight_schedule_from_name(const std::string& name) {
    std::string n = fold(name);
    if (n == "uniform") return WeightSchedule::Uniform;
    if (n == "snr") return WeightSchedule::Snr;
    throw ValidationError("unknown weight schedule '" + name + "'");
}

double snr_weight(int t, const NoiseSchedule& sched) {
    // SNR/(1 + SNR) collapses to alpha^2 under alpha^2 + sigma^2 = 1, so the
    // sigma = 0 endpoint needs no special case.
    double a = sched.alpha_at(t);
    return a * a;
}

double schedule_weight(WeightSchedule w, int t, const NoiseSchedule& sched) {
    switch (w) {
        case WeightSchedule::Uniform:
            (void)sched.alpha_at(t);  // range-check t
            return 1.0;
        case WeightSchedule::Snr:
            return snr_weight(t, sched);
    }
    throw ValidationError("unknown weight schedule value");
}

void MitigationConfig::validate() const {
    if (!std::isfinite(lambda_r) || lambda_r < 0.0)
        throw ValidationError("lambda_r must be finite and >= 0");
    if (!std::isfinite(lambda_a) || lambda_a < 0.0)
        throw ValidationError("lambda_a must be finite and >= 0");
    if (!std::isfinite(beta) || beta <= 0.0)
        throw ValidationError("beta must be finite and positive");
    if (!pi.empty()) {
        double total = 0.0;
        for (double p : pi) {
            if (!std::isfinite(p) || p < 0.0)
                throw ValidationError("pi entries must be finite and >= 0");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw ValidationError("pi must sum to 1 over its support");
    }
}

ToyPredictor::ToyPredictor(Eigen::Index rows, Eigen::Index cols)
    : rows_(rows), cols_(cols) {
    if (rows < 1 || cols < 1)
        throw ContractViolation("toy predictor: non-positive latent shape");
    Eigen::Index n = rows * cols;
    W = MatrixXd::Zero(n, n);
    b = VectorXd::Zero(n);
}

LatentState ToyPredictor::predict(const LatentState& z_t, int t,
                                  const Conditioning& cond) {
    z_t.validate();
    cond.validate();
    if (z_t.rows() != rows_ || z_t.cols() != cols_)
        throw DimensionMismatch("toy predictor: latent " + std::to_string(z_t.rows()) +
                                "x" + std::to_string(z_t.cols()) + ", expected " +
                                std::to_string(rows_) + "x" + std::to_string(cols_));
    Eigen::Index n = rows_ * cols_;
    if (W.rows() != n || W.cols() != n || b.size() != n)
        throw ContractViolation("toy predictor: parameter shapes inconsistent with latent");
    LatentState out;
    out.grid = unflatten(W * flatten(z_t.grid) + b, rows_, cols_);
    out.step = t;
    return out;
}

std::string ToyPredictor::id() const {
    return "toy-linear/" + std::to_string(rows_) + "x" + std::to_string(cols_);
}

VectorXd ToyPredictor::pack() const {
    VectorXd theta(param_count());
    theta << Eigen::Map<const VectorXd>(W.data(), W.size()), b;
    return theta;
}

void ToyPredictor::unpack(const VectorXd& theta) {
    if (theta.size() != param_count())
        throw DimensionMismatch("toy predictor: " + std::to_string(theta.size()) +
                                " packed values for " + std::to_string(param_count()) +
                                " parameters");
    Eigen::Index n = rows_ * cols_;
    W = Eigen::Map<const MatrixXd>(theta.data(), n, n);
    b = theta.segment(n * n, n);
}

void ToyPredictor::randomize(std::uint64_t seed, double scale) {
    SeededStream rng(seed);
    for (Eigen::Index r = 0; r < W.rows(); ++r)
        for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = scale * rng.gaussian();
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = scale * rng.gaussian();
}

void LossReport::validate() const {
    for (double v : {l_preserve, l_risk, l_align, l_total, lambda_r, lambda_a})
        if (!std::isfinite(v)) throw NumericError("loss report: non-finite term");
    double expected = l_preserve + lambda_r * l_risk + lambda_a * l_align;
    if (std::abs(l_total - expected) > 1e-9)
        throw ContractViolation("loss report: total is not the weighted term sum");
}

LatentState v_target(const LatentState& z0, const LatentState& eps, int t,
                     const NoiseSchedule& sched) {
    z0.validate();
    eps.validate();
    if (z0.rows() != eps.rows() || z0.cols() != eps.cols())
        throw DimensionMismatch("v_target: z0 " + std::to_string(z0.rows()) + "x" +
                                std::to_string(z0.cols()) + " vs eps " +
                                std::to_string(eps.rows()) + "x" +
                                std::to_string(eps.cols()));
    double a = sched.alpha_at(t);
    double s = sched.sigma_at(t);
    LatentState v;
    v.grid = a * eps.grid - s * z0.grid;
    v.step = t;
    return v;
}

double loss_preserve(const std::vector<PreserveSample>& batch, VPredictor& predictor,
                     const NoiseSchedule& sched, WeightSchedule w) {
    if (batch.empty()) throw ContractViolation("loss_preserve: empty batch");
    double total = 0.0;
    for (const auto& sample : batch) {
        LatentState z_t = forward_diffuse(sample.z0, sample.t, sched, sample.eps);
        LatentState v = v_target(sample.z0, sample.eps, sample.t, sched);
        LatentState vhat = predictor.predict(z_t, sample.t, sample.cond);
        if (vhat.rows() != v.rows() || vhat.cols() != v.cols())
            throw DimensionMismatch("loss_preserve: predictor output shape");
        require_finite(vhat.grid, "loss_preserve predictor output");
        total += schedule_weight(w, sample.t, sched) * (v.grid - vhat.grid).square().sum();
    }
    return total / static_cast<double>(batch.size());
}

namespace {

std::vector<double> resolve_step_weights(const std::vector<double>& pi, std::size_t n) {
    if (pi.empty())
        return std::vector<double>(n, 1.0 / static_cast<double>(n));
    if (pi.size() != n)
        throw ContractViolation("pi length does not match the step count");
    double total = 0.0;
    for (double p : pi) {
        if (!std::isfinite(p) || p < 0.0)
            throw ContractViolation("pi must be finite and >= 0");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ContractViolation("pi must sum to 1 over the steps");
    return pi;
}

VectorXd pooled_with_fallback(const PatchEmbeddings& patches, const VectorXd& weights) {
    try {
        return pooled_embedding(patches, weights);
    } catch (const DegeneratePoolError&) {
        VectorXd uniform = VectorXd::Constant(
            patches.count(), 1.0 / static_cast<double>(patches.count()));
        return pooled_embedding(patches, uniform);
    }
}

}  // namespace

double loss_risk(const std::vector<RiskStep>& steps, const NoiseSchedule& sched,
                 WeightSchedule w_r, const std::vector<double>& pi, double beta,
                 std::map<int, double>* per_step) {
    if (steps.empty()) throw ContractViolation("loss_risk: no evaluation steps");
    std::vector<double> weights = resolve_step_weights(pi, steps.size());
    double total = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& step = steps[i];
        VectorXd w = mask_weights(step.mask, step.gen_patches.grid_rows,
                                  step.gen_patches.grid_cols);
        VectorXd g = pooled_with_fallback(step.gen_patches, w);
        double s = partial_similarity(g, step.ref_patches, beta);
        if (per_step) (*per_step)[step.t] = s;
        total += weights[i] * schedule_weight(w_r, step.t, sched) * s;
    }
    return total;
}

double loss_align(const std::vector<AlignStep>& steps, const VectorXd& f_text,
                  const NoiseSchedule& sched, WeightSchedule w_a,
                  const std::vector<double>& pi, std::map<int, double>* per_step) {
    if (steps.empty()) throw ContractViolation("loss_align: no evaluation steps");
    std::vector<double> weights = resolve_step_weights(pi, steps.size());
    double total = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& step = steps[i];
        VectorXd uniform = VectorXd::Constant(
            step.gen_patches.count(),
            1.0 / static_cast<double>(step.gen_patches.count()));
        VectorXd f_img = pooled_embedding(step.gen_patches, uniform);
        double term = -cosine(f_img, f_text);
        if (per_step) (*per_step)[step.t] = term;
        total += weights[i] * schedule_weight(w_a, step.t, sched) * term;
    }
    return total;
}

LossReport loss_total(double l_preserve, double l_risk, double l_align,
                      const MitigationConfig& cfg) {
    cfg.validate();
    for (double v : {l_preserve, l_risk, l_align})
        if (!std::isfinite(v)) throw NumericError("loss_total: non-finite loss term");
    LossReport report;
    report.l_preserve = l_preserve;
    report.l_risk = l_risk;
    report.l_align = l_align;
    report.lambda_r = cfg.lambda_r;
    report.lambda_a = cfg.lambda_a;
    report.l_total = l_preserve + cfg.lambda_r * l_risk + cfg.lambda_a * l_align;
    report.validate();
    return report;
}

void MitigationFixture::validate() const {
    sched.validate();
    if (z0.size() < 1) throw ContractViolation("mitigation fixture: empty latent");
    require_finite(z0, "mitigation fixture latent");
    if (steps.empty()) throw ContractViolation("mitigation fixture: no steps");
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i] < 1 || steps[i] > sched.T)
            throw ContractViolation("mitigation fixture: step " +
                                    std::to_string(steps[i]) + " outside [1, " +
                                    std::to_string(sched.T) + "]");
        if (i > 0 && steps[i] <= steps[i - 1])
            throw ContractViolation("mitigation fixture: steps must strictly increase");
    }
    if (grid_rows < 1 || grid_cols < 1)
        throw ContractViolation("mitigation fixture: empty patch grid");
    if (z0.rows() % grid_rows != 0 || z0.cols() % grid_cols != 0)
        throw DimensionMismatch("mitigation fixture: latent does not tile into the patch grid");
    if (embed_dim < 1) throw ContractViolation("mitigation fixture: empty embedding dim");
    if (f_text.size() != embed_dim)
        throw DimensionMismatch("mitigation fixture: prompt embedding dim " +
                                std::to_string(f_text.size()) + ", expected " +
                                std::to_string(embed_dim));
    if (std::abs(f_text.norm() - 1.0) > 1e-6)
        throw ValidationError("mitigation fixture: prompt embedding is not unit length");
    for (int t : steps) {
        auto e = eps.find(t);
        if (e == eps.end())
            throw ContractViolation("mitigation fixture: missing noise draw for step " +
                                    std::to_string(t));
        if (e->second.rows() != z0.rows() || e->second.cols() != z0.cols())
            throw DimensionMismatch("mitigation fixture: noise shape at step " +
                                    std::to_string(t));
        require_finite(e->second, "mitigation fixture noise");
        auto r = refs.find(t);
        if (r == refs.end())
            throw ContractViolation("mitigation fixture: missing reference patches for step " +
                                    std::to_string(t));
        r->second.validate();
        if (r->second.dim() != embed_dim)
            throw DimensionMismatch("mitigation fixture: reference embedding dim at step " +
                                    std::to_string(t));
        auto m = masks.find(t);
        if (m == masks.end())
            throw ContractViolation("mitigation fixture: missing mask for step " +
                                    std::to_string(t));
        m->second.validate();
    }
    if (pretrain_steps < 0)
        throw ValidationError("mitigation fixture: negative pretraining step count");
    if (!std::isfinite(pretrain_lr) || pretrain_lr < 0.0)
        throw ValidationError("mitigation fixture: bad pretraining learning rate");
    cond.validate();
}

MitigationFixture synthetic_mitigation_fixture(std::uint64_t seed, Eigen::Index rows,
                                               Eigen::Index cols, std::vector<int> steps,
                                               int T) {
    MitigationFixture fx;
    fx.sched = make_schedule(T, ScheduleFamily::Cosine);
    fx.steps = std::move(steps);
    fx.grid_rows = 4;
    fx.grid_cols = 4;
    fx.embed_dim = 64;
    fx.encoder_seed = SeededStream::mix(seed, 0x656E63);

    Eigen::Index n = rows * cols;
    SeededStream latent_rng(SeededStream::mix(seed, 0x7A30));
    fx.z0 = unflatten(0.5 * latent_rng.gaussian_vector(n), rows, cols);

    NoiseStream noise(SeededStream::mix(seed, 0x657073), rows, cols);
    for (int t : fx.steps) fx.eps[t] = noise.eps(t).grid;

    // The protected content is a lightly perturbed copy of z0, so accurate
    // reconstruction is infringing by construction.
    SeededStream ref_rng(SeededStream::mix(seed, 0x726566));
    GridD z_ref = fx.z0 + unflatten(0.2 * ref_rng.gaussian_vector(n), rows, cols);
    LinearPatchEncoder encoder(fx.encoder_seed, fx.embed_dim);
    for (int t : fx.steps) {
        PatchEmbeddings ref = encoder.embed_patches(z_ref, fx.grid_rows, fx.grid_cols);
        ref.source = PatchSource::Reference;
        fx.refs[t] = std::move(ref);
    }

    GridD bump(fx.grid_rows, fx.grid_cols);
    for (Eigen::Index i = 0; i < bump.rows(); ++i)
        for (Eigen::Index j = 0; j < bump.cols(); ++j) {
            double di = static_cast<double>(i) - 1.2;
            double dj = static_cast<double>(j) - 1.8;
            bump(i, j) = std::exp(-(di * di + dj * dj) / 3.0);
        }
    ScalarField field = normalize_range01(bump);
    for (int t : fx.steps) {
        SoftMask mask;
        mask.field = field;
        mask.step = t;
        fx.masks[t] = std::move(mask);
    }

    DeterministicTestEncoder text(0, fx.embed_dim);
    fx.f_text = text.embed_one(
        "smiling technician, fixing a sink, neutral-colored protective cap, "
        "plain work uniform, with photo");
    fx.validate();
    return fx;
}

MitigationObjective::MitigationObjective(MitigationFixture fixture, MitigationConfig cfg)
    : fixture_(std::move(fixture)),
      cfg_(std::move(cfg)),
      encoder_(fixture_.encoder_seed, fixture_.embed_dim) {
    fixture_.validate();
    cfg_.validate();
    pi_ = resolve_step_weights(cfg_.pi, fixture_.steps.size());

    Eigen::Index ph = fixture_.z0.rows() / fixture_.grid_rows;
    Eigen::Index pw = fixture_.z0.cols() / fixture_.grid_cols;
    projection_ = encoder_.projection_for(ph * pw);
    int patches = fixture_.grid_rows * fixture_.grid_cols;
    patch_idx_.resize(patches);
    for (int p = 0; p < patches; ++p) {
        Eigen::Index pr = p / fixture_.grid_cols;
        Eigen::Index pc = p % fixture_.grid_cols;
        for (Eigen::Index i = 0; i < ph; ++i)
            for (Eigen::Index j = 0; j < pw; ++j)
                patch_idx_[p].push_back((pr * ph + i) * fixture_.z0.cols() +
                                        pc * pw + j);
    }

    LatentState z0{fixture_.z0, 0, 1};
    for (int t : fixture_.steps) {
        LatentState eps{fixture_.eps.at(t), t, 1};
        StepData sd;
        sd.t = t;
        sd.alpha = fixture_.sched.alpha_at(t);
        sd.sigma = fixture_.sched.sigma_at(t);
        sd.w_p = schedule_weight(cfg_.w_preserve, t, fixture_.sched);
        sd.w_r = schedule_weight(cfg_.w_risk, t, fixture_.sched);
        sd.w_a = schedule_weight(cfg_.w_align, t, fixture_.sched);
        sd.z_t = forward_diffuse(z0, t, fixture_.sched, eps);
        sd.x = flatten(sd.z_t.grid);
        sd.v = flatten(v_target(z0, eps, t, fixture_.sched).grid);
        sd.mask_w = mask_weights(fixture_.masks.at(t), fixture_.grid_rows,
                                 fixture_.grid_cols);
        steps_.push_back(std::move(sd));
        batch_.push_back({z0, eps, fixture_.cond, t});
    }
}

LossReport MitigationObjective::evaluate(ToyPredictor& predictor) const {
    double lp = loss_preserve(batch_, predictor, fixture_.sched, cfg_.w_preserve);
    std::vector<RiskStep> risk_steps;
    std::vector<AlignStep> align_steps;
    for (const auto& sd : steps_) {
        LatentState zhat =
            estimate_clean(sd.z_t, sd.t, fixture_.sched, predictor, fixture_.cond);
        PatchEmbeddings gen = encoder_.embed_patches(zhat.grid, fixture_.grid_rows,
                                                     fixture_.grid_cols);
        risk_steps.push_back({sd.t, gen, fixture_.masks.at(sd.t), fixture_.refs.at(sd.t)});
        align_steps.push_back({sd.t, std::move(gen)});
    }
    std::map<int, double> step_risk, step_align;
    double lr = loss_risk(risk_steps, fixture_.sched, cfg_.w_risk, pi_, cfg_.beta,
                          &step_risk);
    double la = loss_align(align_steps, fixture_.f_text, fixture_.sched, cfg_.w_align,
                           pi_, &step_align);
    LossReport report = loss_total(lp, lr, la, cfg_);
    report.step_risk = std::move(step_risk);
    report.step_align = std::move(step_align);
    return report;
}

VectorXd MitigationObjective::gradient(const ToyPredictor& predictor) const {
    Eigen::Index n = fixture_.z0.size();
    if (predictor.rows() != fixture_.z0.rows() || predictor.cols() != fixture_.z0.cols())
        throw DimensionMismatch("gradient: predictor shape does not match the fixture latent");
    if (predictor.W.rows() != n || predictor.W.cols() != n || predictor.b.size() != n)
        throw ContractViolation("gradient: predictor parameter shapes");

    MatrixXd grad_W = MatrixXd::Zero(n, n);
    VectorXd grad_b = VectorXd::Zero(n);
    const double batch = static_cast<double>(steps_.size());
    const int patches = fixture_.grid_rows * fixture_.grid_cols;
    const Eigen::Index dim = fixture_.embed_dim;

    for (std::size_t i = 0; i < steps_.size(); ++i) {
        const auto& sd = steps_[i];
        VectorXd vhat = predictor.W * sd.x + predictor.b;
        VectorXd vbar = (2.0 * sd.w_p / batch) * (vhat - sd.v);

        double cr = cfg_.lambda_r * pi_[i] * sd.w_r;
        double ca = cfg_.lambda_a * pi_[i] * sd.w_a;
        if (cr != 0.0 || ca != 0.0) {
            VectorXd zhat = sd.alpha * sd.x - sd.sigma * vhat;
            MatrixXd units(patches, dim);
            VectorXd norms(patches);
            for (int p = 0; p < patches; ++p) {
                VectorXd block(static_cast<Eigen::Index>(patch_idx_[p].size()));
                for (std::size_t k = 0; k < patch_idx_[p].size(); ++k)
                    block[static_cast<Eigen::Index>(k)] = zhat[patch_idx_[p][k]];
                VectorXd e = projection_ * block;
                double en = e.norm();
                if (en < 1e-12)
                    throw NumericError("gradient: patch projects to a zero vector");
                units.row(p) = (e / en).transpose();
                norms[p] = en;
            }

            VectorXd gbar = VectorXd::Zero(dim);
            VectorXd mask_w = sd.mask_w;
            if (cr != 0.0) {
                VectorXd g_raw = units.transpose() * mask_w;
                if (g_raw.norm() == 0.0) {  // mirror the forward fallback
                    mask_w = VectorXd::Constant(patches, 1.0 / patches);
                    g_raw = units.transpose() * mask_w;
                }
                double gn = g_raw.norm();
                if (gn == 0.0)
                    throw NumericError("gradient: degenerate pooled embedding");
                VectorXd ghat = g_raw / gn;
                const MatrixXd& refs = fixture_.refs.at(sd.t).rows;
                VectorXd sims = refs * ghat;
                double top = sims.maxCoeff();
                VectorXd soft = (cfg_.beta * (sims.array() - top)).exp().matrix();
                soft /= soft.sum();
                gbar = (cr / gn) *
                       (refs.transpose() * soft - sims.dot(soft) * ghat);
            }

            VectorXd fbar = VectorXd::Zero(dim);
            if (ca != 0.0) {
                VectorXd f_raw = units.colwise().mean().transpose();
                double fn = f_raw.norm();
                if (fn == 0.0)
                    throw NumericError("gradient: degenerate uniform pooling");
                VectorXd fhat = f_raw / fn;
                double c = fhat.dot(fixture_.f_text);
                fbar = (-ca / fn) * (fixture_.f_text - c * fhat);
            }

            VectorXd zbar = VectorXd::Zero(n);
            for (int p = 0; p < patches; ++p) {
                VectorXd ubar = mask_w[p] * gbar + fbar / static_cast<double>(patches);
                VectorXd u = units.row(p).transpose();
                VectorXd ebar = (ubar - u.dot(ubar) * u) / norms[p];
                VectorXd block_bar = projection_.transpose() * ebar;
                for (std::size_t k = 0; k < patch_idx_[p].size(); ++k)
                    zbar[patch_idx_[p][k]] += block_bar[static_cast<Eigen::Index>(k)];
            }
            vbar += -sd.sigma * zbar;
        }

        grad_W.noalias() += vbar * sd.x.transpose();
        grad_b += vbar;
    }

    VectorXd out(n * n + n);
    out << Eigen::Map<const VectorXd>(grad_W.data(), grad_W.size()), grad_b;
    return out;
}

double finite_diff_check(const std::function<double(const VectorXd&)>& objective,
                         const VectorXd& analytic_grad, const VectorXd& params,
                         double h) {
    if (h == 0.0 || !std::isfinite(h))
        throw ContractViolation("finite_diff_check: step size must be finite and nonzero");
    if (analytic_grad.size() != params.size())
        throw DimensionMismatch("finite_diff_check: gradient length " +
                                std::to_string(analytic_grad.size()) + " vs " +
                                std::to_string(params.size()) + " parameters");
    double worst = 0.0;
    VectorXd probe = params;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + h;
        double fp = objective(probe);
        probe[i] = params[i] - h;
        double fm = objective(probe);
        probe[i] = params[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_check: objective is not finite near params");
        double fd = (fp - fm) / (2.0 * h);
        double err = std::abs(fd - analytic_grad[i]) /
                     std::max({1.0, std::abs(fd), std::abs(analytic_grad[i])});
        worst = std::max(worst, err);
    }
    return worst;
}

FinetuneResult toy_finetune(ToyPredictor& predictor, const MitigationFixture& fixture,
                            const MitigationConfig& cfg, int steps, double lr) {
    if (steps < 0) throw ContractViolation("toy_finetune: negative step count");
    if (!std::isfinite(lr) || lr < 0.0)
        throw ContractViolation("toy_finetune: learning rate must be finite and >= 0");
    MitigationObjective objective(fixture, cfg);
    FinetuneResult result;
    for (int iter = 0; iter <= steps; ++iter) {
        LossReport report;
        // Parameter blowup surfaces as numeric or embedding validation
        // failures inside the forward pass; treat any of them as divergence.
        try {
            report = objective.evaluate(predictor);
        } catch (const NumericError&) {
            result.diverged = true;
            break;
        } catch (const ValidationError&) {
            result.diverged = true;
            break;
        } catch (const ZeroNormError&) {
            result.diverged = true;
            break;
        } catch (const DegeneratePoolError&) {
            result.diverged = true;
            break;
        }
        if (!std::isfinite(report.l_total)) {
            result.diverged = true;
            break;
        }
        result.trajectory.push_back(std::move(report));
        if (iter == steps) break;
        VectorXd grad;
        try {
            grad = objective.gradient(predictor);
        } catch (const NumericError&) {
            result.diverged = true;
            break;
        }
        if (!grad.allFinite()) {
            result.diverged = true;
            break;
        }
        predictor.unpack(predictor.pack() - lr * grad);
    }
    return result;
}

ToyPredictor starting_predictor(const MitigationFixture& fixture) {
    fixture.validate();
    ToyPredictor predictor(fixture.z0.rows(), fixture.z0.cols());
    MitigationConfig warm;
    warm.lambda_r = 0.0;
    warm.lambda_a = 0.0;
    FinetuneResult run =
        toy_finetune(predictor, fixture, warm, fixture.pretrain_steps, fixture.pretrain_lr);
    if (run.diverged)
        throw NumericError("starting predictor: pretraining diverged");
    return predictor;
}

}  // namespace amcr
