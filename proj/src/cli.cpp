#include "amcr/cli.hpp"

#include "amcr/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace amcr::cli {

CalibrationResult calibrate(const std::vector<LabeledPair>& pairs, double f_beta) {
    if (!(f_beta > 0.0) || !std::isfinite(f_beta))
        throw ContractViolation("calibrate: f_beta must be positive and finite");
    if (pairs.size() < 2)
        throw CalibrationError("calibrate: need at least 2 labeled pairs");
    bool any_infringing = false, any_clean = false;
    std::set<double> candidates;
    for (const auto& p : pairs) {
        if (!std::isfinite(p.score))
            throw CalibrationError("calibrate: non-finite score");
        (p.infringing ? any_infringing : any_clean) = true;
        candidates.insert(p.score);
    }
    if (!any_infringing || !any_clean)
        throw CalibrationError("calibrate: both classes must be present");

    const double b2 = f_beta * f_beta;
    CalibrationResult best;
    bool have_best = false;
    for (double tau : candidates) {  // ascending, so >= resolves ties upward
        int tp = 0, fp = 0, fn = 0;
        for (const auto& p : pairs) {
            const bool predicted = p.score >= tau;
            if (predicted && p.infringing) ++tp;
            else if (predicted) ++fp;
            else if (p.infringing) ++fn;
        }
        const double denom = (1.0 + b2) * tp + b2 * fn + fp;
        const double f = denom == 0.0 ? 0.0 : (1.0 + b2) * tp / denom;
        if (!have_best || f >= best.f_score) {
            best = {tau, f, f_beta, tp, fp, fn};
            have_best = true;
        }
    }
    return best;
}

std::vector<LabeledPair> load_labeled_pairs(const std::filesystem::path& file) {
    std::istringstream lines(read_text_file(file));
    std::string line;
    std::size_t line_no = 0;
    std::vector<LabeledPair> out;
    while (std::getline(lines, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
            line.pop_back();
        if (line.empty()) continue;
        const std::string where =
            file.string() + " line " + std::to_string(line_no);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw SerializationError(where + ": not a JSON object");
        if (!j.contains("score") || !j["score"].is_number())
            throw SerializationError(where + ": missing numeric score");
        if (!j.contains("label") || !j["label"].is_string())
            throw SerializationError(where + ": missing label");
        const std::string label = j["label"].get<std::string>();
        LabeledPair pair;
        pair.score = j["score"].get<double>();
        if (label == "infringing") pair.infringing = true;
        else if (label == "clean") pair.infringing = false;
        else throw SerializationError(where + ": label must be infringing or clean");
        out.push_back(pair);
    }
    if (out.empty()) throw CalibrationError("no labeled pairs in " + file.string());
    return out;
}

namespace {

void emit_text(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) std::cout << text;
    else write_text_file(out_path, text);
}

template <typename Report>
void emit_report(const Report& r, const std::string& out_path) {
    emit_text(canonical_dump(report_json(r)) + "\n", out_path);
}

struct SanitizeOpts {
    std::string prompt, corpus, candidates, out;
    double lambda = 0.5, gamma = 0.02, quantile = 0.5;
    int budget = 5, window = 3, cap = 4;
    std::uint64_t seed = 0;
    int dim = 64;
};

struct ScoreOpts {
    std::string prompt, corpus, out;
    std::uint64_t seed = 0;
    int dim = 64;
};

struct MaskOpts {
    std::string attn, out;
    std::vector<int> tokens;
    std::vector<double> layer_weights;
};

struct TrajectoryOpts {
    std::string ref, gen, out_gen, out_ref, family = "cosine";
    std::vector<int> steps;
    std::uint64_t seed = 0;
    int T = 10;
};

struct DetectOpts {
    std::string gen, ref, masks, out, rule = "weighted-mean";
    std::vector<double> pi;
    double beta = 20.0, tau = 0.9;
    std::uint64_t encoder_seed = 0;
    int dim = 64, grid_rows = 4, grid_cols = 4;
};

struct MitigateOpts {
    std::string fixtures, out;
    std::string w_preserve = "uniform", w_risk = "snr", w_align = "uniform";
    std::vector<double> pi;
    int steps = 0;
    double lr = 0.0, lambda_r = 1.0, lambda_a = 0.1, beta = 20.0;
};

struct CalibrateOpts {
    std::string pairs, out;
    double f_beta = 1.0;
};

int run_sanitize(const SanitizeOpts& o) {
    DeterministicTestEncoder encoder(o.seed, o.dim);
    RiskCorpus corpus = load_corpus(o.corpus, encoder);
    StaticCandidateTable table;
    if (!o.candidates.empty()) table = StaticCandidateTable::load(o.candidates);
    StructuredPrompt sp = parse_prompt(o.prompt);
    SanitizerConfig cfg;
    cfg.lambda = o.lambda;
    cfg.budget = o.budget;
    cfg.gamma = o.gamma;
    cfg.window_m = o.window;
    cfg.risk_quantile = o.quantile;
    cfg.candidates_per_element = o.cap;
    try {
        emit_report(sanitize(sp, corpus, encoder, table, cfg), o.out);
        return 0;
    } catch (const SanitizeAborted& e) {
        emit_report(e.partial(), o.out);  // keep the work done so far
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int run_score(const ScoreOpts& o) {
    DeterministicTestEncoder encoder(o.seed, o.dim);
    RiskCorpus corpus = load_corpus(o.corpus, encoder);
    emit_report(rank_slots(parse_prompt(o.prompt), corpus, encoder), o.out);
    return 0;
}

int run_mask(const MaskOpts& o) {
    AttentionStack stack = load_attention(o.attn);
    std::optional<std::vector<double>> weights;
    if (!o.layer_weights.empty()) weights = o.layer_weights;
    std::optional<std::vector<int>> tokens;
    if (!o.tokens.empty()) tokens = o.tokens;
    export_mask(build_soft_mask(stack, weights, tokens), o.out);
    return 0;
}

int run_trajectory(const TrajectoryOpts& o) {
    LatentState ref = load_latent(o.ref);
    LatentState gen = o.gen.empty() ? ref : load_latent(o.gen);
    if (gen.rows() != ref.rows() || gen.cols() != ref.cols())
        throw DimensionMismatch("trajectory: --gen and --ref latents must share a shape");
    NoiseSchedule sched = make_schedule(o.T, schedule_family_from_name(o.family));
    NoiseStream noise(o.seed, ref.rows(), ref.cols());
    OracleVPredictor gen_pred(gen, sched), ref_pred(ref, sched);
    save_trajectory(estimate_trajectory(gen, sched, gen_pred, o.steps, noise,
                                        Conditioning::minimal()),
                    o.out_gen);
    save_trajectory(reference_trajectory(ref, sched, ref_pred, o.steps, noise),
                    o.out_ref);
    return 0;
}

int run_detect(const DetectOpts& o) {
    auto gen_traj = load_trajectory(o.gen);
    auto ref_traj = load_trajectory(o.ref);
    auto masks = load_masks(o.masks);
    LinearPatchEncoder encoder(o.encoder_seed, o.dim);
    std::vector<GenStep> gen_steps;
    for (const auto& z : gen_traj) {
        auto mask = masks.find(z.step);
        if (mask == masks.end())
            throw AlignmentError("detect: no mask for step " + std::to_string(z.step));
        gen_steps.push_back(
            {z.step, encoder.embed_patches(z.grid, o.grid_rows, o.grid_cols),
             mask->second});
    }
    std::vector<RefStep> ref_steps;
    for (const auto& z : ref_traj) {
        PatchEmbeddings pe = encoder.embed_patches(z.grid, o.grid_rows, o.grid_cols);
        pe.source = PatchSource::Reference;
        ref_steps.push_back({z.step, std::move(pe)});
    }
    DetectionReport report = detect(gen_steps, ref_steps, o.pi, o.beta, o.tau,
                                    aggregation_rule_from_name(o.rule));
    emit_report(report, o.out);
    return report.infringed ? 1 : 0;
}

int run_mitigate(const MitigateOpts& o) {
    MitigationFixture fx = load_mitigation_fixture(o.fixtures);
    MitigationConfig cfg;
    cfg.lambda_r = o.lambda_r;
    cfg.lambda_a = o.lambda_a;
    cfg.beta = o.beta;
    cfg.pi = o.pi;
    cfg.w_preserve = weight_schedule_from_name(o.w_preserve);
    cfg.w_risk = weight_schedule_from_name(o.w_risk);
    cfg.w_align = weight_schedule_from_name(o.w_align);
    ToyPredictor predictor = starting_predictor(fx);
    FinetuneResult result = toy_finetune(predictor, fx, cfg, o.steps, o.lr);
    std::string lines;
    for (std::size_t i = 0; i < result.trajectory.size(); ++i) {
        const LossReport& r = result.trajectory[i];
        json record;
        record["iter"] = static_cast<std::int64_t>(i);
        record["l_preserve"] = r.l_preserve;
        record["l_risk"] = r.l_risk;
        record["l_align"] = r.l_align;
        record["l_total"] = r.l_total;
        lines += canonical_dump_compact(record) + "\n";
    }
    emit_text(lines, o.out);
    if (result.diverged) {
        std::cerr << "error: mitigation run diverged; loss trajectory truncated\n";
        return 3;
    }
    return 0;
}

int run_calibrate(const CalibrateOpts& o) {
    CalibrationResult r = calibrate(load_labeled_pairs(o.pairs), o.f_beta);
    json j;
    j["tau"] = r.tau;
    j["f_score"] = r.f_score;
    j["f_beta"] = r.f_beta;
    j["true_positives"] = r.true_positives;
    j["false_positives"] = r.false_positives;
    j["false_negatives"] = r.false_negatives;
    emit_text(canonical_dump(j) + "\n", o.out);
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"prompt and latent-space copyright-risk toolkit", "amcr"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand name
    app.set_config("--config", "", "read option defaults from an INI file")
        ->envname("AMCR_CONFIG");

    SanitizeOpts sanitize_opts;
    auto* sanitize_cmd = app.add_subcommand(
        "sanitize", "replace risky prompt phrases, emit trace and negative prompts");
    sanitize_cmd->add_option("--prompt", sanitize_opts.prompt, "raw prompt text")
        ->required()
        ->envname("AMCR_PROMPT");
    sanitize_cmd->add_option("--corpus", sanitize_opts.corpus, "risk corpus (JSONL)")
        ->required()
        ->check(CLI::ExistingFile)
        ->envname("AMCR_CORPUS");
    sanitize_cmd
        ->add_option("--candidates", sanitize_opts.candidates,
                     "replacement table (JSONL); empty table when omitted")
        ->check(CLI::ExistingFile)
        ->envname("AMCR_CANDIDATES");
    sanitize_cmd
        ->add_option("--lambda", sanitize_opts.lambda,
                     "risk-reduction vs alignment trade-off")
        ->check(CLI::Range(0.0, 1.0));
    sanitize_cmd->add_option("--budget", sanitize_opts.budget, "max replacements")
        ->check(CLI::Range(1, 1000));
    sanitize_cmd->add_option("--gamma", sanitize_opts.gamma, "marginal-improvement floor");
    sanitize_cmd->add_option("--window", sanitize_opts.window,
                             "acceptances in the marginal window")
        ->check(CLI::Range(1, 1000));
    sanitize_cmd
        ->add_option("--quantile", sanitize_opts.quantile,
                     "stop once risks fall below this initial-risk quantile")
        ->check(CLI::Range(0.0, 1.0));
    sanitize_cmd->add_option("--cap", sanitize_opts.cap, "candidates per element")
        ->check(CLI::Range(1, 100));
    sanitize_cmd->add_option("--seed", sanitize_opts.seed, "test-encoder seed")
        ->envname("AMCR_SEED");
    sanitize_cmd->add_option("--dim", sanitize_opts.dim, "embedding dimension")
        ->check(CLI::Range(17, 1 << 14))
        ->envname("AMCR_DIM");
    sanitize_cmd->add_option("--out", sanitize_opts.out, "report file (default stdout)");

    ScoreOpts score_opts;
    auto* score_cmd =
        app.add_subcommand("score", "slot-structured risk report for a prompt");
    score_cmd->add_option("--prompt", score_opts.prompt, "raw prompt text")
        ->required()
        ->envname("AMCR_PROMPT");
    score_cmd->add_option("--corpus", score_opts.corpus, "risk corpus (JSONL)")
        ->required()
        ->check(CLI::ExistingFile)
        ->envname("AMCR_CORPUS");
    score_cmd->add_option("--seed", score_opts.seed, "test-encoder seed")
        ->envname("AMCR_SEED");
    score_cmd->add_option("--dim", score_opts.dim, "embedding dimension")
        ->check(CLI::Range(17, 1 << 14))
        ->envname("AMCR_DIM");
    score_cmd->add_option("--out", score_opts.out, "report file (default stdout)");

    MaskOpts mask_opts;
    auto* mask_cmd =
        app.add_subcommand("mask", "soft mask from a cross-attention stack");
    mask_cmd->add_option("--attn", mask_opts.attn, "attention container")
        ->required()
        ->check(CLI::ExistingFile);
    mask_cmd->add_option("--tokens", mask_opts.tokens, "token subset, e.g. 1,3")
        ->delimiter(',');
    mask_cmd
        ->add_option("--layer-weights", mask_opts.layer_weights,
                     "per-layer aggregation weights")
        ->delimiter(',');
    mask_cmd->add_option("--out", mask_opts.out, "PGM image path")->required();

    TrajectoryOpts traj_opts;
    auto* traj_cmd = app.add_subcommand(
        "trajectory", "aligned clean-estimate trajectories from latents");
    traj_cmd->add_option("--ref", traj_opts.ref, "reference latent")
        ->required()
        ->check(CLI::ExistingFile);
    traj_cmd
        ->add_option("--gen", traj_opts.gen,
                     "generation latent (defaults to the reference)")
        ->check(CLI::ExistingFile);
    traj_cmd->add_option("--steps", traj_opts.steps, "timesteps, e.g. 1,4,8")
        ->required()
        ->delimiter(',');
    traj_cmd->add_option("--seed", traj_opts.seed, "noise seed")->envname("AMCR_SEED");
    traj_cmd->add_option("--T", traj_opts.T, "schedule length")
        ->check(CLI::Range(1, 100000));
    traj_cmd->add_option("--family", traj_opts.family, "noise schedule family")
        ->check(CLI::IsMember({"cosine", "linear"}));
    traj_cmd->add_option("--out-gen", traj_opts.out_gen, "generation trajectory file")
        ->required();
    traj_cmd->add_option("--out-ref", traj_opts.out_ref, "reference trajectory file")
        ->required();

    DetectOpts detect_opts;
    auto* detect_cmd = app.add_subcommand(
        "detect", "masked partial-similarity detection over aligned trajectories");
    detect_cmd->add_option("--gen", detect_opts.gen, "generation trajectory")
        ->required()
        ->check(CLI::ExistingFile);
    detect_cmd->add_option("--ref", detect_opts.ref, "reference trajectory")
        ->required()
        ->check(CLI::ExistingFile);
    detect_cmd->add_option("--masks", detect_opts.masks, "per-step mask container")
        ->required()
        ->check(CLI::ExistingFile);
    detect_cmd->add_option("--beta", detect_opts.beta, "similarity sharpness")
        ->envname("AMCR_BETA");
    detect_cmd->add_option("--tau", detect_opts.tau, "infringement threshold")
        ->envname("AMCR_TAU");
    detect_cmd->add_option("--rule", detect_opts.rule, "aggregation rule")
        ->check(CLI::IsMember({"weighted-mean", "max-over-steps", "mean", "max"}));
    detect_cmd->add_option("--pi", detect_opts.pi, "step weights, e.g. 0.2,0.3,0.5")
        ->delimiter(',');
    detect_cmd->add_option("--encoder-seed", detect_opts.encoder_seed,
                           "patch-encoder seed")
        ->envname("AMCR_SEED");
    detect_cmd->add_option("--dim", detect_opts.dim, "patch embedding dimension")
        ->check(CLI::Range(1, 1 << 14));
    detect_cmd->add_option("--grid-rows", detect_opts.grid_rows, "patch grid rows")
        ->check(CLI::Range(1, 1 << 12));
    detect_cmd->add_option("--grid-cols", detect_opts.grid_cols, "patch grid cols")
        ->check(CLI::Range(1, 1 << 12));
    detect_cmd->add_option("--out", detect_opts.out, "report file (default stdout)");

    MitigateOpts mitigate_opts;
    auto* mitigate_cmd = app.add_subcommand(
        "mitigate", "finetune the toy predictor against the three-term objective");
    mitigate_cmd->add_option("--fixtures", mitigate_opts.fixtures,
                             "mitigation fixture bundle directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    mitigate_cmd->add_option("--steps", mitigate_opts.steps, "descent steps")
        ->required()
        ->check(CLI::Range(0, 1000000));
    mitigate_cmd->add_option("--lr", mitigate_opts.lr, "learning rate")->required();
    mitigate_cmd->add_option("--lambda-r", mitigate_opts.lambda_r, "risk weight")
        ->envname("AMCR_LAMBDA_R");
    mitigate_cmd->add_option("--lambda-a", mitigate_opts.lambda_a, "alignment weight")
        ->envname("AMCR_LAMBDA_A");
    mitigate_cmd->add_option("--beta", mitigate_opts.beta, "similarity sharpness")
        ->envname("AMCR_BETA");
    mitigate_cmd->add_option("--pi", mitigate_opts.pi, "step distribution")
        ->delimiter(',');
    mitigate_cmd->add_option("--w-preserve", mitigate_opts.w_preserve,
                             "preservation weighting")
        ->check(CLI::IsMember({"uniform", "snr"}));
    mitigate_cmd->add_option("--w-risk", mitigate_opts.w_risk, "risk weighting")
        ->check(CLI::IsMember({"uniform", "snr"}));
    mitigate_cmd->add_option("--w-align", mitigate_opts.w_align, "alignment weighting")
        ->check(CLI::IsMember({"uniform", "snr"}));
    mitigate_cmd->add_option("--out", mitigate_opts.out,
                             "loss trajectory JSONL (default stdout)");

    CalibrateOpts calibrate_opts;
    auto* calibrate_cmd = app.add_subcommand(
        "calibrate", "F-score-optimal detection threshold from labeled pairs");
    calibrate_cmd->add_option("--pairs", calibrate_opts.pairs, "labeled pairs (JSONL)")
        ->required()
        ->check(CLI::ExistingFile);
    calibrate_cmd
        ->add_option("--f-beta", calibrate_opts.f_beta,
                     "operating point: < 1 favors precision, > 1 recall")
        ->check(CLI::Range(1e-6, 1e6));
    calibrate_cmd->add_option("--out", calibrate_opts.out,
                              "report file (default stdout)");

    std::vector<std::string> tokens(argv + 1, argv + argc);

    // CLI11 applies config files before environment variables, which would
    // let a file shadow AMCR_* settings. Splicing unset env-bound flags into
    // the command line keeps the documented order: flag, then env, then file.
    for (const CLI::App* sub :
         app.get_subcommands([](const CLI::App*) { return true; })) {
        bool named = false;
        for (const auto& tok : tokens)
            if (tok == sub->get_name()) named = true;
        if (!named) continue;
        for (const CLI::Option* opt :
             sub->get_options([](const CLI::Option*) { return true; })) {
            const std::string env = opt->get_envname();
            if (env.empty() || opt->get_lnames().empty()) continue;
            const char* value = std::getenv(env.c_str());
            if (value == nullptr || *value == '\0') continue;
            bool present = false;
            for (const auto& lname : opt->get_lnames()) {
                const std::string flag = "--" + lname;
                for (const auto& tok : tokens)
                    if (tok == flag || tok.rfind(flag + "=", 0) == 0)
                        present = true;
            }
            if (present) continue;
            tokens.push_back("--" + opt->get_lnames().front());
            tokens.push_back(value);
        }
    }

    std::reverse(tokens.begin(), tokens.end());  // the vector overload wants this
    try {
        app.parse(std::move(tokens));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(sanitize_cmd)) return run_sanitize(sanitize_opts);
        if (app.got_subcommand(score_cmd)) return run_score(score_opts);
        if (app.got_subcommand(mask_cmd)) return run_mask(mask_opts);
        if (app.got_subcommand(traj_cmd)) return run_trajectory(traj_opts);
        if (app.got_subcommand(detect_cmd)) return run_detect(detect_opts);
        if (app.got_subcommand(mitigate_cmd)) return run_mitigate(mitigate_opts);
        if (app.got_subcommand(calibrate_cmd)) return run_calibrate(calibrate_opts);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}

}  // namespace amcr::cli
