#include "amcr/sanitize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "amcr/numerics.hpp"
#include "amcr/text_util.hpp"

namespace amcr {

void SanitizerConfig::validate() const {
    if (lambda < 0.0 || lambda > 1.0)
        throw ValidationError("sanitizer lambda must lie in [0, 1]");
    if (budget < 0) throw ValidationError("sanitizer budget must be >= 0");
    if (gamma < 0.0) throw ValidationError("sanitizer gamma must be >= 0");
    if (window_m < 1) throw ValidationError("sanitizer window must be >= 1");
    if (risk_quantile < 0.0 || risk_quantile > 1.0)
        throw ValidationError("sanitizer risk quantile must lie in [0, 1]");
    if (candidates_per_element < 1)
        throw ValidationError("candidates_per_element must be >= 1");
}

std::string stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::Budget: return "Budget";
        case StopReason::MarginalImprovement: return "MarginalImprovement";
        case StopReason::RiskQuantile: return "RiskQuantile";
        case StopReason::Exhausted: return "Exhausted";
    }
    throw ValidationError("unknown stop reason value");
}

// ---------------------------------------------------------------------------
// Candidate providers

StaticCandidateTable StaticCandidateTable::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open candidate table " + file.string());
    StaticCandidateTable table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("candidate table line " + std::to_string(line_no) +
                                  ": " + e.what());
        }
        if (!rec.is_object() || !rec.contains("kind") || !rec.contains("phrase") ||
            !rec.contains("candidates") || !rec["candidates"].is_array())
            throw ValidationError("candidate table line " + std::to_string(line_no) +
                                  ": expected {kind, phrase, candidates}");
        std::vector<std::string> cands;
        for (const auto& c : rec["candidates"]) {
            if (!c.is_string())
                throw ValidationError("candidate table line " + std::to_string(line_no) +
                                      ": candidates must be strings");
            cands.push_back(c.get<std::string>());
        }
        table.add(rec["kind"].get<std::string>(), rec["phrase"].get<std::string>(),
                  std::move(cands));
    }
    return table;
}

void StaticCandidateTable::add(const std::string& kind, const std::string& phrase,
                               std::vector<std::string> candidates) {
    std::string k = fold(kind);
    if (k != "any" && k != "residue") (void)slot_kind_from_name(k);  // validate
    std::string p = phrase == "*" ? "*" : fold(phrase);
    table_[{k, p}] = std::move(candidates);
}

std::vector<std::string> StaticCandidateTable::candidates_for(const std::string& phrase,
                                                              SlotKind kind) {
    std::string p = fold(phrase);
    std::string k = slot_kind_name(kind);
    for (const auto& key : {std::pair{std::string("any"), p}, std::pair{k, p},
                            std::pair{k, std::string("*")}}) {
        auto it = table_.find(key);
        if (it != table_.end()) return it->second;
    }
    return {};
}

std::vector<std::string> FallbackCandidateProvider::candidates_for(
    const std::string& phrase, SlotKind kind) {
    try {
        return primary_.candidates_for(phrase, kind);
    } catch (const ProviderError&) {
        return fallback_.candidates_for(phrase, kind);
    }
}

std::vector<std::string> generate_candidates(const std::string& s, SlotKind kind,
                                             CandidateProvider& provider,
                                             const RiskCorpus& corpus, int cap) {
    if (trim(s).empty())
        throw ContractViolation("cannot generate candidates for an empty phrase");
    if (cap < 1) throw ContractViolation("candidate cap must be >= 1");
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& raw : provider.candidates_for(s, kind)) {
        std::string c = trim(raw);
        if (c.empty()) continue;
        if (!seen.insert(fold(c)).second) continue;
        if (corpus.contains(c)) continue;  // never suggest a corpus phrase
        out.push_back(std::move(c));
        if (static_cast<int>(out.size()) == cap) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation and selection

CandidateEval evaluate_candidate(const std::string& s_i, const std::string& c_m,
                                 const std::vector<std::string>& slot_phrases,
                                 const RiskCorpus& corpus, TextEncoder& encoder,
                                 double lambda) {
    if (trim(c_m).empty()) throw ContractViolation("candidate phrase is empty");
    double before = score_slot(slot_phrases, corpus, encoder);
    std::vector<std::string> after_phrases;
    bool substituted = false;
    for (const auto& p : slot_phrases) {
        if (!substituted && fold(p) == fold(s_i)) {
            after_phrases.push_back(c_m);
            substituted = true;
        } else {
            after_phrases.push_back(p);
        }
    }
    if (!substituted) after_phrases.push_back(c_m);
    double after = score_slot(after_phrases, corpus, encoder);

    CandidateEval eval;
    eval.delta_r = before - after;
    eval.align = cosine(encoder.embed_one(c_m), encoder.embed_one(s_i));
    eval.score = lambda * eval.delta_r + (1.0 - lambda) * eval.align;
    return eval;
}

std::optional<std::pair<std::string, CandidateEval>> select_replacement(
    const std::string& s_i, const std::vector<std::string>& candidates,
    const std::vector<std::string>& slot_phrases, const RiskCorpus& corpus,
    TextEncoder& encoder, double lambda) {
    std::optional<std::pair<std::string, CandidateEval>> best;
    for (const auto& c : candidates) {
        CandidateEval eval =
            evaluate_candidate(s_i, c, slot_phrases, corpus, encoder, lambda);
        if (eval.score <= 0.0 || eval.delta_r <= 0.0) continue;
        if (!best || eval.score > best->second.score) best = {c, eval};
    }
    return best;
}

// ---------------------------------------------------------------------------
// The loop

namespace {

// Nearest-rank quantile (1-indexed rank ceil(q * n)) of the values.
double nearest_rank_quantile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n));
    if (rank < 1) rank = 1;
    return values[rank - 1];
}

std::vector<double> occupied_risks(const SlotRiskReport& report,
                                   const StructuredPrompt& sp) {
    std::vector<double> out;
    for (SlotKind k : all_slot_kinds())
        if (!sp.at(k).empty()) out.push_back(report.bucket_risk(bucket_of(k)));
    if (!sp.residue.empty()) out.push_back(report.bucket_risk(RiskBucket::Residue));
    return out;
}

}  // namespace

SanitizationResult sanitize(const StructuredPrompt& sp, const RiskCorpus& corpus,
                            TextEncoder& encoder, CandidateProvider& candidates,
                            const SanitizerConfig& cfg) {
    cfg.validate();

    SanitizationResult result;
    result.sanitized = sp;
    result.warnings = sp.warnings;

    try {
        SlotRiskReport initial = rank_slots(result.sanitized, corpus, encoder);
        std::vector<double> initial_risks = occupied_risks(initial, result.sanitized);
        if (initial_risks.empty()) {
            result.stop_reason = StopReason::Exhausted;
            result.sanitized_flat = sp.empty() ? "" : reconstruct_prompt(result.sanitized);
            return result;
        }
        double quantile_threshold =
            nearest_rank_quantile(initial_risks, cfg.risk_quantile);

        // Phrases already tried (or installed as replacements), per slot.
        std::set<std::pair<SlotKind, std::string>> attempted;
        std::vector<double> accepted_deltas;

        for (;;) {
            if (static_cast<int>(result.trace.size()) >= cfg.budget) {
                result.stop_reason = StopReason::Budget;
                break;
            }
            if (static_cast<int>(accepted_deltas.size()) >= cfg.window_m) {
                double mean = 0.0;
                for (std::size_t i = accepted_deltas.size() - cfg.window_m;
                     i < accepted_deltas.size(); ++i)
                    mean += accepted_deltas[i];
                mean /= cfg.window_m;
                if (mean < cfg.gamma) {
                    result.stop_reason = StopReason::MarginalImprovement;
                    break;
                }
            }
            SlotRiskReport report = rank_slots(result.sanitized, corpus, encoder);
            std::vector<double> risks = occupied_risks(report, result.sanitized);
            if (*std::max_element(risks.begin(), risks.end()) < quantile_threshold) {
                result.stop_reason = StopReason::RiskQuantile;
                break;
            }

            // Highest-risk slot holding an unattempted phrase; within the
            // slot, its highest-risk unattempted phrase.
            SlotKind target_kind = SlotKind::Subject;
            std::string target;
            double target_risk = 0.0;
            bool found = false;
            for (RiskBucket b : report.ranking) {
                if (b == RiskBucket::Residue) continue;  // no candidate kind
                auto kind = static_cast<SlotKind>(static_cast<int>(b));
                for (const auto& phrase : result.sanitized.at(kind)) {
                    if (attempted.count({kind, fold(phrase)})) continue;
                    double r = report.per_phrase.at(phrase).score;
                    if (!found || r > target_risk) {
                        target_kind = kind;
                        target = phrase;
                        target_risk = r;
                        found = true;
                    }
                }
                if (found) break;
            }
            if (!found) {
                result.stop_reason = StopReason::Exhausted;
                break;
            }
            attempted.insert({target_kind, fold(target)});

            auto cands = generate_candidates(target, target_kind, candidates, corpus,
                                             cfg.candidates_per_element);
            auto chosen =
                select_replacement(target, cands, result.sanitized.at(target_kind),
                                   corpus, encoder, cfg.lambda);
            if (!chosen) continue;  // skip replacement for this slot

            auto& phrases = result.sanitized.at(target_kind);
            auto it = std::find(phrases.begin(), phrases.end(), target);
            *it = chosen->first;
            attempted.insert({target_kind, fold(chosen->first)});
            accepted_deltas.push_back(chosen->second.delta_r);
            result.negative_prompts.push_back(target);
            result.trace.push_back({target_kind, target, chosen->first,
                                    chosen->second.delta_r, chosen->second.align,
                                    chosen->second.score});
        }
    } catch (const SanitizeAborted&) {
        throw;
    } catch (const ProviderError& e) {
        result.warnings.push_back(std::string("aborted: ") + e.what());
        result.sanitized_flat =
            result.sanitized.empty() ? "" : reconstruct_prompt(result.sanitized);
        throw SanitizeAborted(e.what(), std::move(result));
    }

    result.sanitized_flat = reconstruct_prompt(result.sanitized);
    return result;
}

}  // namespace amcr
