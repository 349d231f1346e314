#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "amcr/risk.hpp"

namespace amcr {

struct SanitizerConfig {
    double lambda = 0.5;          // risk-reduction vs alignment trade-off
    int budget = 5;               // max accepted replacements
    double gamma = 0.02;          // marginal-improvement floor
    int window_m = 3;             // window for the marginal criterion
    double risk_quantile = 0.5;   // quantile of the initial risk distribution
    int candidates_per_element = 4;

    void validate() const;
};

enum class StopReason { Budget, MarginalImprovement, RiskQuantile, Exhausted };
std::string stop_reason_name(StopReason r);

struct TraceEntry {
    SlotKind slot;
    std::string original;
    std::string chosen;
    double delta_r = 0.0;
    double align = 0.0;
    double score = 0.0;
};

struct SanitizationResult {
    StructuredPrompt sanitized;
    std::string sanitized_flat;
    std::vector<std::string> negative_prompts;  // originals, acceptance order
    std::vector<TraceEntry> trace;
    StopReason stop_reason = StopReason::Exhausted;
    std::vector<std::string> warnings;
};

// Replacement-candidate backend (an LLM in the original pipeline).
class CandidateProvider {
public:
    virtual ~CandidateProvider() = default;
    virtual std::vector<std::string> candidates_for(const std::string& phrase,
                                                    SlotKind kind) = 0;
};

// Data-backed synonym table. Lookup order: ("any", phrase), then
// (kind, phrase), then (kind, "*"). Never throws.
class StaticCandidateTable : public CandidateProvider {
public:
    StaticCandidateTable() = default;

    // Line-delimited {"kind": "any"|slot name, "phrase": text|"*",
    // "candidates": [...]}.
    static StaticCandidateTable load(const std::filesystem::path& file);

    void add(const std::string& kind, const std::string& phrase,
             std::vector<std::string> candidates);
    std::vector<std::string> candidates_for(const std::string& phrase,
                                            SlotKind kind) override;

private:
    std::map<std::pair<std::string, std::string>, std::vector<std::string>> table_;
};

// Uses the primary provider, falling back to the secondary on any provider
// error (the shipped static table in the default pipeline).
class FallbackCandidateProvider : public CandidateProvider {
public:
    FallbackCandidateProvider(CandidateProvider& primary, CandidateProvider& fallback)
        : primary_(primary), fallback_(fallback) {}
    std::vector<std::string> candidates_for(const std::string& phrase,
                                            SlotKind kind) override;

private:
    CandidateProvider& primary_;
    CandidateProvider& fallback_;
};

// Provider output cleaned for the loop: trimmed, deduplicated in order,
// corpus phrases removed, capped at cap entries.
std::vector<std::string> generate_candidates(const std::string& s, SlotKind kind,
                                             CandidateProvider& provider,
                                             const RiskCorpus& corpus, int cap);

struct CandidateEval {
    double delta_r = 0.0;  // slot risk before minus after substitution
    double align = 0.0;    // cosine between candidate and original
    double score = 0.0;    // lambda * delta_r + (1 - lambda) * align
};

CandidateEval evaluate_candidate(const std::string& s_i, const std::string& c_m,
                                 const std::vector<std::string>& slot_phrases,
                                 const RiskCorpus& corpus, TextEncoder& encoder,
                                 double lambda);

// Highest score among candidates with score > 0 and delta_r > 0; earliest
// candidate wins ties; nullopt when none qualifies.
std::optional<std::pair<std::string, CandidateEval>> select_replacement(
    const std::string& s_i, const std::vector<std::string>& candidates,
    const std::vector<std::string>& slot_phrases, const RiskCorpus& corpus,
    TextEncoder& encoder, double lambda);

// Thrown when a provider or encoder fails mid-loop; carries the work done
// so far so callers can persist the partial trace.
class SanitizeAborted : public ProviderError {
public:
    SanitizeAborted(const std::string& what, SanitizationResult partial)
        : ProviderError(what), partial_(std::move(partial)) {}
    const SanitizationResult& partial() const { return partial_; }

private:
    SanitizationResult partial_;
};

// High-to-low risk replacement loop with re-ranking after every acceptance.
// Stops on the first satisfied criterion: budget reached, marginal
// improvement below gamma over the last window_m acceptances, all remaining
// risks below the chosen quantile of the initial distribution, or no
// unattempted phrase left.
SanitizationResult sanitize(const StructuredPrompt& sp, const RiskCorpus& corpus,
                            TextEncoder& encoder, CandidateProvider& candidates,
                            const SanitizerConfig& cfg = {});

}  // namespace amcr
