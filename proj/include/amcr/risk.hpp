#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "amcr/encoders.hpp"
#include "amcr/prompt.hpp"
#include "amcr/types.hpp"

namespace amcr {

struct CorpusEntry {
    std::string phrase;
    VectorXd embedding;  // unit norm
    std::string tag;
};

// Embedded store of phrases describing protected entities. Scoring is a
// brute-force scan; exactness over speed at this scale.
struct RiskCorpus {
    std::vector<CorpusEntry> entries;
    std::string encoder_id;

    Eigen::Index dim() const { return entries.empty() ? 0 : entries.front().embedding.size(); }
    bool contains(const std::string& phrase) const;  // case-folded comparison
    void validate() const;
};

// Line-delimited records {"phrase": ..., "tag"?: ..., "embedding"?: [...]}.
// Entries without a precomputed embedding are embedded in one batch;
// precomputed vectors are unit-normalized and must match the encoder dim.
// Duplicate phrases (after folding) collapse to the first occurrence.
RiskCorpus load_corpus(const std::filesystem::path& file, TextEncoder& encoder);

// Corpus built directly from phrases; tags empty.
RiskCorpus build_corpus(const std::vector<std::string>& phrases, TextEncoder& encoder);

// Risk buckets: the eleven slot kinds plus a synthetic bucket for residue
// phrases, which ranks last among ties.
enum class RiskBucket {
    Subject,
    Scene,
    Action,
    Clothing,
    Colors,
    Props,
    Style,
    Lighting,
    Shot,
    TextLogoEntity,
    NamedEntity,
    Residue,
};

inline constexpr int kRiskBucketCount = 12;

RiskBucket bucket_of(SlotKind k);
std::string bucket_name(RiskBucket b);
const std::array<RiskBucket, kRiskBucketCount>& all_risk_buckets();

struct PhraseRisk {
    double score = 0.0;
    std::string nearest_corpus_phrase;
};

struct SlotRiskReport {
    std::map<std::string, PhraseRisk> per_phrase;
    std::array<double, kRiskBucketCount> per_bucket{};  // R_i; empty bucket = 0
    std::vector<RiskBucket> ranking;  // all buckets, R_i descending, bucket order on ties

    double bucket_risk(RiskBucket b) const { return per_bucket[static_cast<int>(b)]; }
    double max_risk() const;
};

// Max cosine of the query embedding against every corpus entry; first argmax
// wins as the nearest phrase.
PhraseRisk best_match(const VectorXd& query, const RiskCorpus& corpus);

// Eq-style phrase risk: max cosine between f(s) and the corpus entries.
double score_text(const std::string& s, const RiskCorpus& corpus, TextEncoder& encoder);

// Slot risk: max over the slot's phrases; empty slot scores 0.
double score_slot(const std::vector<std::string>& phrases, const RiskCorpus& corpus,
                  TextEncoder& encoder);

// Full per-phrase / per-bucket report with deterministic ranking. Residue
// phrases are scored under the Residue bucket.
SlotRiskReport rank_slots(const StructuredPrompt& sp, const RiskCorpus& corpus,
                          TextEncoder& encoder);

}  // namespace amcr
