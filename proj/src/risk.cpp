#include "amcr/risk.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "amcr/numerics.hpp"
#include "amcr/text_util.hpp"

namespace amcr {

bool RiskCorpus::contains(const std::string& phrase) const {
    std::string key = fold(phrase);
    return std::any_of(entries.begin(), entries.end(),
                       [&](const CorpusEntry& e) { return fold(e.phrase) == key; });
}

void RiskCorpus::validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
        if (trim(e.phrase).empty())
            throw ValidationError("corpus entry with empty phrase");
        if (!seen.insert(fold(e.phrase)).second)
            throw ValidationError("corpus phrase '" + e.phrase + "' duplicated");
        if (e.embedding.size() != dim())
            throw ConsistencyError("corpus mixes embedding dims " +
                                   std::to_string(dim()) + " and " +
                                   std::to_string(e.embedding.size()));
        require_finite(e.embedding, "corpus embedding for '" + e.phrase + "'");
        if (std::abs(e.embedding.norm() - 1.0) > 1e-9)
            throw ValidationError("corpus embedding for '" + e.phrase +
                                  "' is not unit norm");
    }
}

RiskCorpus load_corpus(const std::filesystem::path& file, TextEncoder& encoder) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open corpus file " + file.string());

    RiskCorpus corpus;
    corpus.encoder_id = encoder.id();
    std::set<std::string> seen;
    std::vector<std::size_t> pending;  // indices awaiting encoder embedding
    std::vector<std::string> pending_phrases;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw CorpusFormatError(std::string("invalid record: ") + e.what(), line_no);
        }
        if (!rec.is_object() || !rec.contains("phrase") || !rec["phrase"].is_string())
            throw CorpusFormatError("record lacks a string 'phrase' field", line_no);
        CorpusEntry entry;
        entry.phrase = trim(rec["phrase"].get<std::string>());
        if (entry.phrase.empty())
            throw CorpusFormatError("empty phrase", line_no);
        if (rec.contains("tag")) {
            if (!rec["tag"].is_string())
                throw CorpusFormatError("'tag' must be a string", line_no);
            entry.tag = rec["tag"].get<std::string>();
        }
        if (!seen.insert(fold(entry.phrase)).second) continue;  // first wins

        if (rec.contains("embedding")) {
            if (!rec["embedding"].is_array())
                throw CorpusFormatError("'embedding' must be an array", line_no);
            std::vector<double> vals;
            for (const auto& x : rec["embedding"]) {
                if (!x.is_number())
                    throw CorpusFormatError("'embedding' holds a non-numeric value",
                                            line_no);
                vals.push_back(x.get<double>());
            }
            if (static_cast<Eigen::Index>(vals.size()) != encoder.dim())
                throw ConsistencyError(
                    "corpus line " + std::to_string(line_no) + ": embedding dim " +
                    std::to_string(vals.size()) + " does not match encoder dim " +
                    std::to_string(encoder.dim()));
            VectorXd v = Eigen::Map<const VectorXd>(vals.data(),
                                                    static_cast<Eigen::Index>(vals.size()));
            require_finite(v, "corpus line " + std::to_string(line_no));
            entry.embedding = normalize_unit(v);
        } else {
            pending.push_back(corpus.entries.size());
            pending_phrases.push_back(entry.phrase);
        }
        corpus.entries.push_back(std::move(entry));
    }

    if (!pending.empty()) {
        auto vecs = encoder.embed(pending_phrases);
        if (vecs.size() != pending.size())
            throw ProtocolError("encoder returned " + std::to_string(vecs.size()) +
                                " vectors for " + std::to_string(pending.size()) +
                                " corpus phrases");
        for (std::size_t i = 0; i < pending.size(); ++i)
            corpus.entries[pending[i]].embedding = std::move(vecs[i]);
    }
    corpus.validate();
    return corpus;
}

RiskCorpus build_corpus(const std::vector<std::string>& phrases, TextEncoder& encoder) {
    RiskCorpus corpus;
    corpus.encoder_id = encoder.id();
    std::set<std::string> seen;
    std::vector<std::string> unique;
    for (const auto& p : phrases) {
        std::string t = trim(p);
        if (t.empty()) throw ValidationError("corpus phrase is empty");
        if (seen.insert(fold(t)).second) unique.push_back(t);
    }
    auto vecs = encoder.embed(unique);
    for (std::size_t i = 0; i < unique.size(); ++i)
        corpus.entries.push_back({unique[i], std::move(vecs[i]), ""});
    corpus.validate();
    return corpus;
}

RiskBucket bucket_of(SlotKind k) { return static_cast<RiskBucket>(static_cast<int>(k)); }

std::string bucket_name(RiskBucket b) {
    if (b == RiskBucket::Residue) return "residue";
    return slot_kind_name(static_cast<SlotKind>(static_cast<int>(b)));
}

const std::array<RiskBucket, kRiskBucketCount>& all_risk_buckets() {
    static const std::array<RiskBucket, kRiskBucketCount> buckets = [] {
        std::array<RiskBucket, kRiskBucketCount> b{};
        for (int i = 0; i < kRiskBucketCount; ++i) b[i] = static_cast<RiskBucket>(i);
        return b;
    }();
    return buckets;
}

double SlotRiskReport::max_risk() const {
    return *std::max_element(per_bucket.begin(), per_bucket.end());
}

PhraseRisk best_match(const VectorXd& query, const RiskCorpus& corpus) {
    if (corpus.entries.empty())
        throw ContractViolation("risk corpus is empty; nothing to score against");
    PhraseRisk best;
    best.score = -2.0;
    for (const auto& e : corpus.entries) {
        double c = cosine(query, e.embedding);
        if (c > best.score) {
            best.score = c;
            best.nearest_corpus_phrase = e.phrase;
        }
    }
    return best;
}

namespace {

void check_encoder(const RiskCorpus& corpus, TextEncoder& encoder) {
    if (corpus.encoder_id != encoder.id())
        throw ConsistencyError("corpus was embedded by '" + corpus.encoder_id +
                               "' but scoring uses '" + encoder.id() + "'");
}

}  // namespace

double score_text(const std::string& s, const RiskCorpus& corpus, TextEncoder& encoder) {
    if (trim(s).empty()) throw ContractViolation("cannot score an empty phrase");
    if (corpus.entries.empty())
        throw ContractViolation("risk corpus is empty; nothing to score against");
    check_encoder(corpus, encoder);
    return best_match(encoder.embed_one(s), corpus).score;
}

double score_slot(const std::vector<std::string>& phrases, const RiskCorpus& corpus,
                  TextEncoder& encoder) {
    if (corpus.entries.empty())
        throw ContractViolation("risk corpus is empty; nothing to score against");
    check_encoder(corpus, encoder);
    if (phrases.empty()) return 0.0;
    double best = -2.0;
    auto vecs = encoder.embed(phrases);
    for (const auto& v : vecs) best = std::max(best, best_match(v, corpus).score);
    return best;
}

SlotRiskReport rank_slots(const StructuredPrompt& sp, const RiskCorpus& corpus,
                          TextEncoder& encoder) {
    if (corpus.entries.empty())
        throw ContractViolation("risk corpus is empty; nothing to score against");
    check_encoder(corpus, encoder);

    std::vector<std::pair<RiskBucket, std::string>> items;
    for (const auto& [kind, phrase] : sp.all_phrases())
        items.emplace_back(bucket_of(kind), phrase);
    for (const auto& p : sp.residue) items.emplace_back(RiskBucket::Residue, p);

    SlotRiskReport report;
    if (!items.empty()) {
        std::vector<std::string> texts;
        for (const auto& [b, p] : items) {
            (void)b;
            texts.push_back(p);
        }
        auto vecs = encoder.embed(texts);
        std::array<bool, kRiskBucketCount> occupied{};
        for (std::size_t i = 0; i < items.size(); ++i) {
            PhraseRisk pr = best_match(vecs[i], corpus);
            report.per_phrase[items[i].second] = pr;
            int b = static_cast<int>(items[i].first);
            // A bucket's risk is the max of its own phrases, which may be
            // negative; only truly empty buckets stay at 0.
            report.per_bucket[b] =
                occupied[b] ? std::max(report.per_bucket[b], pr.score) : pr.score;
            occupied[b] = true;
        }
    }

    report.ranking.assign(all_risk_buckets().begin(), all_risk_buckets().end());
    std::stable_sort(report.ranking.begin(), report.ranking.end(),
                     [&](RiskBucket a, RiskBucket b) {
                         return report.bucket_risk(a) > report.bucket_risk(b);
                     });
    return report;
}

}  // namespace amcr
