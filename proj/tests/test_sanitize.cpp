#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "amcr/numerics.hpp"
#include "amcr/prompt.hpp"
#include "amcr/risk.hpp"
#include "amcr/sanitize.hpp"
#include "amcr/text_util.hpp"
#include "oracles.hpp"

using namespace amcr;

namespace {

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& contents) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("amcr_sanitize_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++) + ".jsonl");
        std::ofstream out(path);
        out << contents;
    }
    ~TempFile() { std::filesystem::remove(path); }
};

// Sparse planted vectors, oracle-side: normalize, then dot over shared axes.
using Coeffs = std::vector<std::pair<int, double>>;

double oracle_cos(const Coeffs& a, const Coeffs& b) {
    auto norm = [](const Coeffs& c) {
        double s = 0.0;
        for (auto& [i, v] : c) s += v * v;
        return std::sqrt(s);
    };
    double dot = 0.0;
    for (auto& [i, v] : a)
        for (auto& [j, w] : b)
            if (i == j) dot += v * w;
    return dot / (norm(a) * norm(b));
}

// Provider backed by a folded-phrase map; absent keys give no candidates.
class MapCandidates : public CandidateProvider {
public:
    explicit MapCandidates(std::map<std::string, std::vector<std::string>> m)
        : map_(std::move(m)) {}
    std::vector<std::string> candidates_for(const std::string& phrase,
                                            SlotKind) override {
        auto it = map_.find(fold(phrase));
        return it == map_.end() ? std::vector<std::string>{} : it->second;
    }

private:
    std::map<std::string, std::vector<std::string>> map_;
};

class DownProvider : public CandidateProvider {
public:
    std::vector<std::string> candidates_for(const std::string&, SlotKind) override {
        throw ProviderUnavailable("backend offline");
    }
};

// Succeeds through `inner` until the nth call, then fails like a dead backend.
class FailsOnNthCall : public CandidateProvider {
public:
    FailsOnNthCall(CandidateProvider& inner, int n) : inner_(inner), fail_at_(n) {}
    std::vector<std::string> candidates_for(const std::string& phrase,
                                            SlotKind kind) override {
        if (++calls_ == fail_at_) throw ProviderUnavailable("backend offline");
        return inner_.candidates_for(phrase, kind);
    }

private:
    CandidateProvider& inner_;
    int fail_at_;
    int calls_ = 0;
};

const std::vector<std::string> kFixtureCorpus = {
    "red cap and blue overalls", "minimal bitten apple logo with leaf",
    "mario the plumber", "mickey mouse", "iron man armor"};

StaticCandidateTable shipped_table() {
    return StaticCandidateTable::load(
        std::filesystem::path(AMCR_SOURCE_DIR) / "data" / "candidates.jsonl");
}

// Three risky slots on private axes plus one orthogonal filler slot. The
// loop walkthrough for this fixture is hand-simulated in the tests below.
const std::map<std::string, DeterministicTestEncoder::Planted> kSynth = {
    {"crimson cloak of the guardian", {{10, 1.0}}},
    {"ruby amulet sigil", {{11, 1.0}}},
    {"alpha hero crest", {{12, 1.0}}},
    {"crimson cloak", {{10, 0.95}, {13, 0.31225}}},
    {"ruby amulet", {{11, 0.85}, {14, 0.52678}}},
    {"alpha hero", {{12, 0.60}, {15, 0.80}}},
    {"plain red cape", {{10, 0.25}, {13, 0.96825}}},
    {"gray tunic", {{10, 0.10}, {13, 0.40}, {14, 0.91104}}},
    {"simple pendant", {{11, 0.20}, {14, 0.97980}}},
    {"stone charm", {{11, 0.30}, {14, 0.95394}}},
    {"brave adventurer", {{12, 0.15}, {15, 0.98861}}},
    {"mysterious figure", {{12, 0.35}, {15, 0.93675}}},
};

DeterministicTestEncoder synth_encoder() {
    return DeterministicTestEncoder(
        0, 64, std::map<std::string, DeterministicTestEncoder::Planted>(kSynth));
}

RiskCorpus synth_corpus(TextEncoder& enc) {
    return build_corpus({"crimson cloak of the guardian", "ruby amulet sigil",
                         "alpha hero crest"},
                        enc);
}

StructuredPrompt synth_prompt() {
    StructuredPrompt sp;
    sp.at(SlotKind::Subject) = {"alpha hero"};
    sp.at(SlotKind::Action) = {"walking forward"};  // hashed, zero risk
    sp.at(SlotKind::Clothing) = {"crimson cloak"};
    sp.at(SlotKind::Props) = {"ruby amulet"};
    sp.source = "alpha hero, walking forward, crimson cloak, with ruby amulet";
    return sp;
}

MapCandidates synth_candidates() {
    return MapCandidates(std::map<std::string, std::vector<std::string>>{
        {"crimson cloak", {"plain red cape", "gray tunic"}},
        {"ruby amulet", {"simple pendant", "stone charm"}},
        {"alpha hero", {"brave adventurer", "mysterious figure"}},
    });
}

double max_occupied_risk(const StructuredPrompt& sp, const RiskCorpus& corpus,
                         TextEncoder& enc) {
    return rank_slots(sp, corpus, enc).max_risk();
}

}  // namespace

TEST_SUITE("sanitizer config") {
    TEST_CASE("defaults are valid") {
        SanitizerConfig cfg;
        CHECK_NOTHROW(cfg.validate());
        CHECK(cfg.lambda == 0.5);
        CHECK(cfg.budget == 5);
        CHECK(cfg.gamma == 0.02);
        CHECK(cfg.window_m == 3);
        CHECK(cfg.risk_quantile == 0.5);
        CHECK(cfg.candidates_per_element == 4);
    }

    TEST_CASE("each field is range-checked") {
        SanitizerConfig cfg;
        cfg.lambda = -0.1;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg.lambda = 1.1;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = {};
        cfg.budget = -1;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = {};
        cfg.gamma = -1e-9;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = {};
        cfg.window_m = 0;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = {};
        cfg.risk_quantile = 1.01;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = {};
        cfg.candidates_per_element = 0;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }

    TEST_CASE("stop reasons have stable names") {
        CHECK(stop_reason_name(StopReason::Budget) == "Budget");
        CHECK(stop_reason_name(StopReason::MarginalImprovement) ==
              "MarginalImprovement");
        CHECK(stop_reason_name(StopReason::RiskQuantile) == "RiskQuantile");
        CHECK(stop_reason_name(StopReason::Exhausted) == "Exhausted");
    }
}

TEST_SUITE("candidate table") {
    TEST_CASE("lookup prefers any, then kind-specific, then wildcard") {
        StaticCandidateTable t;
        t.add("any", "red cap", {"from any"});
        t.add("clothing", "red cap", {"from kind"});
        t.add("clothing", "*", {"from wildcard"});
        CHECK(t.candidates_for("red cap", SlotKind::Clothing) ==
              std::vector<std::string>{"from any"});

        StaticCandidateTable kind_only;
        kind_only.add("clothing", "red cap", {"from kind"});
        kind_only.add("clothing", "*", {"from wildcard"});
        CHECK(kind_only.candidates_for("red cap", SlotKind::Clothing) ==
              std::vector<std::string>{"from kind"});
        CHECK(kind_only.candidates_for("green cap", SlotKind::Clothing) ==
              std::vector<std::string>{"from wildcard"});
        CHECK(kind_only.candidates_for("red cap", SlotKind::Props).empty());
    }

    TEST_CASE("keys fold case and whitespace") {
        StaticCandidateTable t;
        t.add("Clothing", "  Red   CAP ", {"x"});
        CHECK(t.candidates_for("red cap", SlotKind::Clothing) ==
              std::vector<std::string>{"x"});
    }

    TEST_CASE("unknown kind is rejected, residue is allowed") {
        StaticCandidateTable t;
        CHECK_THROWS_AS(t.add("mood", "x", {"y"}), ValidationError);
        CHECK_NOTHROW(t.add("residue", "x", {"y"}));
    }

    TEST_CASE("load parses line-delimited records") {
        TempFile f("{\"kind\": \"any\", \"phrase\": \"red cap\", "
                   "\"candidates\": [\"plain hat\"]}\n"
                   "\n"
                   "{\"kind\": \"subject\", \"phrase\": \"*\", "
                   "\"candidates\": [\"a\", \"b\"]}\n");
        auto t = StaticCandidateTable::load(f.path);
        CHECK(t.candidates_for("red cap", SlotKind::Clothing) ==
              std::vector<std::string>{"plain hat"});
        CHECK(t.candidates_for("anything", SlotKind::Subject) ==
              std::vector<std::string>{"a", "b"});
    }

    TEST_CASE("load rejects malformed records") {
        TempFile bad_json("not json\n");
        CHECK_THROWS_AS(StaticCandidateTable::load(bad_json.path), ValidationError);
        TempFile missing_key("{\"kind\": \"any\", \"candidates\": []}\n");
        CHECK_THROWS_AS(StaticCandidateTable::load(missing_key.path),
                        ValidationError);
        TempFile bad_cand(
            "{\"kind\": \"any\", \"phrase\": \"x\", \"candidates\": [1]}\n");
        CHECK_THROWS_AS(StaticCandidateTable::load(bad_cand.path), ValidationError);
        CHECK_THROWS_AS(StaticCandidateTable::load("/nonexistent/table.jsonl"),
                        IoError);
    }

    TEST_CASE("shipped table covers the fixture phrases") {
        auto t = shipped_table();
        auto red_cap = t.candidates_for("red cap", SlotKind::Clothing);
        REQUIRE(red_cap.size() == 2);
        CHECK(red_cap[0] == "neutral-colored protective cap");
        CHECK(red_cap[1] == "plain work hat");
        CHECK(t.candidates_for("bitten apple logo", SlotKind::TextLogoEntity)
                  .size() == 2);
        CHECK(t.candidates_for("cheerful plumber", SlotKind::Subject).size() == 2);
        CHECK(t.candidates_for("plumber", SlotKind::Subject).size() == 2);
        CHECK(t.candidates_for("blue overalls", SlotKind::Clothing).size() == 2);
    }
}

TEST_SUITE("fallback provider") {
    TEST_CASE("falls back on provider errors only") {
        DownProvider down;
        StaticCandidateTable table;
        table.add("any", "red cap", {"plain hat"});
        FallbackCandidateProvider chain(down, table);
        CHECK(chain.candidates_for("red cap", SlotKind::Clothing) ==
              std::vector<std::string>{"plain hat"});

        MapCandidates primary(std::map<std::string, std::vector<std::string>>{
            {"red cap", {"primary hat"}}});
        FallbackCandidateProvider prefer(primary, table);
        CHECK(prefer.candidates_for("red cap", SlotKind::Clothing) ==
              std::vector<std::string>{"primary hat"});
    }

    TEST_CASE("non-provider errors propagate") {
        class Broken : public CandidateProvider {
        public:
            std::vector<std::string> candidates_for(const std::string&,
                                                    SlotKind) override {
                throw ContractViolation("caller bug");
            }
        } broken;
        StaticCandidateTable table;
        FallbackCandidateProvider chain(broken, table);
        CHECK_THROWS_AS(chain.candidates_for("x", SlotKind::Subject),
                        ContractViolation);
    }
}

TEST_SUITE("candidate generation") {
    TEST_CASE("trims, deduplicates, and excludes corpus phrases") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus(kFixtureCorpus, enc);
        MapCandidates provider(std::map<std::string, std::vector<std::string>>{
            {"red cap",
             {"  plain hat  ", "", "plain hat", "Plain HAT", "MARIO the plumber",
              "другое"}}});
        auto out =
            generate_candidates("red cap", SlotKind::Clothing, provider, corpus, 10);
        CHECK(out == std::vector<std::string>{"plain hat", "другое"});
    }

    TEST_CASE("caps the list in provider order") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus({"mickey mouse"}, enc);
        MapCandidates provider(std::map<std::string, std::vector<std::string>>{
            {"x", {"a", "b", "c", "d", "e"}}});
        auto out = generate_candidates("x", SlotKind::Subject, provider, corpus, 3);
        CHECK(out == std::vector<std::string>{"a", "b", "c"});
    }

    TEST_CASE("preconditions") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus({"mickey mouse"}, enc);
        MapCandidates provider({});
        CHECK_THROWS_AS(
            generate_candidates("  ", SlotKind::Subject, provider, corpus, 4),
            ContractViolation);
        CHECK_THROWS_AS(
            generate_candidates("x", SlotKind::Subject, provider, corpus, 0),
            ContractViolation);
    }
}

TEST_SUITE("candidate evaluation") {
    TEST_CASE("replacing a phrase with itself scores 1 - lambda") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus({"red cap and blue overalls"}, enc);
        auto eval = evaluate_candidate("red cap", "red cap", {"red cap"}, corpus,
                                       enc, 0.25);
        CHECK(eval.delta_r == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(eval.align == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(eval.score == doctest::Approx(0.75).epsilon(1e-9));
    }

    TEST_CASE("closed-form trade-off: dR 0.3, align 0.8, lambda 0.5 gives 0.55") {
        // Planted so the numbers come out exactly: the original sits at 0.9
        // against the corpus anchor, the candidate at 0.6, and the filler
        // coefficients are solved for unit norm and a 0.8 cosine.
        double bs = std::sqrt(1.0 - 0.81);
        double bc = (0.8 - 0.54) / bs;
        double cc = std::sqrt(1.0 - 0.36 - bc * bc);
        std::map<std::string, DeterministicTestEncoder::Planted> planted = {
            {"risk anchor alpha", {{10, 1.0}}},
            {"warm crimson shawl", {{10, 0.9}, {13, bs}}},
            {"dull gray wrap", {{10, 0.6}, {13, bc}, {14, cc}}},
        };
        DeterministicTestEncoder enc(0, 64, planted);
        auto corpus = build_corpus({"risk anchor alpha"}, enc);

        auto eval = evaluate_candidate("warm crimson shawl", "dull gray wrap",
                                       {"warm crimson shawl"}, corpus, enc, 0.5);
        CHECK(eval.delta_r == doctest::Approx(0.3).epsilon(1e-9));
        CHECK(eval.align == doctest::Approx(0.8).epsilon(1e-9));
        CHECK(eval.score == doctest::Approx(0.55).epsilon(1e-9));

        auto risk_only = evaluate_candidate("warm crimson shawl", "dull gray wrap",
                                            {"warm crimson shawl"}, corpus, enc, 1.0);
        CHECK(risk_only.score == doctest::Approx(risk_only.delta_r).epsilon(1e-12));
        auto align_only = evaluate_candidate("warm crimson shawl", "dull gray wrap",
                                             {"warm crimson shawl"}, corpus, enc, 0.0);
        CHECK(align_only.score == doctest::Approx(align_only.align).epsilon(1e-12));
    }

    TEST_CASE("delta is slot-level: a second risky phrase caps the gain") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus({"red cap and blue overalls"}, enc);
        // Slot risk before is max(0.90, 0.88); replacing only "red cap"
        // leaves "blue overalls", so after is 0.88 and the gain is 0.02
        // even though the candidate itself scores near zero.
        auto eval = evaluate_candidate("red cap", "neutral-colored protective cap",
                                       {"red cap", "blue overalls"}, corpus, enc, 0.5);
        CHECK(eval.delta_r == doctest::Approx(0.02).epsilon(5e-3));
        auto alone = evaluate_candidate("red cap", "neutral-colored protective cap",
                                        {"red cap"}, corpus, enc, 0.5);
        CHECK(alone.delta_r == doctest::Approx(0.80).epsilon(5e-3));
        CHECK(eval.align == doctest::Approx(alone.align).epsilon(1e-12));
    }

    TEST_CASE("empty candidate is rejected") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus({"mickey mouse"}, enc);
        CHECK_THROWS_AS(
            evaluate_candidate("x", "  ", {"x"}, corpus, enc, 0.5),
            ContractViolation);
    }
}

TEST_SUITE("replacement selection") {
    TEST_CASE("zero risk reduction is rejected even with high alignment") {
        std::map<std::string, DeterministicTestEncoder::Planted> planted = {
            {"anchor", {{10, 1.0}}},
            {"original phrase", {{10, 0.9}, {13, std::sqrt(0.19)}}},
            // Same corpus cosine as the original, different filler axis.
            {"sidestep phrase", {{10, 0.9}, {14, std::sqrt(0.19)}}},
            {"riskier phrase", {{10, 0.95}, {13, std::sqrt(1.0 - 0.9025)}}},
        };
        DeterministicTestEncoder enc(0, 64, planted);
        auto corpus = build_corpus({"anchor"}, enc);
        auto pick = select_replacement("original phrase",
                                       {"sidestep phrase", "riskier phrase"},
                                       {"original phrase"}, corpus, enc, 0.5);
        CHECK_FALSE(pick.has_value());
    }

    TEST_CASE("earliest candidate wins exact ties") {
        std::map<std::string, DeterministicTestEncoder::Planted> planted = {
            {"anchor", {{10, 1.0}}},
            {"original phrase", {{10, 0.9}, {13, std::sqrt(0.19)}}},
            {"twin one", {{10, 0.2}, {13, std::sqrt(0.96)}}},
            {"twin two", {{10, 0.2}, {13, std::sqrt(0.96)}}},
        };
        DeterministicTestEncoder enc(0, 64, planted);
        auto corpus = build_corpus({"anchor"}, enc);
        auto pick = select_replacement("original phrase", {"twin one", "twin two"},
                                       {"original phrase"}, corpus, enc, 0.5);
        REQUIRE(pick.has_value());
        CHECK(pick->first == "twin one");
    }

    TEST_CASE("selection matches a brute-force argmax oracle") {
        oracle::Rng rng(2026);
        const double lambda = 0.5;
        const Coeffs s_coeffs = {{10, 0.9}, {13, std::sqrt(0.19)}};
        for (int iter = 0; iter < 10; ++iter) {
            std::map<std::string, DeterministicTestEncoder::Planted> planted = {
                {"anchor", {{10, 1.0}}},
                {"original phrase", s_coeffs},
            };
            std::vector<std::string> names;
            std::vector<Coeffs> coeffs;
            for (int k = 0; k < 6; ++k) {
                double r = rng.uniform() * 0.99;
                double u = rng.uniform() * std::sqrt(1.0 - r * r);
                double w = std::sqrt(std::max(0.0, 1.0 - r * r - u * u));
                Coeffs c = {{10, r}, {13, u}, {14, w}};
                std::string name = "cand " + std::to_string(iter) + " " +
                                   std::to_string(k);
                planted[name] = c;
                names.push_back(name);
                coeffs.push_back(c);
            }
            DeterministicTestEncoder enc(0, 64, planted);
            auto corpus = build_corpus({"anchor"}, enc);

            // Oracle: replicate the rule with independent sparse arithmetic.
            int best_k = -1;
            double best_score = 0.0;
            for (int k = 0; k < 6; ++k) {
                double risk = oracle_cos(coeffs[k], {{10, 1.0}});
                double dr = 0.9 - risk;
                double align = oracle_cos(coeffs[k], s_coeffs);
                double score = lambda * dr + (1.0 - lambda) * align;
                if (score <= 0.0 || dr <= 0.0) continue;
                if (best_k < 0 || score > best_score) {
                    best_k = k;
                    best_score = score;
                }
            }

            auto pick = select_replacement("original phrase", names,
                                           {"original phrase"}, corpus, enc, lambda);
            if (best_k < 0) {
                CHECK_FALSE(pick.has_value());
            } else {
                REQUIRE(pick.has_value());
                CHECK(pick->first == names[best_k]);
                CHECK(pick->second.score ==
                      doctest::Approx(best_score).epsilon(1e-9));
            }
        }
    }
}

TEST_SUITE("sanitize loop") {
    TEST_CASE("zero budget stops immediately") {
        auto enc = synth_encoder();
        auto corpus = synth_corpus(enc);
        auto provider = synth_candidates();
        auto sp = synth_prompt();
        SanitizerConfig cfg;
        cfg.budget = 0;
        auto res = sanitize(sp, corpus, enc, provider, cfg);
        CHECK(res.stop_reason == StopReason::Budget);
        CHECK(res.trace.empty());
        CHECK(res.negative_prompts.empty());
        CHECK(res.sanitized.slots == sp.slots);
        CHECK(res.sanitized_flat == reconstruct_prompt(sp));
    }

    TEST_CASE("budget of one accepts exactly the top replacement") {
        auto enc = synth_encoder();
        auto corpus = synth_corpus(enc);
        auto provider = synth_candidates();
        SanitizerConfig cfg;
        cfg.budget = 1;
        auto res = sanitize(synth_prompt(), corpus, enc, provider, cfg);
        CHECK(res.stop_reason == StopReason::Budget);
        REQUIRE(res.trace.size() == 1);
        CHECK(res.trace[0].slot == SlotKind::Clothing);
        CHECK(res.trace[0].original == "crimson cloak");
        CHECK(res.trace[0].chosen == "plain red cape");
    }

    TEST_CASE("empty prompt exhausts with empty output") {
        auto enc = synth_encoder();
        auto corpus = synth_corpus(enc);
        auto provider = synth_candidates();
        StructuredPrompt sp;
        auto res = sanitize(sp, corpus, enc, provider);
        CHECK(res.stop_reason == StopReason::Exhausted);
        CHECK(res.trace.empty());
        CHECK(res.sanitized_flat == "");
    }

    TEST_CASE("synthetic three-slot fixture matches the hand simulation") {
        auto enc = synth_encoder();
        auto corpus = synth_corpus(enc);
        auto provider = synth_candidates();
        auto sp = synth_prompt();

        // Initial bucket risks: Clothing 0.95, Props 0.85, Subject 0.60,
        // Action 0 (hashed phrase, orthogonal to every corpus anchor).
        auto initial = rank_slots(sp, corpus, enc);
        CHECK(initial.bucket_risk(RiskBucket::Clothing) ==
              doctest::Approx(0.95).epsilon(1e-6));
        CHECK(initial.bucket_risk(RiskBucket::Props) ==
              doctest::Approx(0.85).epsilon(1e-6));
        CHECK(initial.bucket_risk(RiskBucket::Subject) ==
              doctest::Approx(0.60).epsilon(1e-6));
        CHECK(initial.bucket_risk(RiskBucket::Action) == 0.0);

        // Nearest-rank median of {0, 0.60, 0.85, 0.95} is 0.60, computed
        // here independently of the implementation.
        std::vector<double> risks = {0.95, 0.85, 0.60, 0.0};
        std::sort(risks.begin(), risks.end());
        std::size_t rank = static_cast<std::size_t>(
            std::ceil(0.5 * static_cast<double>(risks.size())));
        double threshold = risks[rank - 1];
        CHECK(threshold == doctest::Approx(0.60).epsilon(1e-6));

        auto res = sanitize(sp, corpus, enc, provider);

        // Hand simulation: three acceptances high-to-low, each re-ranked,
        // then every remaining bucket sits below the 0.60 threshold.
        struct Expected {
            SlotKind slot;
            const char* original;
            const char* chosen;
            const char* rejected;
        };
        const std::vector<Expected> script = {
            {SlotKind::Clothing, "crimson cloak", "plain red cape", "gray tunic"},
            {SlotKind::Props, "ruby amulet", "simple pendant", "stone charm"},
            {SlotKind::Subject, "alpha hero", "brave adventurer",
             "mysterious figure"},
        };
        CHECK(res.stop_reason == StopReason::RiskQuantile);
        REQUIRE(res.trace.size() == script.size());
        for (std::size_t i = 0; i < script.size(); ++i) {
            const auto& step = script[i];
            const auto& entry = res.trace[i];
            CHECK(entry.slot == step.slot);
            CHECK(entry.original == step.original);
            CHECK(entry.chosen == step.chosen);

            // Numeric fields recomputed from the coefficient table. Each
            // phrase loads exactly one corpus anchor axis, so the slot risk
            // is its cosine against that anchor.
            int anchor = kSynth.at(step.original).front().first;
            double before = oracle_cos(kSynth.at(step.original), {{anchor, 1.0}});
            double after = oracle_cos(kSynth.at(step.chosen), {{anchor, 1.0}});
            double dr = before - after;
            double align =
                oracle_cos(kSynth.at(step.chosen), kSynth.at(step.original));
            CHECK(entry.delta_r == doctest::Approx(dr).epsilon(1e-9));
            CHECK(entry.align == doctest::Approx(align).epsilon(1e-9));
            CHECK(entry.score ==
                  doctest::Approx(0.5 * dr + 0.5 * align).epsilon(1e-9));

            // The scripted loser really does lose under the same rule.
            double r_after =
                oracle_cos(kSynth.at(step.rejected), {{anchor, 1.0}});
            double r_score =
                0.5 * (before - r_after) +
                0.5 * oracle_cos(kSynth.at(step.rejected), kSynth.at(step.original));
            CHECK(entry.score > r_score);
        }
        CHECK(res.negative_prompts ==
              std::vector<std::string>{"crimson cloak", "ruby amulet",
                                       "alpha hero"});
        CHECK(res.sanitized.at(SlotKind::Subject) ==
              std::vector<std::string>{"brave adventurer"});
        CHECK(res.sanitized.at(SlotKind::Clothing) ==
              std::vector<std::string>{"plain red cape"});
        CHECK(res.sanitized.at(SlotKind::Props) ==
              std::vector<std::string>{"simple pendant"});
        CHECK(res.sanitized.at(SlotKind::Action) ==
              std::vector<std::string>{"walking forward"});

        // Every remaining risk is now under the initial median.
        auto final_report = rank_slots(res.sanitized, corpus, enc);
        CHECK(final_report.max_risk() < threshold);
        CHECK(final_report.max_risk() == doctest::Approx(0.25).epsilon(1e-4));
    }

    TEST_CASE("plumber fixture: three acceptances then exhaustion") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus(kFixtureCorpus, enc);
        auto table = shipped_table();
        auto sp = parse_prompt(
            "A cheerful plumber fixing a sink, red cap, blue overalls, photo.");
        REQUIRE(sp.at(SlotKind::Subject) ==
                std::vector<std::string>{"cheerful plumber"});
        REQUIRE(sp.at(SlotKind::Clothing) ==
                std::vector<std::string>{"red cap", "blue overalls"});

        double pre_max = max_occupied_risk(sp, corpus, enc);
        CHECK(pre_max == doctest::Approx(0.90).epsilon(1e-6));

        auto res = sanitize(sp, corpus, enc, table);
        CHECK(res.stop_reason == StopReason::Exhausted);
        REQUIRE(res.trace.size() == 3);

        CHECK(res.trace[0].slot == SlotKind::Clothing);
        CHECK(res.trace[0].original == "red cap");
        CHECK(res.trace[0].chosen == "neutral-colored protective cap");
        // Slot-level gain: "blue overalls" still anchors the slot at 0.88.
        CHECK(res.trace[0].delta_r == doctest::Approx(0.02).epsilon(5e-3));
        CHECK(res.trace[0].score == doctest::Approx(0.17487).epsilon(1e-3));

        CHECK(res.trace[1].slot == SlotKind::Clothing);
        CHECK(res.trace[1].original == "blue overalls");
        CHECK(res.trace[1].chosen == "plain work uniform");
        CHECK(res.trace[1].delta_r == doctest::Approx(0.78).epsilon(1e-3));

        CHECK(res.trace[2].slot == SlotKind::Subject);
        CHECK(res.trace[2].original == "cheerful plumber");
        CHECK(res.trace[2].chosen == "smiling technician");
        CHECK(res.trace[2].delta_r == doctest::Approx(0.45).epsilon(1e-3));

        CHECK(res.negative_prompts ==
              std::vector<std::string>{"red cap", "blue overalls",
                                       "cheerful plumber"});
        CHECK(res.sanitized_flat ==
              "smiling technician, fixing a sink, neutral-colored protective cap, "
              "plain work uniform, with photo");

        // No phrase in the sanitized prompt scores above the old maximum.
        auto after = rank_slots(res.sanitized, corpus, enc);
        for (const auto& [phrase, risk] : after.per_phrase)
            CHECK(risk.score < pre_max);
        CHECK(after.max_risk() == doctest::Approx(0.10).epsilon(1e-3));
    }

    TEST_CASE("apple logo fixture: one acceptance then exhaustion") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus(kFixtureCorpus, enc);
        auto table = shipped_table();
        auto sp = parse_prompt(
            "A minimal bitten apple logo with a single leaf at an angled corner, "
            "flat design.");
        REQUIRE(sp.at(SlotKind::TextLogoEntity) ==
                std::vector<std::string>{"bitten apple logo"});

        double pre_max = max_occupied_risk(sp, corpus, enc);
        CHECK(pre_max == doctest::Approx(0.93).epsilon(1e-4));

        auto res = sanitize(sp, corpus, enc, table);
        CHECK(res.stop_reason == StopReason::Exhausted);
        REQUIRE(res.trace.size() == 1);
        CHECK(res.trace[0].slot == SlotKind::TextLogoEntity);
        CHECK(res.trace[0].original == "bitten apple logo");
        CHECK(res.trace[0].chosen == "fruit-shaped logo with a clean silhouette");
        CHECK(res.trace[0].delta_r == doctest::Approx(0.78).epsilon(1e-3));
        CHECK(res.negative_prompts ==
              std::vector<std::string>{"bitten apple logo"});
        CHECK(max_occupied_risk(res.sanitized, corpus, enc) <
              0.5 * pre_max);
    }

    TEST_CASE("marginal improvement fires after a tiny accepted gain") {
        std::map<std::string, DeterministicTestEncoder::Planted> planted = {
            {"anchor one", {{10, 1.0}}},
            {"crimson item", {{10, 0.95}, {13, 0.31225}}},
            {"slightly dimmer item", {{10, 0.94}, {13, 0.34117}}},
        };
        DeterministicTestEncoder enc(0, 64, planted);
        auto corpus = build_corpus({"anchor one"}, enc);
        MapCandidates provider(std::map<std::string, std::vector<std::string>>{
            {"crimson item", {"slightly dimmer item"}}});
        StructuredPrompt sp;
        sp.at(SlotKind::Clothing) = {"crimson item"};
        SanitizerConfig cfg;
        cfg.window_m = 1;
        cfg.gamma = 0.05;
        auto res = sanitize(sp, corpus, enc, provider, cfg);
        CHECK(res.stop_reason == StopReason::MarginalImprovement);
        REQUIRE(res.trace.size() == 1);
        CHECK(res.trace[0].delta_r == doctest::Approx(0.01).epsilon(1e-3));
        CHECK(res.sanitized.at(SlotKind::Clothing) ==
              std::vector<std::string>{"slightly dimmer item"});
    }

    TEST_CASE("slots with no viable candidate are skipped, not replaced") {
        auto enc = synth_encoder();
        auto corpus = synth_corpus(enc);
        // Only riskier alternatives on offer: nothing qualifies.
        MapCandidates provider(std::map<std::string, std::vector<std::string>>{
            {"crimson cloak", {"crimson cloak of the guardian"}},  // corpus hit
            {"ruby amulet", {}},
        });
        auto sp = synth_prompt();
        auto res = sanitize(sp, corpus, enc, provider);
        CHECK(res.stop_reason == StopReason::Exhausted);
        CHECK(res.trace.empty());
        CHECK(res.sanitized.slots == sp.slots);
    }

    TEST_CASE("an original that is itself a corpus phrase lands in q") {
        auto enc = synth_encoder();
        RiskCorpus corpus = build_corpus({"crimson cloak"}, enc);
        MapCandidates provider(std::map<std::string, std::vector<std::string>>{
            {"crimson cloak", {"crimson cloak", "plain red cape"}}});
        StructuredPrompt sp;
        sp.at(SlotKind::Clothing) = {"crimson cloak"};
        auto res = sanitize(sp, corpus, enc, provider);
        REQUIRE(res.trace.size() == 1);
        // The corpus copy of itself was filtered out of the candidate list.
        CHECK(res.trace[0].chosen == "plain red cape");
        CHECK(res.negative_prompts == std::vector<std::string>{"crimson cloak"});
        CHECK_FALSE(corpus.contains(res.trace[0].chosen));
    }

    TEST_CASE("max risk never increases and every accepted delta is positive") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus(kFixtureCorpus, enc);
        auto table = shipped_table();
        const std::vector<std::string> prompts = {
            "A cheerful plumber fixing a sink, red cap, blue overalls, photo.",
            "A minimal bitten apple logo with a single leaf at an angled corner, "
            "flat design.",
            "A plumber in a kitchen, wearing a red cap.",
            "sunset over the ocean, watercolor style",
        };
        for (const auto& raw : prompts) {
            CAPTURE(raw);
            auto sp = parse_prompt(raw);
            double pre = max_occupied_risk(sp, corpus, enc);
            auto res = sanitize(sp, corpus, enc, table);
            double post = max_occupied_risk(res.sanitized, corpus, enc);
            CHECK(post <= pre + 1e-12);
            CHECK(res.negative_prompts.size() == res.trace.size());
            for (const auto& entry : res.trace) {
                CHECK(entry.delta_r > 0.0);
                CHECK(entry.score > 0.0);
                CHECK_FALSE(corpus.contains(entry.chosen));
            }
        }
    }

    TEST_CASE("deterministic across runs") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus(kFixtureCorpus, enc);
        auto table = shipped_table();
        auto sp = parse_prompt(
            "A cheerful plumber fixing a sink, red cap, blue overalls, photo.");
        auto a = sanitize(sp, corpus, enc, table);
        auto b = sanitize(sp, corpus, enc, table);
        CHECK(a.sanitized_flat == b.sanitized_flat);
        REQUIRE(a.trace.size() == b.trace.size());
        for (std::size_t i = 0; i < a.trace.size(); ++i) {
            CHECK(a.trace[i].chosen == b.trace[i].chosen);
            CHECK(a.trace[i].delta_r == b.trace[i].delta_r);
            CHECK(a.trace[i].align == b.trace[i].align);
            CHECK(a.trace[i].score == b.trace[i].score);
        }
    }

    TEST_CASE("provider failure mid-loop aborts with the partial trace") {
        auto enc = synth_encoder();
        auto corpus = synth_corpus(enc);
        auto inner = synth_candidates();
        FailsOnNthCall provider(inner, 2);
        auto sp = synth_prompt();
        try {
            sanitize(sp, corpus, enc, provider);
            FAIL("expected SanitizeAborted");
        } catch (const SanitizeAborted& e) {
            CHECK(std::string(e.what()) == "backend offline");
            const auto& partial = e.partial();
            REQUIRE(partial.trace.size() == 1);
            CHECK(partial.trace[0].chosen == "plain red cape");
            CHECK(partial.sanitized.at(SlotKind::Clothing) ==
                  std::vector<std::string>{"plain red cape"});
            CHECK(partial.sanitized_flat ==
                  reconstruct_prompt(partial.sanitized));
            REQUIRE_FALSE(partial.warnings.empty());
            CHECK(partial.warnings.back().find("aborted") != std::string::npos);
        }
    }

    TEST_CASE("provider failure on the first call aborts with empty trace") {
        auto enc = synth_encoder();
        auto corpus = synth_corpus(enc);
        DownProvider provider;
        auto sp = synth_prompt();
        try {
            sanitize(sp, corpus, enc, provider);
            FAIL("expected SanitizeAborted");
        } catch (const SanitizeAborted& e) {
            CHECK(e.partial().trace.empty());
            CHECK(e.partial().sanitized.slots == sp.slots);
        }
    }

    TEST_CASE("a dead primary with the static fallback still sanitizes") {
        DeterministicTestEncoder enc(0);
        auto corpus = build_corpus(kFixtureCorpus, enc);
        DownProvider down;
        auto table = shipped_table();
        FallbackCandidateProvider chain(down, table);
        auto sp = parse_prompt(
            "A cheerful plumber fixing a sink, red cap, blue overalls, photo.");
        auto res = sanitize(sp, corpus, enc, chain);
        CHECK(res.trace.size() == 3);
        CHECK(res.stop_reason == StopReason::Exhausted);
    }

    TEST_CASE("config is validated before any work") {
        auto enc = synth_encoder();
        auto corpus = synth_corpus(enc);
        auto provider = synth_candidates();
        SanitizerConfig cfg;
        cfg.lambda = 2.0;
        CHECK_THROWS_AS(sanitize(synth_prompt(), corpus, enc, provider, cfg),
                        ValidationError);
    }
}
