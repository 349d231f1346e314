#include "amcr/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "amcr/text_util.hpp"

namespace amcr {

const std::array<SlotKind, kSlotKindCount>& all_slot_kinds() {
    static const std::array<SlotKind, kSlotKindCount> kinds = {
        SlotKind::Subject,  SlotKind::Scene,  SlotKind::Action, SlotKind::Clothing,
        SlotKind::Colors,   SlotKind::Props,  SlotKind::Style,  SlotKind::Lighting,
        SlotKind::Shot,     SlotKind::TextLogoEntity, SlotKind::NamedEntity,
    };
    return kinds;
}

std::string slot_kind_name(SlotKind kind) {
    switch (kind) {
        case SlotKind::Subject: return "subject";
        case SlotKind::Scene: return "scene";
        case SlotKind::Action: return "action";
        case SlotKind::Clothing: return "clothing";
        case SlotKind::Colors: return "colors";
        case SlotKind::Props: return "props";
        case SlotKind::Style: return "style";
        case SlotKind::Lighting: return "lighting";
        case SlotKind::Shot: return "shot";
        case SlotKind::TextLogoEntity: return "text_logo_entity";
        case SlotKind::NamedEntity: return "named_entity";
    }
    throw ValidationError("unknown slot kind value");
}

SlotKind slot_kind_from_name(const std::string& n) {
    std::string key = fold(n);
    std::replace(key.begin(), key.end(), ' ', '_');
    for (SlotKind k : all_slot_kinds())
        if (slot_kind_name(k) == key) return k;
    throw ValidationError("unknown slot kind '" + n + "'");
}

bool StructuredPrompt::empty() const {
    for (const auto& v : slots)
        if (!v.empty()) return false;
    return residue.empty();
}

std::vector<std::pair<SlotKind, std::string>> StructuredPrompt::all_phrases() const {
    std::vector<std::pair<SlotKind, std::string>> out;
    for (SlotKind k : all_slot_kinds())
        for (const auto& p : at(k)) out.emplace_back(k, p);
    return out;
}

// ---------------------------------------------------------------------------
// Lexicons

const Lexicons& Lexicons::builtin() {
    static const Lexicons lex = [] {
        Lexicons l;
        l.style = {"photographic", "photorealistic", "realistic", "flat design",
                   "minimal", "minimalist", "watercolor", "abstract", "geometric",
                   "vintage", "retro", "cartoon", "impressionist", "pixel art",
                   "line art", "sketch", "3d render", "cinematic", "anime",
                   "monochrome"};
        l.shot = {"close-up", "wide", "medium", "long", "aerial", "overhead",
                  "macro", "top-down", "full body", "profile"};
        l.lighting = {"soft", "studio", "dramatic", "golden hour", "neon",
                      "backlit", "natural", "ambient", "rim", "moody", "diffuse"};
        l.colors = {"red", "blue", "green", "yellow", "orange", "purple", "violet",
                    "pink", "black", "white", "gray", "grey", "brown", "gold",
                    "golden", "silver", "crimson", "scarlet", "teal", "cyan",
                    "magenta", "beige", "ivory", "navy", "maroon", "turquoise",
                    "pastel", "primary colors", "pastel colors"};
        l.scene = {"kitchen", "city", "forest", "beach", "office", "street",
                   "mountain", "desert", "room", "park", "harbor", "castle",
                   "village", "bridge", "library", "garden", "laboratory", "alley",
                   "rooftop", "skyline", "bathroom", "bedroom", "workshop", "cafe",
                   "restaurant", "school", "hospital", "station", "airport",
                   "market", "plaza", "courtyard", "cave", "canyon", "meadow",
                   "lake", "river", "ocean"};
        l.garment = {"cap", "hat", "overalls", "uniform", "suit", "dress",
                     "jacket", "coat", "shirt", "pants", "trousers", "boots",
                     "gloves", "helmet", "scarf", "cape", "cloak", "tunic",
                     "armor", "robe", "costume", "outfit", "hoodie", "sweater",
                     "vest", "tie", "belt", "shoes", "sneakers", "apron"};
        return l;
    }();
    return lex;
}

namespace {

std::set<std::string> read_lexicon_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon file " + path.string());
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string entry = fold(line);
        if (!entry.empty()) out.insert(entry);
    }
    return out;
}

}  // namespace

Lexicons Lexicons::load_dir(const std::filesystem::path& dir) {
    Lexicons l;
    l.style = read_lexicon_file(dir / "style.txt");
    l.shot = read_lexicon_file(dir / "shot.txt");
    l.lighting = read_lexicon_file(dir / "lighting.txt");
    l.colors = read_lexicon_file(dir / "colors.txt");
    l.scene = read_lexicon_file(dir / "scene.txt");
    l.garment = read_lexicon_file(dir / "garment.txt");
    return l;
}

// ---------------------------------------------------------------------------
// Fallback grammar

namespace {

struct Token {
    std::string raw;
    std::string low;
    bool capitalized = false;
};

bool is_article(const std::string& low) {
    return low == "a" || low == "an" || low == "the";
}

const std::set<std::string>& stopwords() {
    static const std::set<std::string> s = {
        "a",   "an",   "the",  "and",  "or",    "of",    "with", "in",
        "at",  "on",   "to",   "wearing", "is", "are",   "was",  "were",
        "very", "style", "shot", "view", "angle", "lighting", "light",
        "his", "her",  "its",  "their", "this", "that",  "these", "those"};
    return s;
}

const std::set<std::string>& gerund_exceptions() {
    static const std::set<std::string> s = {
        "ring",     "king",     "thing",    "string",   "spring",  "wing",
        "swing",    "sibling",  "ceiling",  "lighting", "clothing", "morning",
        "evening",  "building", "darling",  "duckling", "dumpling", "earring",
        "feeling",  "lightning", "nothing", "something", "anything",
        "everything", "viking",  "pudding",  "herring",  "sterling"};
    return s;
}

const std::set<std::string>& logo_heads() {
    static const std::set<std::string> s = {"logo",      "text",    "sign",
                                            "signage",   "lettering", "wordmark",
                                            "emblem",    "badge"};
    return s;
}

bool is_gerund(const std::string& low) {
    return low.size() >= 5 && low.ends_with("ing") && !gerund_exceptions().count(low);
}

std::string strip_punct(const std::string& t) {
    const std::string punct = ".,;:!?\"'()[]";
    std::size_t b = 0, e = t.size();
    while (b < e && punct.find(t[b]) != std::string::npos) ++b;
    while (e > b && punct.find(t[e - 1]) != std::string::npos) --e;
    return t.substr(b, e - b);
}

std::vector<Token> tokenize(const std::string& segment) {
    std::vector<Token> out;
    for (const auto& w : split_ws(segment)) {
        std::string raw = strip_punct(w);
        if (raw.empty()) continue;
        Token t;
        t.raw = raw;
        t.low = to_lower(raw);
        t.capitalized = std::isupper(static_cast<unsigned char>(raw[0])) != 0;
        out.push_back(std::move(t));
    }
    return out;
}

std::string join_raw(const std::vector<Token>& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i].raw;
    }
    return out;
}

std::string join_low(const std::vector<Token>& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i].low;
    }
    return out;
}

std::vector<Token> drop_leading_articles(std::vector<Token> toks) {
    std::size_t b = 0;
    while (b < toks.size() && is_article(toks[b].low)) ++b;
    return {toks.begin() + static_cast<std::ptrdiff_t>(b), toks.end()};
}

std::string head_low(const std::vector<Token>& toks) {
    return toks.empty() ? std::string() : toks.back().low;
}

std::string last_word_low(const std::string& phrase) {
    auto words = split_ws(fold(phrase));
    return words.empty() ? std::string() : words.back();
}

// Whole-segment lexicon classification: style/shot/lighting with optional
// suffix word, or a pure color list. Returns false when nothing matched.
bool classify_whole_segment(const std::vector<Token>& raw_toks, const Lexicons& lex,
                            StructuredPrompt& sp) {
    std::vector<Token> toks = drop_leading_articles(raw_toks);
    if (toks.empty()) return false;
    std::string all = join_low(toks);
    std::string stripped =
        toks.size() > 1 ? join_low({toks.begin(), toks.end() - 1}) : std::string();
    const std::string& last = toks.back().low;

    auto match = [&](const std::set<std::string>& lexset,
                     const std::set<std::string>& suffixes) -> std::string {
        if (lexset.count(all)) return all;
        if (!stripped.empty() && suffixes.count(last) && lexset.count(stripped))
            return stripped;
        return {};
    };

    if (auto p = match(lex.style, {"style"}); !p.empty()) {
        sp.at(SlotKind::Style).push_back(p);
        return true;
    }
    if (auto p = match(lex.shot, {"shot", "view", "angle"}); !p.empty()) {
        sp.at(SlotKind::Shot).push_back(p);
        return true;
    }
    if (auto p = match(lex.lighting, {"lighting", "light"}); !p.empty()) {
        sp.at(SlotKind::Lighting).push_back(p);
        return true;
    }

    // Color segment: groups split on "and", each group either a lexicon
    // entry as a whole or color words one by one.
    std::vector<std::vector<std::string>> groups(1);
    for (const auto& t : toks) {
        if (t.low == "and" || t.low == "&") {
            if (!groups.back().empty()) groups.emplace_back();
        } else if (!is_article(t.low)) {
            groups.back().push_back(t.low);
        }
    }
    if (!groups.back().empty()) {
        std::vector<std::string> colors;
        for (const auto& g : groups) {
            if (g.empty()) return false;
            std::string joined = join(g, " ");
            if (lex.colors.count(joined)) {
                colors.push_back(joined);
            } else if (std::all_of(g.begin(), g.end(), [&](const std::string& w) {
                           return lex.colors.count(w) > 0;
                       })) {
                colors.insert(colors.end(), g.begin(), g.end());
            } else {
                return false;
            }
        }
        for (auto& c : colors) sp.at(SlotKind::Colors).push_back(std::move(c));
        return true;
    }
    return false;
}

enum class Role { Lead, Clothing, Scene, Props, Action };

struct Span {
    Role role = Role::Lead;
    std::vector<Token> toks;
};

// True when the trailing phrase of the span (tokens after the last "and")
// already holds a content-bearing word. Gerunds cut a new Action span only
// then, so "wearing running shoes" keeps its gerund as a modifier while
// "a red cap fixing a sink" splits before "fixing".
bool phrase_open(const std::vector<Token>& toks) {
    for (auto it = toks.rbegin(); it != toks.rend(); ++it) {
        if (it->low == "and" || it->low == "&") return false;
        if (!is_article(it->low)) return true;
    }
    return false;
}

// Marker-driven span splitting. Markers wearing/in/at/with open a new span
// and are dropped; gerunds and to-infinitives open Action spans and stay.
std::vector<Span> split_spans(const std::vector<Token>& toks) {
    std::vector<Span> spans;
    Span cur;
    auto flush = [&](Role next) {
        if (!cur.toks.empty()) spans.push_back(std::move(cur));
        cur = Span{next, {}};
    };
    for (std::size_t i = 0; i < toks.size(); ++i) {
        const std::string& low = toks[i].low;
        if (low == "wearing") {
            flush(Role::Clothing);
        } else if (low == "in" || low == "at") {
            flush(Role::Scene);
        } else if (low == "with") {
            flush(Role::Props);
        } else if (low == "to" && i + 1 < toks.size() && !is_article(toks[i + 1].low) &&
                   phrase_open(cur.toks)) {
            flush(Role::Action);
            cur.toks.push_back(toks[i]);
        } else if (is_gerund(low) && phrase_open(cur.toks)) {
            flush(Role::Action);
            cur.toks.push_back(toks[i]);
        } else {
            cur.toks.push_back(toks[i]);
        }
    }
    if (!cur.toks.empty()) spans.push_back(std::move(cur));
    return spans;
}

std::vector<std::vector<Token>> split_phrases(const std::vector<Token>& toks) {
    std::vector<std::vector<Token>> out(1);
    for (const auto& t : toks) {
        if (t.low == "and" || t.low == "&") {
            if (!out.back().empty()) out.emplace_back();
        } else {
            out.back().push_back(t);
        }
    }
    if (out.back().empty()) out.pop_back();
    return out;
}

// Pulls maximal runs of 2+ capitalized tokens out of the phrase as named
// entities. Articles break runs and never join them.
std::vector<Token> extract_named_entities(const std::vector<Token>& toks,
                                          StructuredPrompt& sp) {
    std::vector<Token> rest;
    std::size_t i = 0;
    while (i < toks.size()) {
        if (toks[i].capitalized && !is_article(toks[i].low) && toks[i].low != "and") {
            std::size_t j = i;
            while (j < toks.size() && toks[j].capitalized && !is_article(toks[j].low) &&
                   toks[j].low != "and")
                ++j;
            if (j - i >= 2) {
                sp.at(SlotKind::NamedEntity)
                    .push_back(join_raw({toks.begin() + static_cast<std::ptrdiff_t>(i),
                                         toks.begin() + static_cast<std::ptrdiff_t>(j)}));
                i = j;
                continue;
            }
        }
        rest.push_back(toks[i]);
        ++i;
    }
    return rest;
}

bool all_non_content(const std::vector<Token>& toks) {
    return std::all_of(toks.begin(), toks.end(), [](const Token& t) {
        return stopwords().count(t.low) > 0 ||
               (t.low.size() >= 5 && t.low.ends_with("ly"));
    });
}

// Peels style-lexicon prefixes (up to three words long) off the phrase into
// the Style slot, longest match first. Never consumes the whole phrase;
// bare style segments are whole-segment matches instead.
std::vector<Token> peel_style_prefix(std::vector<Token> toks, const Lexicons& lex,
                                     StructuredPrompt& sp) {
    for (;;) {
        bool peeled = false;
        std::size_t max_len = toks.empty() ? 0 : std::min<std::size_t>(3, toks.size() - 1);
        for (std::size_t len = max_len; len >= 1; --len) {
            std::string prefix =
                join_low({toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(len)});
            if (lex.style.count(prefix)) {
                sp.at(SlotKind::Style).push_back(prefix);
                toks.erase(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(len));
                peeled = true;
                break;
            }
        }
        if (!peeled) return toks;
    }
}

// Classification for unmarked phrases, in fixed precedence order. The lead
// flag marks phrases of the prompt's first unmarked span, which default to
// Subject instead of Props.
void classify_bare(std::vector<Token> toks, bool lead_position, const Lexicons& lex,
                   StructuredPrompt& sp) {
    toks = drop_leading_articles(toks);
    if (toks.empty()) return;
    if (all_non_content(toks)) {
        sp.residue.push_back(join_raw(toks));
        return;
    }
    toks = peel_style_prefix(std::move(toks), lex, sp);
    toks = drop_leading_articles(toks);
    if (toks.empty()) return;

    const std::string head = head_low(toks);
    if (logo_heads().count(head)) {
        sp.at(SlotKind::TextLogoEntity).push_back(join_raw(toks));
        return;
    }
    bool all_colors = std::all_of(toks.begin(), toks.end(), [&](const Token& t) {
        return lex.colors.count(t.low) > 0;
    });
    if (all_colors) {
        for (const auto& t : toks) sp.at(SlotKind::Colors).push_back(t.low);
        return;
    }
    if (is_gerund(toks.front().low) ||
        (toks.front().low == "to" && toks.size() >= 2)) {
        sp.at(SlotKind::Action).push_back(join_raw(toks));
        return;
    }
    if (lex.garment.count(head)) {
        sp.at(SlotKind::Clothing).push_back(join_raw(toks));
        return;
    }
    if (lex.scene.count(head)) {
        sp.at(SlotKind::Scene).push_back(join_raw(toks));
        return;
    }
    if (lead_position) {
        sp.at(SlotKind::Subject).push_back(join_raw(toks));
        return;
    }
    sp.at(SlotKind::Props).push_back(join_raw(toks));
}

std::vector<std::string> segment_raw(const std::string& raw) {
    std::vector<std::string> segments;
    std::string cur;
    for (char c : raw) {
        if (c == ',' || c == ';' || c == '.') {
            segments.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    segments.push_back(cur);
    return segments;
}

}  // namespace

std::vector<std::string> content_words(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& w : split_ws(fold(s))) {
        std::string t = strip_punct(w);
        if (!t.empty() && !stopwords().count(t)) out.push_back(t);
    }
    return out;
}

StructuredPrompt parse_prompt(const std::string& raw, const Lexicons& lex) {
    if (trim(raw).empty()) throw EmptyPromptError("prompt is empty");
    StructuredPrompt sp;
    sp.source = raw;

    // The first unmarked span whose phrases survive entity extraction is the
    // lead; its phrases default to Subject.
    bool lead_pending = true;
    for (const auto& seg : segment_raw(raw)) {
        std::vector<Token> toks = tokenize(seg);
        if (toks.empty()) continue;
        if (classify_whole_segment(toks, lex, sp)) continue;

        for (auto& span : split_spans(toks)) {
            bool span_had_phrase = false;
            for (auto& phrase : split_phrases(span.toks)) {
                std::vector<Token> rest = extract_named_entities(phrase, sp);
                rest = drop_leading_articles(std::move(rest));
                if (rest.empty()) continue;
                span_had_phrase = true;
                switch (span.role) {
                    case Role::Clothing:
                        sp.at(SlotKind::Clothing).push_back(join_raw(rest));
                        break;
                    case Role::Scene:
                        sp.at(SlotKind::Scene).push_back(join_raw(rest));
                        break;
                    case Role::Props:
                        sp.at(SlotKind::Props).push_back(join_raw(rest));
                        break;
                    case Role::Action:
                        sp.at(SlotKind::Action).push_back(join_raw(rest));
                        break;
                    case Role::Lead:
                        classify_bare(std::move(rest), lead_pending, lex, sp);
                        break;
                }
            }
            if (span.role == Role::Lead && span_had_phrase) lead_pending = false;
        }
    }
    return sp;
}

std::string reconstruct_prompt(const StructuredPrompt& sp, const Lexicons& lex) {
    if (sp.empty()) throw EmptyPromptError("cannot reconstruct an empty structured prompt");
    std::vector<std::string> segments;

    if (!sp.at(SlotKind::Subject).empty())
        segments.push_back(join(sp.at(SlotKind::Subject), " and "));
    for (const auto& p : sp.at(SlotKind::Action)) segments.push_back(p);
    for (const auto& p : sp.at(SlotKind::Scene))
        segments.push_back(lex.scene.count(last_word_low(p)) ? p : "in " + p);
    for (const auto& p : sp.at(SlotKind::Clothing))
        segments.push_back(lex.garment.count(last_word_low(p)) ? p : "wearing " + p);
    for (const auto& p : sp.at(SlotKind::Colors)) segments.push_back(p);
    if (!sp.at(SlotKind::Props).empty())
        segments.push_back("with " + join(sp.at(SlotKind::Props), " and "));
    for (const auto& p : sp.at(SlotKind::Style)) segments.push_back(p);
    for (const auto& p : sp.at(SlotKind::Lighting)) segments.push_back(p);
    for (const auto& p : sp.at(SlotKind::Shot)) segments.push_back(p);
    for (const auto& p : sp.at(SlotKind::TextLogoEntity)) segments.push_back(p);
    for (const auto& p : sp.at(SlotKind::NamedEntity)) segments.push_back(p);
    for (const auto& p : sp.residue) segments.push_back(p);

    return join(segments, ", ");
}

StructuredPrompt parse_with_provider(const std::string& raw, SlotProvider& provider,
                                     const Lexicons& lex) {
    if (trim(raw).empty()) throw EmptyPromptError("prompt is empty");

    auto fallback = [&](const std::string& why) {
        StructuredPrompt sp = parse_prompt(raw, lex);
        sp.warnings.push_back("slot provider response rejected (" + why +
                              "); used fallback parser");
        return sp;
    };

    std::vector<std::string> schema;
    for (SlotKind k : all_slot_kinds()) schema.push_back(slot_kind_name(k));

    std::map<std::string, std::vector<std::string>> response;
    try {
        response = provider.slots_for(raw, schema);
    } catch (const ProviderError& e) {
        return fallback(e.what());
    }

    StructuredPrompt sp;
    sp.source = raw;
    std::set<std::string> seen;
    for (const auto& [key, phrases] : response) {
        std::vector<std::string>* target = nullptr;
        if (fold(key) == "residue") {
            target = &sp.residue;
        } else {
            try {
                target = &sp.at(slot_kind_from_name(key));
            } catch (const ValidationError&) {
                return fallback("unknown slot kind '" + key + "'");
            }
        }
        for (const auto& phrase : phrases) {
            std::string t = trim(phrase);
            if (t.empty()) return fallback("empty phrase under '" + key + "'");
            std::string f = fold(t);
            if (!seen.insert(f).second)
                return fallback("phrase '" + t + "' appears under two kinds");
            target->push_back(t);
        }
    }

    // Coverage repair: source content words the provider dropped go to
    // residue so nothing is silently lost.
    std::set<std::string> covered;
    for (const auto& [kind, phrase] : sp.all_phrases()) {
        (void)kind;
        for (const auto& w : content_words(phrase)) covered.insert(w);
    }
    for (const auto& p : sp.residue)
        for (const auto& w : content_words(p)) covered.insert(w);

    std::vector<std::string> missing;
    std::set<std::string> missing_seen;
    for (const auto& w : content_words(raw))
        if (!covered.count(w) && missing_seen.insert(w).second) missing.push_back(w);
    if (!missing.empty()) {
        for (const auto& w : missing) sp.residue.push_back(w);
        sp.warnings.push_back("provider response dropped " +
                              std::to_string(missing.size()) +
                              " source word(s); appended to residue");
    }
    return sp;
}

}  // namespace amcr
