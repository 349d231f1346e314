#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "amcr/errors.hpp"

namespace amcr {

// Slot kinds of the structured prompt representation. Order is fixed and
// meaningful: iteration, reconstruction, and tie-breaking all use it.
enum class SlotKind {
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
};

inline constexpr int kSlotKindCount = 11;

const std::array<SlotKind, kSlotKindCount>& all_slot_kinds();
std::string slot_kind_name(SlotKind kind);           // snake_case wire name
SlotKind slot_kind_from_name(const std::string& n);  // throws ValidationError

// Word lists that drive the fallback grammar. Editable copies ship as data
// files; the built-in set is the source of truth for tests.
struct Lexicons {
    std::set<std::string> style;
    std::set<std::string> shot;
    std::set<std::string> lighting;
    std::set<std::string> colors;
    std::set<std::string> scene;
    std::set<std::string> garment;

    static const Lexicons& builtin();
    // Reads style.txt, shot.txt, lighting.txt, colors.txt, scene.txt,
    // garment.txt from dir; one entry per line, '#' comments allowed.
    static Lexicons load_dir(const std::filesystem::path& dir);
};

struct StructuredPrompt {
    std::array<std::vector<std::string>, kSlotKindCount> slots;
    std::string source;
    std::vector<std::string> residue;
    std::vector<std::string> warnings;  // provider fallback notes and repairs

    std::vector<std::string>& at(SlotKind k) { return slots[static_cast<int>(k)]; }
    const std::vector<std::string>& at(SlotKind k) const {
        return slots[static_cast<int>(k)];
    }
    bool empty() const;
    // Phrases of every kind in fixed order; residue excluded.
    std::vector<std::pair<SlotKind, std::string>> all_phrases() const;
};

// Tokens of s that carry content: lowercase words minus articles, markers,
// and slot-suffix words. Used by the coverage invariant and provider repair.
std::vector<std::string> content_words(const std::string& s);

// Deterministic fallback parser. Comma segmentation, marker words
// (wearing / in / at / with), gerund and to-infinitive verb phrases,
// lexicon lookups, capitalized multiword runs, logo/text heads, first
// segment's lead phrases as Subject, leftover noun phrases as Props.
// Unclassifiable spans land in residue, never dropped.
StructuredPrompt parse_prompt(const std::string& raw,
                              const Lexicons& lex = Lexicons::builtin());

// Template reconstruction: Subject, Action, Scene, Clothing, Colors, Props,
// Style, Lighting, Shot, then text/logo and named entities, then residue,
// joined with commas. Marker words are re-attached exactly where the
// fallback grammar needs them to re-derive the same slots.
std::string reconstruct_prompt(const StructuredPrompt& sp,
                               const Lexicons& lex = Lexicons::builtin());

// External slotting backend (an instruction-following language model in the
// original pipeline). Returns kind-name -> phrase list.
class SlotProvider {
public:
    virtual ~SlotProvider() = default;
    virtual std::map<std::string, std::vector<std::string>> slots_for(
        const std::string& prompt, const std::vector<std::string>& schema) = 0;
};

// Provider-backed parse with schema validation. Any provider failure or
// schema violation falls back to parse_prompt and records a warning; source
// words the provider dropped are repaired into residue.
StructuredPrompt parse_with_provider(const std::string& raw, SlotProvider& provider,
                                     const Lexicons& lex = Lexicons::builtin());

}  // namespace amcr
