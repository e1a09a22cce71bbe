#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dcppd {

enum class FindingKind { nodule, consolidation, ggo, pleural_effusion };
enum class Laterality { left, right };
enum class Lobe { LUL, LLL, RUL, RML, RLL };

constexpr std::array<FindingKind, 4> kAllKinds = {
    FindingKind::nodule, FindingKind::consolidation, FindingKind::ggo,
    FindingKind::pleural_effusion};
constexpr std::array<Lobe, 5> kAllLobes = {Lobe::LUL, Lobe::LLL, Lobe::RUL, Lobe::RML, Lobe::RLL};

inline bool kind_has_lobes(FindingKind k) { return k != FindingKind::pleural_effusion; }
inline Laterality lobe_side(Lobe l) {
    return (l == Lobe::LUL || l == Lobe::LLL) ? Laterality::left : Laterality::right;
}

std::string kind_name(FindingKind k);
std::string lobe_name(Lobe l);        // "left lower lobe" etc.
std::string lobe_code(Lobe l);        // "LLL" etc.
std::string side_name(Laterality s);  // "left" / "right"

enum class QuestionSetId { QS1, QS2, QS3 };

std::string qs_name(QuestionSetId id);

// Ordered list of canonical binary clinical questions. The order is fixed
// and shared by labels, probes, cue prompts and every metrics table.
struct QuestionSet {
    QuestionSetId id;
    std::vector<std::string> questions;

    int arity() const { return static_cast<int>(questions.size()); }
};

// Full presence set: 18 findings. The synthetic generator can only plant
// four of them; the toy subset below keeps their relative order.
QuestionSet full_qs1();
QuestionSet toy_qs1();
// Laterality set: 8 questions (4 findings x right/left).
QuestionSet full_qs2();
// Lobar set: 15 questions (3 lobed findings x 5 lobes).
QuestionSet full_qs3();

// Index mapping between plantable findings and question positions.
// Returns -1 when the set does not cover the combination.
int qs1_index(const QuestionSet& qs1, FindingKind k);
int qs2_index(FindingKind k, Laterality s);
int qs3_index(FindingKind k, Lobe l);

// Inverse maps for the canonical full sets.
std::optional<FindingKind> qs1_kind(const QuestionSet& qs1, int index);
std::pair<FindingKind, Laterality> qs2_entry(int index);
std::pair<FindingKind, Lobe> qs3_entry(int index);

struct LabelVector {
    QuestionSetId qs;
    std::vector<std::uint8_t> values;

    int arity() const { return static_cast<int>(values.size()); }
    int popcount() const {
        int n = 0;
        for (auto v : values) n += v ? 1 : 0;
        return n;
    }
    bool operator==(const LabelVector&) const = default;
};

inline LabelVector zero_labels(QuestionSetId id, int arity) {
    return LabelVector{id, std::vector<std::uint8_t>(static_cast<std::size_t>(arity), 0)};
}

struct QuestionCatalog;

// lobe-positive implies laterality-positive implies presence-positive,
// per finding
bool labels_hierarchy_consistent(const LabelVector& qs1, const LabelVector& qs2,
                                 const LabelVector& qs3, const QuestionCatalog& cat);

// The three question sets one experiment runs with. Default: toy QS1 plus
// the full laterality and lobar sets.
struct QuestionCatalog {
    QuestionSet qs1, qs2, qs3;

    static QuestionCatalog toy() { return {toy_qs1(), full_qs2(), full_qs3()}; }
    static QuestionCatalog full() { return {full_qs1(), full_qs2(), full_qs3()}; }

    const QuestionSet& get(QuestionSetId id) const {
        switch (id) {
            case QuestionSetId::QS1: return qs1;
            case QuestionSetId::QS2: return qs2;
            default: return qs3;
        }
    }
    // stable content hash, used for cache fingerprints
    std::uint64_t fingerprint() const;
};

}  // namespace dcppd
