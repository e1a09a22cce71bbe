#pragma once

#include <string>
#include <vector>

#include "dcppd/questions.hpp"

namespace dcppd::cue {

constexpr int kPhraseTableVersion = 1;
inline const char* kPreamble = "Findings summary:";
inline const char* kEmptySentinel = "Findings summary: none provided.";

enum class CueSource { gt, probe, noisy, none };

std::string cue_source_name(CueSource s);

struct CueEntity {
    QuestionSetId qs;
    int question_index = 0;
    std::string surface;

    bool operator==(const CueEntity&) const = default;
};

// Canonical phrase for one positive answer, e.g. "lung nodule, left lower
// lobe". Pure function of (set, index) via the versioned phrase table.
std::string surface_phrase(const QuestionCatalog& cat, QuestionSetId qs, int question_index);

// Entire phrase table as versioned JSON (external interface).
std::string phrase_table_json(const QuestionCatalog& cat);

struct CuePrompt {
    std::string text;
    struct Span {
        CueEntity entity;
        int token_begin = 0, token_end = 0;  // word-token indices, half-open
    };
    std::vector<Span> entity_spans;
    CueSource source = CueSource::gt;

    std::string to_json() const;
    static CuePrompt from_json(const std::string& json_text);
};

// One entity per positive label entry; negatives are omitted. Ordering is
// question-set order (QS1, QS2, QS3) then question order.
std::vector<CueEntity> labels_to_entities(const std::vector<LabelVector>& labels,
                                          const QuestionCatalog& cat);

// Per-entity keep flags: flag i is 1 with probability 1-p, independently.
std::vector<std::uint8_t> dropout_keep_flags(std::size_t n, double p, std::uint64_t seed);

// Each entity is kept independently with probability 1-p; order preserved.
std::vector<CueEntity> prompt_dropout(const std::vector<CueEntity>& entities, double p,
                                      std::uint64_t seed);

// Deterministic templating: preamble + comma-joined surfaces + period, with
// word-token spans for every entity. An empty list yields the sentinel.
CuePrompt render_prompt(const std::vector<CueEntity>& entities, CueSource source);

}  // namespace dcppd::cue
