#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dcppd/questions.hpp"

namespace dcppd::grammar {

// Every report sentence asserts exactly one fact about one finding kind.
// Positive facts carry the most specific known location; negative facts
// carry none.
struct Fact {
    FindingKind kind;
    bool positive = false;
    std::optional<Laterality> side;
    std::optional<Lobe> lobe;

    bool operator==(const Fact&) const = default;
};

// Number of synonym phrasings per fact. Style seeds select among them
// without changing extractable content.
constexpr int kStyleVariants = 2;
constexpr int kGrammarVersion = 1;

std::string render_sentence(const Fact& f, int variant);

// Every sentence the grammar can produce, with its fact. Finite by
// construction; the exact extractor is a lookup into this table.
const std::vector<std::pair<std::string, Fact>>& surface_table();

// Exact-match parse; nullopt for any sentence outside the grammar.
std::optional<Fact> parse_sentence(const std::string& sentence);

// Split flat report text at sentence periods. Trailing text without a
// period is returned as-is (it will fail to parse).
std::vector<std::string> split_sentences(const std::string& text);

}  // namespace dcppd::grammar
