#include "dcppd/report_grammar.hpp"

#include <stdexcept>
#include <unordered_map>

namespace dcppd::grammar {

namespace {

std::string location_phrase(const Fact& f) {
    if (f.lobe) return "the " + lobe_name(*f.lobe);
    if (f.kind == FindingKind::pleural_effusion)
        return "the " + side_name(*f.side) + " pleural space";
    return "the " + side_name(*f.side) + " lung";
}

std::string capitalize(std::string s) {
    if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
}

}  // namespace

std::string render_sentence(const Fact& f, int variant) {
    const std::string kind = kind_name(f.kind);
    if (!f.positive) {
        if (variant % kStyleVariants == 0) return "No " + kind + ".";
        return "There is no " + kind + ".";
    }
    if (!f.side.has_value()) throw std::invalid_argument("positive fact without laterality");
    const std::string loc = location_phrase(f);
    if (variant % kStyleVariants == 0) return capitalize("a " + kind + " is present in " + loc + ".");
    return "There is a " + kind + " in " + loc + ".";
}

const std::vector<std::pair<std::string, Fact>>& surface_table() {
    static const std::vector<std::pair<std::string, Fact>> table = [] {
        std::vector<std::pair<std::string, Fact>> t;
        auto emit = [&t](const Fact& f) {
            for (int v = 0; v < kStyleVariants; ++v) t.emplace_back(render_sentence(f, v), f);
        };
        for (FindingKind k : kAllKinds) {
            emit(Fact{k, false, std::nullopt, std::nullopt});
            if (kind_has_lobes(k)) {
                for (Lobe l : kAllLobes) emit(Fact{k, true, lobe_side(l), l});
            }
            for (Laterality s : {Laterality::left, Laterality::right})
                emit(Fact{k, true, s, std::nullopt});
        }
        return t;
    }();
    return table;
}

std::optional<Fact> parse_sentence(const std::string& sentence) {
    static const std::unordered_map<std::string, Fact> index = [] {
        std::unordered_map<std::string, Fact> m;
        for (const auto& [s, f] : surface_table()) m.emplace(s, f);
        return m;
    }();
    auto it = index.find(sentence);
    if (it == index.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == '.') {
            cur += '.';
            // trim leading spaces
            std::size_t b = cur.find_first_not_of(' ');
            if (b != std::string::npos && b > 0) cur.erase(0, b);
            if (cur != ".") out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    std::size_t b = cur.find_first_not_of(' ');
    if (b == std::string::npos) return out;
    if (b > 0) cur.erase(0, b);
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace dcppd::grammar
