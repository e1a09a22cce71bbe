#pragma once

#include <string>
#include <vector>

namespace dcppd::text {

inline bool is_punct_token(const std::string& w) { return w == "." || w == "," || w == ":"; }

// Splits on whitespace; '.', ',' and ':' become their own tokens. Hyphens
// stay inside words ("ground-glass").
inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char c : s) {
        if (c == ' ' || c == '\n' || c == '\t') {
            flush();
        } else if (c == '.' || c == ',' || c == ':') {
            flush();
            out.push_back(std::string(1, c));
        } else {
            cur += c;
        }
    }
    flush();
    return out;
}

// Canonical joining: single spaces, no space before punctuation.
inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty() && !is_punct_token(w)) out += ' ';
        out += w;
    }
    return out;
}

inline std::string canonicalize(const std::string& s) { return join_words(split_words(s)); }

}  // namespace dcppd::text
