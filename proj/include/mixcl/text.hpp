#pragma once

// Shared text utilities: word-level tokenization (case preserving, punctuation
// split off as its own tokens), the lowercased/punctuation-stripped token view
// used by every metric, and the built-in English stopword list.

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace mixcl {

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline bool is_word_char(unsigned char c) {
    return std::isalnum(c) != 0 || c == '\'';
}

/// Split into surface tokens, preserving case. Punctuation characters become
/// single-character tokens so that spans and sign sequences stay aligned with
/// whatever the source text contained.
inline std::vector<std::string> word_tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) {
                tokens.push_back(std::move(cur));
                cur.clear();
            }
        } else if (is_word_char(c)) {
            cur.push_back(static_cast<char>(c));
        } else {
            if (!cur.empty()) {
                tokens.push_back(std::move(cur));
                cur.clear();
            }
            tokens.emplace_back(1, static_cast<char>(c));
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

inline bool is_punct_token(std::string_view tok) {
    return tok.size() == 1 && std::ispunct(static_cast<unsigned char>(tok[0])) != 0;
}

/// Tokenization shared by all metrics: lowercase, punctuation dropped,
/// whitespace split.
inline std::vector<std::string> metric_tokens(std::string_view text) {
    std::vector<std::string> out;
    for (auto& tok : word_tokenize(text)) {
        if (is_punct_token(tok)) continue;
        out.push_back(to_lower(tok));
    }
    return out;
}

/// Join surface tokens back into text. No space is inserted before closing
/// punctuation, which reconstructs strings like "Montreal, Quebec, Canada"
/// from their token form.
inline std::string detokenize(const std::vector<std::string>& tokens,
                              std::size_t begin, std::size_t end) {
    static const std::string no_space_before = ",.!?;:)]}%";
    static const std::string no_space_after = "([{";
    std::string out;
    bool suppress_space = true;
    for (std::size_t i = begin; i < end; ++i) {
        const std::string& tok = tokens[i];
        const bool tight = tok.size() == 1 && no_space_before.find(tok[0]) != std::string::npos;
        if (!out.empty() && !suppress_space && !tight) out.push_back(' ');
        out += tok;
        suppress_space = tok.size() == 1 && no_space_after.find(tok[0]) != std::string::npos;
    }
    return out;
}

inline std::string detokenize(const std::vector<std::string>& tokens) {
    return detokenize(tokens, 0, tokens.size());
}

/// Small fixed stopword list, applied at indexing and query time.
inline const std::unordered_set<std::string>& default_stopwords() {
    static const std::unordered_set<std::string> words = {
        "a",    "an",   "and",  "are",  "as",   "at",   "be",    "been",  "but",
        "by",   "for",  "from", "had",  "has",  "have", "he",    "her",   "his",
        "i",    "in",   "is",   "it",   "its",  "of",   "on",    "or",    "she",
        "that", "the",  "their", "them", "they", "this", "to",   "was",   "we",
        "were", "what", "when", "where", "which", "who", "will", "with",  "you"};
    return words;
}

inline bool is_stopword(std::string_view word) {
    return default_stopwords().count(std::string(word)) > 0;
}

}  // namespace mixcl
