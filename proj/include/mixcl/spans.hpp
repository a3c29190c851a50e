#pragma once

// Typed span extraction over knowledge snippets. Two kinds of spans are
// produced: entity spans (capitalized runs, numbers, years, month names) and
// constituent chunks (NP / VP / PP from a shallow rule-based chunker). Both
// extractors are deterministic, stateless, and sit behind the SpanExtractor
// interface so an industrial NER or parser can be plugged in instead.

#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mixcl/error.hpp"
#include "mixcl/text.hpp"

namespace mixcl {

enum class SpanKind { entity, constituent };

struct Span {
    std::size_t start = 0;  // token index, inclusive
    std::size_t end = 0;    // token index, exclusive
    std::string label;
    SpanKind kind = SpanKind::entity;
    std::string text;  // detokenized [start, end)
};

class SpanExtractor {
public:
    virtual ~SpanExtractor() = default;
    virtual SpanKind kind() const = 0;
    virtual std::vector<Span> extract(const std::vector<std::string>& tokens) const = 0;

    std::vector<Span> extract_text(const std::string& text) const {
        if (text.empty()) throw DataError("span extraction requires non-empty text");
        return extract(word_tokenize(text));
    }
};

namespace detail {

inline bool is_capitalized(const std::string& tok) {
    return !tok.empty() && tok[0] >= 'A' && tok[0] <= 'Z';
}

inline bool is_digits(const std::string& tok) {
    if (tok.empty()) return false;
    for (unsigned char c : tok)
        if (c < '0' || c > '9') return false;
    return true;
}

inline bool is_sentence_end(const std::string& tok) {
    return tok == "." || tok == "!" || tok == "?";
}

inline const std::unordered_set<std::string>& month_names() {
    static const std::unordered_set<std::string> m = {
        "january", "february", "march",     "april",   "may",      "june",
        "july",    "august",   "september", "october", "november", "december"};
    return m;
}

inline const std::unordered_set<std::string>& place_gazetteer() {
    static const std::unordered_set<std::string> g = {
        "paris",    "montreal", "quebec",  "canada",  "london",   "rome",   "france",
        "england",  "oslo",     "tokyo",   "berlin",  "madrid",   "vienna", "cairo",
        "sydney",   "moscow",   "lisbon",  "dublin",  "athens",   "prague", "geneva",
        "toronto",  "chicago",  "boston",  "seattle", "denver",   "austin", "winnipeg",
        "helsinki", "zurich",   "bergen",  "naples",  "venice",   "kyoto",  "osaka",
        "lagos",    "nairobi",  "lima",    "bogota",  "havana",   "quito",  "dakar",
        "tunis",    "valletta", "tallinn", "riga",    "vilnius",  "krakow", "porto",
        "granada",  "seville",  "bruges",  "ghent",   "lucerne",  "turin",  "verona"};
    return g;
}

inline const std::unordered_set<std::string>& person_gazetteer() {
    static const std::unordered_set<std::string> g = {
        "john", "mary", "james", "henry", "thierry", "william", "george",
        "anna", "peter", "sarah", "david", "laura",  "charles", "emily"};
    return g;
}

inline const std::unordered_set<std::string>& org_markers() {
    static const std::unordered_set<std::string> g = {
        "inc", "corp", "ltd", "university", "institute", "company", "society", "press"};
    return g;
}

inline const std::unordered_set<std::string>& determiners() {
    static const std::unordered_set<std::string> w = {
        "the", "a", "an", "this", "that", "these", "those", "my",  "your", "his",
        "her", "its", "our", "their", "some", "any", "no",  "each", "every"};
    return w;
}

inline const std::unordered_set<std::string>& prepositions() {
    static const std::unordered_set<std::string> w = {
        "in",   "on",    "at",      "by",     "for",    "with",   "from",    "to",
        "of",   "into",  "over",    "under",  "about",  "after",  "before",  "between",
        "during", "through", "against", "without", "within", "near", "since", "until"};
    return w;
}

inline const std::unordered_set<std::string>& pronouns() {
    static const std::unordered_set<std::string> w = {"i",  "you", "he",   "she",
                                                      "it", "we",  "they", "who"};
    return w;
}

inline const std::unordered_set<std::string>& conjunctions() {
    static const std::unordered_set<std::string> w = {"and", "or", "but", "nor", "so", "yet"};
    return w;
}

inline const std::unordered_set<std::string>& verb_list() {
    static const std::unordered_set<std::string> w = {
        "is",    "are",   "was",    "were",  "be",    "been",  "being", "am",     "has",
        "have",  "had",   "do",     "does",  "did",   "can",   "could", "will",   "would",
        "shall", "should", "may",   "might", "must",  "say",   "says",  "said",   "go",
        "goes",  "went",  "make",   "makes", "made",  "know",  "knows", "knew",   "think",
        "thinks", "thought", "see", "sees",  "saw",   "come",  "comes", "came",   "take",
        "takes", "took",  "get",    "gets",  "got",   "give",  "gives", "gave",   "find",
        "finds", "found", "tell",   "tells", "told",  "keep",  "kept",  "hold",   "held",
        "write", "writes", "wrote", "born",  "dies",  "lives", "live",  "wins",   "won",
        "sings", "sang",  "bring",  "brought", "begin", "began", "put", "becomes", "became",
        "fall",  "falls", "fell"};
    return w;
}

inline const std::unordered_set<std::string>& adjective_list() {
    static const std::unordered_set<std::string> w = {
        "big",   "small", "good",   "bad",    "old",   "new",     "young",  "long",
        "short", "high",  "low",    "great",  "little", "large",  "early",  "late",
        "hot",   "cold",  "red",    "blue",   "green", "black",   "white",  "famous",
        "french", "english", "popular", "important", "first",    "last",   "best"};
    return w;
}

inline const std::unordered_set<std::string>& particles() {
    static const std::unordered_set<std::string> w = {"up",  "down", "out",  "off",
                                                      "over", "away", "back", "along"};
    return w;
}

inline bool is_verb(const std::string& lower) {
    if (verb_list().count(lower)) return true;
    const std::size_t n = lower.size();
    if (n > 3 && lower.compare(n - 2, 2, "ed") == 0) return true;
    if (n > 4 && lower.compare(n - 3, 3, "ing") == 0) return true;
    return false;
}

inline bool is_adjective(const std::string& lower) {
    if (adjective_list().count(lower)) return true;
    const std::size_t n = lower.size();
    if (n > 4 && (lower.compare(n - 3, 3, "ful") == 0 || lower.compare(n - 3, 3, "ous") == 0 ||
                  lower.compare(n - 3, 3, "ive") == 0))
        return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entity extraction
// ---------------------------------------------------------------------------

class EntityExtractor final : public SpanExtractor {
public:
    SpanKind kind() const override { return SpanKind::entity; }

    std::vector<Span> extract(const std::vector<std::string>& tokens) const override {
        using namespace detail;
        std::vector<Span> spans;
        const std::size_t n = tokens.size();
        std::size_t i = 0;
        while (i < n) {
            const std::string lower = to_lower(tokens[i]);
            if (month_names().count(lower)) {
                spans.push_back(make_span(tokens, i, i + 1, "time"));
                ++i;
                continue;
            }
            if (is_capitalized(tokens[i])) {
                // Maximal capitalized run; a comma joins two capitalized
                // tokens into the same run ("Montreal, Quebec, Canada").
                std::size_t j = i + 1;
                while (j < n) {
                    if (is_capitalized(tokens[j])) {
                        ++j;
                    } else if (tokens[j] == "," && j + 1 < n && is_capitalized(tokens[j + 1])) {
                        j += 2;
                    } else {
                        break;
                    }
                }
                const bool sentence_initial = i == 0 || is_sentence_end(tokens[i - 1]);
                std::string label = run_label(tokens, i, j);
                const bool gazetteer_hit = !label.empty();
                if (!sentence_initial || gazetteer_hit) {
                    if (label.empty()) label = "person";
                    spans.push_back(make_span(tokens, i, j, label));
                }
                i = j;
                continue;
            }
            if (is_digits(tokens[i])) {
                spans.push_back(make_span(tokens, i, i + 1, tokens[i].size() == 4 ? "time" : "number"));
                ++i;
                continue;
            }
            ++i;
        }
        return spans;
    }

private:
    static std::string run_label(const std::vector<std::string>& tokens, std::size_t begin,
                                 std::size_t end) {
        using namespace detail;
        for (std::size_t k = begin; k < end; ++k) {
            const std::string lower = to_lower(tokens[k]);
            if (place_gazetteer().count(lower)) return "place";
            if (org_markers().count(lower)) return "org";
            if (person_gazetteer().count(lower)) return "person";
        }
        return "";
    }

    static Span make_span(const std::vector<std::string>& tokens, std::size_t begin,
                          std::size_t end, std::string label) {
        return {begin, end, std::move(label), SpanKind::entity, detokenize(tokens, begin, end)};
    }
};

// ---------------------------------------------------------------------------
// Constituent extraction (shallow chunker)
// ---------------------------------------------------------------------------

class ConstituentExtractor final : public SpanExtractor {
public:
    SpanKind kind() const override { return SpanKind::constituent; }

    std::vector<Span> extract(const std::vector<std::string>& tokens) const override {
        std::vector<Span> spans;
        const std::size_t n = tokens.size();
        std::size_t i = 0;
        while (i < n) {
            // Longest match first: PP (prep + NP) > NP > VP.
            if (std::size_t pp_end = match_pp(tokens, i); pp_end > i) {
                spans.push_back(make_span(tokens, i, pp_end, "PP"));
                i = pp_end;
                continue;
            }
            if (std::size_t np_end = match_np(tokens, i); np_end > i) {
                spans.push_back(make_span(tokens, i, np_end, "NP"));
                i = np_end;
                continue;
            }
            if (std::size_t vp_end = match_vp(tokens, i); vp_end > i) {
                spans.push_back(make_span(tokens, i, vp_end, "VP"));
                i = vp_end;
                continue;
            }
            ++i;
        }
        return spans;
    }

private:
    static bool is_noun(const std::string& lower) {
        using namespace detail;
        if (lower.empty() || is_punct_token(lower)) return false;
        if (determiners().count(lower) || prepositions().count(lower) ||
            pronouns().count(lower) || conjunctions().count(lower) || particles().count(lower))
            return false;
        if (is_verb(lower) || is_adjective(lower)) return false;
        return true;
    }

    // NP := pronoun | det? adj* noun+
    static std::size_t match_np(const std::vector<std::string>& tokens, std::size_t i) {
        using namespace detail;
        const std::size_t n = tokens.size();
        if (i >= n) return i;
        const std::string first = to_lower(tokens[i]);
        if (pronouns().count(first)) return i + 1;
        std::size_t j = i;
        if (determiners().count(first)) ++j;
        while (j < n && is_adjective(to_lower(tokens[j]))) ++j;
        std::size_t nouns = 0;
        while (j < n && is_noun(to_lower(tokens[j]))) {
            ++j;
            ++nouns;
        }
        return nouns > 0 ? j : i;
    }

    // PP := prep NP
    static std::size_t match_pp(const std::vector<std::string>& tokens, std::size_t i) {
        using namespace detail;
        if (i >= tokens.size() || !prepositions().count(to_lower(tokens[i]))) return i;
        const std::size_t np_end = match_np(tokens, i + 1);
        return np_end > i + 1 ? np_end : i;
    }

    // VP := verb+ particle*
    static std::size_t match_vp(const std::vector<std::string>& tokens, std::size_t i) {
        using namespace detail;
        const std::size_t n = tokens.size();
        std::size_t j = i;
        while (j < n && is_verb(to_lower(tokens[j]))) ++j;
        if (j == i) return i;
        while (j < n && particles().count(to_lower(tokens[j]))) ++j;
        return j;
    }

    static Span make_span(const std::vector<std::string>& tokens, std::size_t begin,
                          std::size_t end, std::string label) {
        return {begin, end, std::move(label), SpanKind::constituent, detokenize(tokens, begin, end)};
    }
};

inline std::map<std::string, std::vector<Span>> spans_by_label(const std::vector<Span>& spans) {
    std::map<std::string, std::vector<Span>> grouped;
    for (const auto& s : spans) grouped[s.label].push_back(s);
    return grouped;
}

struct SpanExtractors {
    std::shared_ptr<const SpanExtractor> entity = std::make_shared<EntityExtractor>();
    std::shared_ptr<const SpanExtractor> constituent = std::make_shared<ConstituentExtractor>();

    const SpanExtractor& by_kind(SpanKind kind) const {
        return kind == SpanKind::entity ? *entity : *constituent;
    }
};

}  // namespace mixcl
