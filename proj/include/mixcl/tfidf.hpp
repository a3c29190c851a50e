#pragma once

// Sparse TF-IDF retrieval over the knowledge corpus. Weighting is raw term
// frequency times smoothed idf ln((1+N)/(1+df)) + 1; ranking is by cosine
// similarity with ties broken by ascending snippet index, so results are
// deterministic across runs. The built index is immutable; retrieval is
// read-only and safe to call concurrently.

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mixcl/corpus.hpp"
#include "mixcl/error.hpp"
#include "mixcl/io.hpp"
#include "mixcl/text.hpp"

namespace mixcl {

inline constexpr const char* kIndexMagic = "MIXCL-IDX v1";

struct TfIdfConfig {
    std::unordered_set<std::string> stopwords = default_stopwords();
};

struct TfIdfIndex {
    KnowledgeCorpus corpus;
    std::vector<std::string> terms;                        // term id -> term
    std::unordered_map<std::string, int> vocabulary;       // term -> id
    std::vector<int> doc_freq;                             // term id -> df
    std::vector<std::vector<std::pair<int, int>>> postings;  // term id -> [(doc, tf)], doc asc
    std::vector<double> doc_norm;                          // doc -> L2 norm of tf-idf vector
    std::unordered_set<std::string> stopwords;

    double idf(int term_id) const {
        const double n = static_cast<double>(corpus.size());
        return std::log((1.0 + n) / (1.0 + doc_freq[term_id])) + 1.0;
    }
};

struct ScoredSnippet {
    int index = -1;  // snippet index in the corpus
    double score = 0.0;

    const KnowledgeSnippet& snippet(const TfIdfIndex& idx) const {
        return idx.corpus.snippets[static_cast<std::size_t>(index)];
    }
};

namespace detail {

// Index tokens for one document. If stopword filtering removes everything,
// fall back to the unfiltered tokens so every snippet stays retrievable and
// keeps a positive norm; a snippet of pure punctuation indexes its raw text
// as one opaque term.
inline std::vector<std::string> index_tokens(const std::string& text,
                                             const std::unordered_set<std::string>& stopwords) {
    std::vector<std::string> all = metric_tokens(text);
    std::vector<std::string> kept;
    for (const auto& t : all)
        if (!stopwords.count(t)) kept.push_back(t);
    if (!kept.empty()) return kept;
    if (!all.empty()) return all;
    return {to_lower(text)};
}

// Query tokens mirror the document fallback so any indexed snippet can be
// found by its own text, including stopword-only and punctuation-only ones.
inline std::vector<std::string> query_tokens(std::string_view query,
                                             const std::unordered_set<std::string>& stopwords) {
    std::vector<std::string> all = metric_tokens(query);
    std::vector<std::string> kept;
    for (const auto& t : all)
        if (!stopwords.count(t)) kept.push_back(t);
    if (!kept.empty()) return kept;
    if (!all.empty()) return all;
    if (!query.empty()) return {to_lower(query)};
    return {};
}

}  // namespace detail

inline TfIdfIndex build_index(KnowledgeCorpus corpus, const TfIdfConfig& config = {}) {
    if (corpus.empty()) throw DataError("cannot build an index over an empty corpus");

    TfIdfIndex idx;
    idx.corpus = std::move(corpus);
    idx.stopwords = config.stopwords;

    for (std::size_t doc = 0; doc < idx.corpus.size(); ++doc) {
        std::unordered_map<int, int> tf;
        for (const auto& term : detail::index_tokens(idx.corpus.snippets[doc].text, idx.stopwords)) {
            auto [it, inserted] = idx.vocabulary.try_emplace(term, static_cast<int>(idx.terms.size()));
            if (inserted) {
                idx.terms.push_back(term);
                idx.doc_freq.push_back(0);
                idx.postings.emplace_back();
            }
            ++tf[it->second];
        }
        for (auto& [term_id, count] : tf) {
            ++idx.doc_freq[static_cast<std::size_t>(term_id)];
            idx.postings[static_cast<std::size_t>(term_id)].emplace_back(static_cast<int>(doc), count);
        }
    }
    for (auto& plist : idx.postings)
        std::sort(plist.begin(), plist.end());

    idx.doc_norm.assign(idx.corpus.size(), 0.0);
    for (std::size_t t = 0; t < idx.postings.size(); ++t) {
        const double w_idf = idx.idf(static_cast<int>(t));
        for (auto& [doc, tf] : idx.postings[t]) {
            const double w = tf * w_idf;
            idx.doc_norm[static_cast<std::size_t>(doc)] += w * w;
        }
    }
    for (double& n : idx.doc_norm) n = std::sqrt(n);
    return idx;
}

/// Top-k snippets by cosine similarity. Snippets with zero overlap are never
/// returned, so the result may be shorter than k.
inline std::vector<ScoredSnippet> retrieve(const TfIdfIndex& idx, std::string_view query,
                                           std::size_t k) {
    if (k == 0) throw ConfigError("retrieve: k must be >= 1");

    // Query tf over in-vocabulary terms, accumulated in term-id order for a
    // fixed floating point summation order.
    std::unordered_map<int, int> qtf;
    for (const auto& term : detail::query_tokens(query, idx.stopwords)) {
        auto it = idx.vocabulary.find(term);
        if (it != idx.vocabulary.end()) ++qtf[it->second];
    }
    if (qtf.empty()) return {};

    std::vector<std::pair<int, int>> q(qtf.begin(), qtf.end());
    std::sort(q.begin(), q.end());

    double qnorm = 0.0;
    for (auto& [term_id, tf] : q) {
        const double w = tf * idx.idf(term_id);
        qnorm += w * w;
    }
    qnorm = std::sqrt(qnorm);

    std::vector<double> scores(idx.corpus.size(), 0.0);
    for (auto& [term_id, tf] : q) {
        const double w_idf = idx.idf(term_id);
        const double wq = tf * w_idf;
        for (auto& [doc, dtf] : idx.postings[static_cast<std::size_t>(term_id)])
            scores[static_cast<std::size_t>(doc)] += wq * dtf * w_idf;
    }

    std::vector<ScoredSnippet> hits;
    for (std::size_t doc = 0; doc < scores.size(); ++doc) {
        if (scores[doc] <= 0.0) continue;
        hits.push_back({static_cast<int>(doc), scores[doc] / (qnorm * idx.doc_norm[doc])});
    }
    std::sort(hits.begin(), hits.end(), [](const ScoredSnippet& a, const ScoredSnippet& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

inline void save_index(const TfIdfIndex& idx, const std::string& path, const Provenance& prov) {
    auto out = open_output(path);
    write_header(out, kIndexMagic, prov);

    nlohmann::json j;
    j["terms"] = idx.terms;
    j["doc_freq"] = idx.doc_freq;
    j["postings"] = idx.postings;
    j["doc_norm"] = idx.doc_norm;
    j["stopwords"] = std::vector<std::string>{};
    {
        std::vector<std::string> sw(idx.stopwords.begin(), idx.stopwords.end());
        std::sort(sw.begin(), sw.end());
        j["stopwords"] = sw;
    }
    nlohmann::json snippets = nlohmann::json::array();
    for (const auto& s : idx.corpus.snippets)
        snippets.push_back({{"id", s.id}, {"title", s.title}, {"text", s.text}});
    j["snippets"] = snippets;
    out << j.dump() << "\n";
}

inline TfIdfIndex load_index(const std::string& path, Provenance* prov_out = nullptr) {
    auto in = open_input(path);
    Provenance prov = read_header(in, kIndexMagic, path);
    if (prov_out) *prov_out = prov;

    std::string payload;
    std::getline(in, payload);
    nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
    if (j.is_discarded()) throw DataError(path + ": malformed index payload");

    TfIdfIndex idx;
    idx.terms = j.at("terms").get<std::vector<std::string>>();
    idx.doc_freq = j.at("doc_freq").get<std::vector<int>>();
    idx.postings = j.at("postings").get<std::vector<std::vector<std::pair<int, int>>>>();
    idx.doc_norm = j.at("doc_norm").get<std::vector<double>>();
    for (const auto& w : j.at("stopwords").get<std::vector<std::string>>()) idx.stopwords.insert(w);
    for (const auto& s : j.at("snippets")) {
        KnowledgeSnippet snip;
        snip.id = s.at("id").get<std::string>();
        snip.title = s.value("title", "");
        snip.text = s.at("text").get<std::string>();
        idx.corpus.snippets.push_back(std::move(snip));
    }
    for (std::size_t t = 0; t < idx.terms.size(); ++t)
        idx.vocabulary[idx.terms[t]] = static_cast<int>(t);
    return idx;
}

}  // namespace mixcl
