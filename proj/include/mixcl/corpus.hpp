#pragma once

// Knowledge corpus ingestion. The corpus file is line-oriented JSON: one
// object per line with fields `text` (required), `id` and `title` (optional).
// Empty lines are skipped; ids default to the running record number.

#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mixcl/error.hpp"

namespace mixcl {

struct KnowledgeSnippet {
    std::string id;
    std::string title;
    std::string text;
};

struct KnowledgeCorpus {
    std::vector<KnowledgeSnippet> snippets;

    std::size_t size() const { return snippets.size(); }
    bool empty() const { return snippets.empty(); }
};

inline KnowledgeCorpus parse_corpus(std::istream& in, const std::string& name) {
    KnowledgeCorpus corpus;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object())
            throw DataError(name + ":" + std::to_string(line_no) + ": malformed corpus record");
        if (!rec.contains("text") || !rec["text"].is_string())
            throw DataError(name + ":" + std::to_string(line_no) + ": corpus record missing `text`");

        KnowledgeSnippet s;
        s.text = rec["text"].get<std::string>();
        if (s.text.empty())
            throw DataError(name + ":" + std::to_string(line_no) + ": corpus record has empty `text`");
        s.id = rec.value("id", "k" + std::to_string(corpus.size()));
        s.title = rec.value("title", "");
        if (!seen_ids.insert(s.id).second)
            throw DataError(name + ":" + std::to_string(line_no) + ": duplicate snippet id `" + s.id + "`");
        corpus.snippets.push_back(std::move(s));
    }
    return corpus;
}

inline KnowledgeCorpus ingest_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path);
    return parse_corpus(in, path);
}

}  // namespace mixcl
