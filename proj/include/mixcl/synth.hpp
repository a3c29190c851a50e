#pragma once

// Desk-scale synthetic dataset with planted hallucination pressure. A fixed
// cast of people carries templated facts (birthplace, birth year,
// profession); every fact value is shared by several people, so a model that
// learns surface templates without entity bindings will produce fluent but
// wrong answers. Gold responses restate the grounding snippet, which makes
// knowledge F1 and entity F1 sensitive to exactly that failure.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixcl/corpus.hpp"
#include "mixcl/error.hpp"
#include "mixcl/rng.hpp"

namespace mixcl {

struct SynthConfig {
    int entities = 50;   // distinct people
    int dialogues = 500;
    std::uint64_t seed = 13;
    double two_turn_rate = 0.3;  // dialogues that open with a lead-in turn
};

struct SynthDataset {
    KnowledgeCorpus corpus;
    std::vector<std::string> dialogue_lines;  // one JSON record per dialogue
};

namespace detail {

inline const std::vector<std::string>& synth_first_names() {
    static const std::vector<std::string> v = {"Anna",  "Henry", "Laura",  "Peter", "Sarah",
                                               "David", "Mary",  "George", "Emily", "James"};
    return v;
}

inline const std::vector<std::string>& synth_last_names() {
    static const std::vector<std::string> v = {"Okafor", "Lindgren", "Marchetti",
                                               "Novak",  "Tanaka",   "Kovacs"};
    return v;
}

// Every city is in the place gazetteer used by the entity extractor, so the
// confusable span in a mixed sequence is recognized as a place.
inline const std::vector<std::string>& synth_cities() {
    static const std::vector<std::string> v = {"Paris",  "London", "Berlin", "Madrid",
                                               "Rome",   "Vienna", "Oslo",   "Dublin",
                                               "Lisbon", "Athens", "Prague", "Geneva"};
    return v;
}

inline const std::vector<std::string>& synth_years() {
    static const std::vector<std::string> v = {"1881", "1887", "1893", "1899", "1904", "1910",
                                               "1916", "1922", "1928", "1934", "1940", "1946",
                                               "1952", "1958", "1964", "1970"};
    return v;
}

inline const std::vector<std::string>& synth_professions() {
    static const std::vector<std::string> v = {"painter",   "chemist",  "pianist",
                                               "novelist",  "architect", "botanist",
                                               "sculptor",  "historian", "engineer",
                                               "photographer"};
    return v;
}

struct SynthPerson {
    std::string name;
    std::string city;
    std::string year;
    std::string profession;
    std::size_t birth_snippet = 0;  // corpus indices
    std::size_t job_snippet = 0;
};

}  // namespace detail

/// Deterministic in (entities, dialogues, seed); every person receives two
/// corpus snippets and roughly dialogues/entities questions.
inline SynthDataset make_synthetic_dataset(const SynthConfig& cfg) {
    if (cfg.entities < 2) throw ConfigError("synth: entities must be >= 2");
    if (cfg.dialogues < 1) throw ConfigError("synth: dialogues must be >= 1");
    if (cfg.two_turn_rate < 0.0 || cfg.two_turn_rate > 1.0)
        throw ConfigError("synth: two_turn_rate must lie in [0, 1]");
    const auto& firsts = detail::synth_first_names();
    const auto& lasts = detail::synth_last_names();
    if (static_cast<std::size_t>(cfg.entities) > firsts.size() * lasts.size())
        throw ConfigError("synth: at most " + std::to_string(firsts.size() * lasts.size()) +
                          " entities are available");

    Rng rng(mix_seed(cfg.seed, "synth"));
    std::vector<detail::SynthPerson> people;
    people.reserve(static_cast<std::size_t>(cfg.entities));
    for (int i = 0; i < cfg.entities; ++i) {
        detail::SynthPerson p;
        p.name = firsts[static_cast<std::size_t>(i) % firsts.size()] + " " +
                 lasts[static_cast<std::size_t>(i) / firsts.size()];
        p.city = detail::synth_cities()[rng.uniform_index(detail::synth_cities().size())];
        p.year = detail::synth_years()[rng.uniform_index(detail::synth_years().size())];
        p.profession =
            detail::synth_professions()[rng.uniform_index(detail::synth_professions().size())];
        people.push_back(std::move(p));
    }

    SynthDataset out;
    for (auto& p : people) {
        KnowledgeSnippet birth;
        birth.id = "k" + std::to_string(out.corpus.size());
        birth.title = p.name;
        birth.text = p.name + " was born in " + p.city + " in " + p.year + " .";
        p.birth_snippet = out.corpus.size();
        out.corpus.snippets.push_back(std::move(birth));

        KnowledgeSnippet job;
        job.id = "k" + std::to_string(out.corpus.size());
        job.title = p.name;
        job.text = p.name + " works as a " + p.profession + " .";
        p.job_snippet = out.corpus.size();
        out.corpus.snippets.push_back(std::move(job));
    }

    for (int d = 0; d < cfg.dialogues; ++d) {
        const auto& p = people[rng.uniform_index(people.size())];
        const std::size_t qtype = rng.uniform_index(3);
        std::string question, response;
        std::size_t gold = 0;
        switch (qtype) {
            case 0:
                question = rng.bernoulli(0.5) ? "where was " + p.name + " born ?"
                                              : "in which city was " + p.name + " born ?";
                response = p.name + " was born in " + p.city + " .";
                gold = p.birth_snippet;
                break;
            case 1:
                question = rng.bernoulli(0.5) ? "when was " + p.name + " born ?"
                                              : "in which year was " + p.name + " born ?";
                response = p.name + " was born in " + p.year + " .";
                gold = p.birth_snippet;
                break;
            default:
                question = rng.bernoulli(0.5) ? "what does " + p.name + " do ?"
                                              : "what is the profession of " + p.name + " ?";
                response = p.name + " works as a " + p.profession + " .";
                gold = p.job_snippet;
                break;
        }
        const std::string gold_text = out.corpus.snippets[gold].text;

        // Candidate pool: the gold snippet, the person's other snippet, and
        // two snippets about other people, in a seeded shuffle.
        std::vector<std::string> candidates = {gold_text};
        const std::size_t sibling = gold == p.birth_snippet ? p.job_snippet : p.birth_snippet;
        candidates.push_back(out.corpus.snippets[sibling].text);
        while (candidates.size() < 4) {
            const auto& other = out.corpus.snippets[rng.uniform_index(out.corpus.size())];
            if (std::find(candidates.begin(), candidates.end(), other.text) == candidates.end())
                candidates.push_back(other.text);
        }
        for (std::size_t i = candidates.size(); i > 1; --i)
            std::swap(candidates[i - 1], candidates[rng.uniform_index(i)]);
        const auto gold_pos = static_cast<int>(
            std::find(candidates.begin(), candidates.end(), gold_text) - candidates.begin());

        nlohmann::ordered_json turns = nlohmann::ordered_json::array();
        if (rng.bernoulli(cfg.two_turn_rate))
            turns.push_back({{"speaker", "U1"}, {"text", "tell me about " + p.name + " ."}});
        nlohmann::ordered_json qa = {{"speaker", turns.empty() ? "U1" : "U2"},
                                     {"text", question},
                                     {"response", response},
                                     {"positives", {gold_text}},
                                     {"candidates", candidates},
                                     {"gold_candidate", gold_pos}};
        turns.push_back(qa);
        nlohmann::ordered_json rec = {{"topic", p.name}, {"turns", turns}};
        out.dialogue_lines.push_back(rec.dump());
    }
    return out;
}

inline void write_corpus_file(const std::string& path, const KnowledgeCorpus& corpus) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& s : corpus.snippets) {
        nlohmann::ordered_json rec = {{"id", s.id}, {"title", s.title}, {"text", s.text}};
        out << rec.dump() << "\n";
    }
    if (!out.flush()) throw DataError("failed writing corpus file: " + path);
}

inline void write_dialogues_file(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& line : lines) out << line << "\n";
    if (!out.flush()) throw DataError("failed writing dialogue file: " + path);
}

}  // namespace mixcl
