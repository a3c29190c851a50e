#pragma once

// Knowledge-grounded dialogue data. The dialogue file is line-oriented JSON,
// one dialogue per line: {"topic": str, "turns": [{"speaker", "text",
// "response"?, "positives"?, "candidates"?, "gold_candidate"?}]}. One example
// is produced per turn that carries a response; the context accumulates all
// turns seen so far, ending with the turn's own text.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixcl/corpus.hpp"
#include "mixcl/error.hpp"
#include "mixcl/tokenizer.hpp"

namespace mixcl {

struct DialogueExample {
    std::string id;  // "d<dialogue>_t<turn>", stable across runs
    std::string topic;
    std::vector<std::pair<std::string, std::string>> context;  // (speaker tag, utterance)
    std::string response;
    std::vector<KnowledgeSnippet> positives;
    std::vector<KnowledgeSnippet> candidates;
    std::optional<int> gold_candidate;
};

struct DialogueLoadStats {
    std::size_t dialogues = 0;
    std::size_t examples = 0;
    std::size_t skipped_turns = 0;
};

inline std::vector<DialogueExample> parse_dialogues(std::istream& in, const std::string& name,
                                                    DialogueLoadStats* stats = nullptr) {
    std::vector<DialogueExample> examples;
    DialogueLoadStats local;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        const std::string where = name + ":" + std::to_string(line_no);
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object() || !rec.contains("turns") ||
            !rec["turns"].is_array())
            throw DataError(where + ": malformed dialogue record");

        const std::size_t dlg = local.dialogues++;
        const std::string topic = rec.value("topic", "");
        std::vector<std::pair<std::string, std::string>> context;
        std::size_t turn_no = 0;
        for (const auto& turn : rec["turns"]) {
            if (!turn.is_object() || !turn.contains("text") || !turn["text"].is_string())
                throw DataError(where + ": turn " + std::to_string(turn_no) + " missing `text`");
            const std::string speaker = turn.value("speaker", turn_no % 2 == 0 ? "U1" : "U2");
            context.emplace_back(speaker, turn["text"].get<std::string>());

            if (!turn.contains("response")) {
                ++local.skipped_turns;
                ++turn_no;
                continue;
            }
            DialogueExample ex;
            ex.id = "d" + std::to_string(dlg) + "_t" + std::to_string(turn_no);
            ex.topic = topic;
            ex.context = context;
            ex.response = turn["response"].get<std::string>();
            if (ex.response.empty())
                throw DataError(where + ": turn " + std::to_string(turn_no) + " has empty response");
            for (const auto& p : turn.value("positives", std::vector<std::string>{})) {
                KnowledgeSnippet s;
                s.id = ex.id + "_pos" + std::to_string(ex.positives.size());
                s.text = p;
                ex.positives.push_back(std::move(s));
            }
            for (const auto& c : turn.value("candidates", std::vector<std::string>{})) {
                KnowledgeSnippet s;
                s.id = ex.id + "_cand" + std::to_string(ex.candidates.size());
                s.text = c;
                ex.candidates.push_back(std::move(s));
            }
            if (turn.contains("gold_candidate")) {
                const int gi = turn["gold_candidate"].get<int>();
                if (gi < 0 || gi >= static_cast<int>(ex.candidates.size()))
                    throw DataError(where + ": turn " + std::to_string(turn_no) +
                                    " gold_candidate out of range");
                const std::string& gold_text = ex.candidates[static_cast<std::size_t>(gi)].text;
                bool matches_positive = false;
                for (const auto& p : ex.positives)
                    if (p.text == gold_text) matches_positive = true;
                if (!matches_positive)
                    throw DataError(where + ": turn " + std::to_string(turn_no) +
                                    " gold_candidate text is not among positives");
                ex.gold_candidate = gi;
            }
            examples.push_back(std::move(ex));
            ++local.examples;
            ++turn_no;
        }
    }
    if (stats) *stats = local;
    return examples;
}

inline std::vector<DialogueExample> load_dialogues(const std::string& path,
                                                   DialogueLoadStats* stats = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dialogue file: " + path);
    return parse_dialogues(in, path, stats);
}

// ---------------------------------------------------------------------------
// Task prompts and example encoding
// ---------------------------------------------------------------------------

enum class PromptTag { none = 0, response_generation, knowledge_identification, corpus_denoising };

inline std::string prompt_text(PromptTag tag) {
    switch (tag) {
        case PromptTag::response_generation: return "response generation :";
        case PromptTag::knowledge_identification: return "knowledge identification :";
        case PromptTag::corpus_denoising: return "corpus denoising :";
        case PromptTag::none: break;
    }
    throw ConfigError("encode_example: a prompt tag is required");
}

inline constexpr std::size_t kMaxInputLen = 128;
inline constexpr std::size_t kMaxOutputLen = 64;

struct EncodedExample {
    std::vector<int> input_ids;   // prompt + context, <= 128
    std::vector<int> output_ids;  // target + eos, <= 64
    PromptTag prompt_tag = PromptTag::none;
};

struct EncodeStats {
    std::size_t inputs_truncated = 0;
    std::size_t outputs_truncated = 0;
};

/// Prompt + speaker-tagged context, left-truncated to 128 so the most recent
/// turns survive (the prompt itself is always kept); target + eos,
/// right-truncated to 64.
inline EncodedExample encode_example(const std::vector<std::pair<std::string, std::string>>& context,
                                     const std::string& target, PromptTag tag,
                                     const Tokenizer& tokenizer, EncodeStats* stats = nullptr) {
    EncodedExample enc;
    enc.prompt_tag = tag;

    const std::vector<int> prompt_ids = tokenizer.encode(prompt_text(tag));
    std::vector<int> context_ids;
    for (const auto& [speaker, text] : context) {
        for (int id : tokenizer.encode(speaker + " :")) context_ids.push_back(id);
        for (int id : tokenizer.encode(text)) context_ids.push_back(id);
    }
    const std::size_t budget = kMaxInputLen - prompt_ids.size();
    if (context_ids.size() > budget) {
        context_ids.erase(context_ids.begin(),
                          context_ids.begin() + static_cast<std::ptrdiff_t>(context_ids.size() - budget));
        if (stats) ++stats->inputs_truncated;
    }
    enc.input_ids = prompt_ids;
    enc.input_ids.insert(enc.input_ids.end(), context_ids.begin(), context_ids.end());

    std::vector<int> target_ids = tokenizer.encode(target);
    if (target_ids.size() > kMaxOutputLen - 1) {
        target_ids.resize(kMaxOutputLen - 1);
        if (stats) ++stats->outputs_truncated;
    }
    enc.output_ids = std::move(target_ids);
    enc.output_ids.push_back(Tokenizer::eos_id);
    return enc;
}

/// Same encoding for plain (non-dialogue) input text, used by the knowledge
/// identification and denoising tasks.
inline EncodedExample encode_text_input(const std::string& input, const std::string& target,
                                        PromptTag tag, const Tokenizer& tokenizer,
                                        EncodeStats* stats = nullptr) {
    EncodedExample enc;
    enc.prompt_tag = tag;
    const std::vector<int> prompt_ids = tokenizer.encode(prompt_text(tag));
    std::vector<int> input_ids = tokenizer.encode(input);
    const std::size_t budget = kMaxInputLen - prompt_ids.size();
    if (input_ids.size() > budget) {
        input_ids.erase(input_ids.begin(),
                        input_ids.begin() + static_cast<std::ptrdiff_t>(input_ids.size() - budget));
        if (stats) ++stats->inputs_truncated;
    }
    enc.input_ids = prompt_ids;
    enc.input_ids.insert(enc.input_ids.end(), input_ids.begin(), input_ids.end());

    std::vector<int> target_ids = tokenizer.encode(target);
    if (target_ids.size() > kMaxOutputLen - 1) {
        target_ids.resize(kMaxOutputLen - 1);
        if (stats) ++stats->outputs_truncated;
    }
    enc.output_ids = std::move(target_ids);
    enc.output_ids.push_back(Tokenizer::eos_id);
    return enc;
}

/// Flatten a dialogue context to one string (used for retrieval queries).
inline std::string context_text(const DialogueExample& ex, bool full_context = true) {
    if (ex.context.empty()) return "";
    if (!full_context) return ex.context.back().second;
    std::string out;
    for (const auto& [speaker, text] : ex.context) {
        if (!out.empty()) out.push_back(' ');
        out += text;
    }
    return out;
}

}  // namespace mixcl
