#pragma once

// Word-level tokenizer with a frequency-built vocabulary. Four reserved ids
// (pad, unk, bos, eos) sit below every content id. Punctuation marks are
// ordinary vocabulary items so token sequences stay aligned with the surface
// text they came from. Immutable after build.

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mixcl/error.hpp"
#include "mixcl/text.hpp"

namespace mixcl {

class Tokenizer {
public:
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr int bos_id = 2;
    static constexpr int eos_id = 3;
    static constexpr int num_reserved = 4;

    template <typename Range>
    static Tokenizer build(const Range& texts, std::size_t max_vocab) {
        if (max_vocab < 5)
            throw ConfigError("build_tokenizer: max_vocab must be at least 5");
        std::map<std::string, std::size_t> counts;  // ordered map: lexicographic tie-break for free
        bool any = false;
        for (const auto& text : texts) {
            any = true;
            for (auto& tok : word_tokenize(to_lower(text))) ++counts[tok];
        }
        if (!any) throw DataError("build_tokenizer: no input texts");

        std::vector<std::pair<std::string, std::size_t>> by_freq(counts.begin(), counts.end());
        std::stable_sort(by_freq.begin(), by_freq.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });

        Tokenizer t;
        const std::size_t keep = std::min(by_freq.size(), max_vocab - num_reserved);
        for (std::size_t i = 0; i < keep; ++i) {
            t.id_to_token_.push_back(by_freq[i].first);
            t.token_to_id_[by_freq[i].first] = num_reserved + static_cast<int>(i);
        }
        return t;
    }

    /// Rebuild from a stored content-token list (checkpoint round-trip).
    static Tokenizer from_vocab(const std::vector<std::string>& tokens) {
        Tokenizer t;
        for (const auto& tok : tokens) {
            const int id = num_reserved + static_cast<int>(t.id_to_token_.size());
            if (!t.token_to_id_.emplace(tok, id).second)
                throw DataError("duplicate vocabulary token: " + tok);
            t.id_to_token_.push_back(tok);
        }
        return t;
    }

    int vocab_size() const { return num_reserved + static_cast<int>(id_to_token_.size()); }

    int token_id(std::string_view token) const {
        auto it = token_to_id_.find(std::string(token));
        return it == token_to_id_.end() ? unk_id : it->second;
    }

    std::vector<int> encode(std::string_view text) const {
        std::vector<int> ids;
        for (auto& tok : word_tokenize(to_lower(text))) ids.push_back(token_id(tok));
        return ids;
    }

    /// Encode pre-split surface tokens one-to-one (used by the mixer, where
    /// sign sequences must stay aligned with tokens).
    std::vector<int> encode_tokens(const std::vector<std::string>& tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (auto& tok : tokens) ids.push_back(token_id(to_lower(tok)));
        return ids;
    }

    std::string token_text(int id) const {
        switch (id) {
            case pad_id: return "<pad>";
            case unk_id: return "<unk>";
            case bos_id: return "<bos>";
            case eos_id: return "<eos>";
            default: break;
        }
        const std::size_t i = static_cast<std::size_t>(id - num_reserved);
        if (i >= id_to_token_.size()) throw DataError("token id out of range: " + std::to_string(id));
        return id_to_token_[i];
    }

    /// Decode to text, dropping reserved tokens.
    std::string decode(const std::vector<int>& ids) const {
        std::vector<std::string> toks;
        for (int id : ids) {
            if (id < num_reserved) continue;
            toks.push_back(token_text(id));
        }
        return detokenize(toks);
    }

    const std::vector<std::string>& content_tokens() const { return id_to_token_; }

private:
    std::map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

}  // namespace mixcl
