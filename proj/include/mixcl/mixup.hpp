#pragma once

// Span-level mix-up: splice one span from a negative snippet into a positive
// snippet, producing a partially corrupted target together with a per-token
// sign sequence (1 = token kept from the positive, 0 = token inserted from
// the negative). The sign sequence drives the mixed-contrast loss. Signs are
// built positionally during splicing, never by post-hoc alignment.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mixcl/corpus.hpp"
#include "mixcl/error.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/spans.hpp"
#include "mixcl/tokenizer.hpp"

namespace mixcl {

enum class MixStrategy { entity, constituent };

inline const char* mix_strategy_name(MixStrategy s) {
    return s == MixStrategy::entity ? "entity" : "constituent";
}

inline SpanKind strategy_kind(MixStrategy s) {
    return s == MixStrategy::entity ? SpanKind::entity : SpanKind::constituent;
}

/// Bernoulli(beta_span) coin: heads picks entity replacement, tails
/// constituent replacement.
inline MixStrategy choose_strategy(double beta_span, Rng& rng) {
    if (beta_span < 0.0 || beta_span > 1.0) throw ConfigError("beta_span must lie in [0, 1]");
    return rng.bernoulli(beta_span) ? MixStrategy::entity : MixStrategy::constituent;
}

// ---------------------------------------------------------------------------
// Surface-token mixing (the core mechanism, also used for previews)
// ---------------------------------------------------------------------------

struct SurfaceMix {
    std::vector<std::string> tokens;
    std::vector<int> signs;  // signs.size() == tokens.size(); 1 positive, 0 negative
    MixStrategy strategy = MixStrategy::entity;
    Span positive_span;       // removed from the positive (indices into its tokens)
    Span negative_span;       // inserted from the negative (indices into its tokens)
    std::size_t inserted_begin = 0;  // 0-run location within tokens
    std::size_t inserted_end = 0;
};

namespace detail {

inline SurfaceMix splice(const std::vector<std::string>& pos_tokens,
                         const std::vector<std::string>& neg_tokens, const Span& pos_span,
                         const Span& neg_span, MixStrategy strategy) {
    SurfaceMix out;
    out.strategy = strategy;
    out.positive_span = pos_span;
    out.negative_span = neg_span;
    out.tokens.reserve(pos_tokens.size() - (pos_span.end - pos_span.start) +
                       (neg_span.end - neg_span.start));
    for (std::size_t i = 0; i < pos_span.start; ++i) {
        out.tokens.push_back(pos_tokens[i]);
        out.signs.push_back(1);
    }
    out.inserted_begin = out.tokens.size();
    for (std::size_t i = neg_span.start; i < neg_span.end; ++i) {
        out.tokens.push_back(neg_tokens[i]);
        out.signs.push_back(0);
    }
    out.inserted_end = out.tokens.size();
    for (std::size_t i = pos_span.end; i < pos_tokens.size(); ++i) {
        out.tokens.push_back(pos_tokens[i]);
        out.signs.push_back(1);
    }
    return out;
}

}  // namespace detail

/// Single-substitution mix over surface tokens. A positive span and a
/// label-matched negative span are picked uniformly; when the two sides share
/// no label but both carry spans of the strategy's kind, any cross pair is
/// eligible. Returns nullopt (mix failure) when either side has no spans.
inline std::optional<SurfaceMix> surface_mix(const std::vector<std::string>& pos_tokens,
                                             const std::vector<std::string>& neg_tokens,
                                             MixStrategy strategy, Rng& rng,
                                             const SpanExtractors& extractors = {}) {
    if (pos_tokens.empty() || neg_tokens.empty())
        throw DataError("mix requires non-empty token sequences");
    const SpanExtractor& ex = extractors.by_kind(strategy_kind(strategy));
    const std::vector<Span> pos_spans = ex.extract(pos_tokens);
    const std::vector<Span> neg_spans = ex.extract(neg_tokens);
    if (pos_spans.empty() || neg_spans.empty()) return std::nullopt;

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t p = 0; p < pos_spans.size(); ++p)
        for (std::size_t q = 0; q < neg_spans.size(); ++q)
            if (pos_spans[p].label == neg_spans[q].label) pairs.emplace_back(p, q);
    if (pairs.empty()) {
        // Same span kind on both sides but disjoint labels: allow any pair.
        for (std::size_t p = 0; p < pos_spans.size(); ++p)
            for (std::size_t q = 0; q < neg_spans.size(); ++q) pairs.emplace_back(p, q);
    }
    const auto [p, q] = pairs[rng.uniform_index(pairs.size())];
    return detail::splice(pos_tokens, neg_tokens, pos_spans[p], neg_spans[q], strategy);
}

/// Degenerate mix used when no span substitution is possible: the whole
/// target is the negative sequence and every sign is 0.
inline SurfaceMix surface_pure_negative(const std::vector<std::string>& neg_tokens,
                                        MixStrategy strategy) {
    if (neg_tokens.empty()) throw DataError("pure negative requires non-empty tokens");
    SurfaceMix out;
    out.strategy = strategy;
    out.tokens = neg_tokens;
    out.signs.assign(neg_tokens.size(), 0);
    out.negative_span = {0, neg_tokens.size(), "", strategy_kind(strategy),
                         detokenize(neg_tokens, 0, neg_tokens.size())};
    out.inserted_begin = 0;
    out.inserted_end = neg_tokens.size();
    return out;
}

/// Fallback chain over surface tokens: the given strategy, then the other
/// strategy, then a pure negative target. Always yields a usable sequence.
inline SurfaceMix surface_mix_with_fallback(const std::vector<std::string>& pos_tokens,
                                            const std::vector<std::string>& neg_tokens,
                                            MixStrategy strategy, Rng& rng,
                                            const SpanExtractors& extractors = {}) {
    if (auto m = surface_mix(pos_tokens, neg_tokens, strategy, rng, extractors)) return *m;
    const MixStrategy other =
        strategy == MixStrategy::entity ? MixStrategy::constituent : MixStrategy::entity;
    if (auto m = surface_mix(pos_tokens, neg_tokens, other, rng, extractors)) return *m;
    return surface_pure_negative(neg_tokens, strategy);
}

// ---------------------------------------------------------------------------
// Snippet-level mixing (token ids, ready for the model)
// ---------------------------------------------------------------------------

struct MixedSequence {
    std::vector<int> tokens;  // mixed target as token ids
    std::vector<int> signs;   // same length; 1 = from positive, 0 = from negative
    struct Replaced {
        Span positive_span;
        Span negative_span;
        MixStrategy strategy = MixStrategy::entity;
    } replaced;
    std::pair<std::string, std::string> source_ids;  // (positive id, negative id)
    std::vector<std::string> surface;                // mixed surface tokens, for inspection
    std::size_t inserted_begin = 0;
    std::size_t inserted_end = 0;
};

namespace detail {

inline MixedSequence encode_mix(SurfaceMix&& m, const KnowledgeSnippet& z_pos,
                                const KnowledgeSnippet& z_neg, const Tokenizer& tokenizer) {
    MixedSequence out;
    out.tokens = tokenizer.encode_tokens(m.tokens);
    out.signs = std::move(m.signs);
    out.replaced = {m.positive_span, m.negative_span, m.strategy};
    out.source_ids = {z_pos.id, z_neg.id};
    out.surface = std::move(m.tokens);
    out.inserted_begin = m.inserted_begin;
    out.inserted_end = m.inserted_end;
    return out;
}

}  // namespace detail

/// Mix failure is reported as nullopt; callers fall back.
inline std::optional<MixedSequence> mix(const KnowledgeSnippet& z_pos,
                                        const KnowledgeSnippet& z_neg, MixStrategy strategy,
                                        const SpanExtractors& extractors,
                                        const Tokenizer& tokenizer, Rng& rng) {
    if (z_pos.text.empty() || z_neg.text.empty())
        throw DataError("mix requires non-empty snippets");
    auto m = surface_mix(word_tokenize(z_pos.text), word_tokenize(z_neg.text), strategy, rng,
                         extractors);
    if (!m) return std::nullopt;
    return detail::encode_mix(std::move(*m), z_pos, z_neg, tokenizer);
}

/// Draws the strategy with Bernoulli(beta_span), then runs the fallback
/// chain: chosen strategy, other strategy, pure negative.
inline MixedSequence mix_with_fallback(const KnowledgeSnippet& z_pos,
                                       const KnowledgeSnippet& z_neg, double beta_span,
                                       const SpanExtractors& extractors,
                                       const Tokenizer& tokenizer, Rng& rng) {
    if (z_pos.text.empty() || z_neg.text.empty())
        throw DataError("mix requires non-empty snippets");
    const MixStrategy strategy = choose_strategy(beta_span, rng);
    SurfaceMix m = surface_mix_with_fallback(word_tokenize(z_pos.text),
                                             word_tokenize(z_neg.text), strategy, rng, extractors);
    return detail::encode_mix(std::move(m), z_pos, z_neg, tokenizer);
}

}  // namespace mixcl
