#pragma once

// Hard-negative mining. Two pools are built per dialogue context: snippets
// retrieved from the knowledge corpus (minus the positives) and knowledge
// sampled from the model that an entailment filter judges safely wrong. The
// final set draws each of its M slots from the retrieved pool with
// probability beta_neg, else from the generated pool. Mining runs offline and
// writes a sidecar file keyed by example id; a per-example RNG derived from
// (seed, context_id) makes results independent of processing order.

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixcl/corpus.hpp"
#include "mixcl/dialogue.hpp"
#include "mixcl/error.hpp"
#include "mixcl/io.hpp"
#include "mixcl/metrics.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/tfidf.hpp"
#include "mixcl/tokenizer.hpp"

namespace mixcl {

inline constexpr char kNegativesMagic[] = "MIXCL-NEG v1";

enum class NegativeSource { retrieved, generated };

inline const char* negative_source_name(NegativeSource s) {
    return s == NegativeSource::retrieved ? "retrieved" : "generated";
}

inline NegativeSource negative_source_from_name(const std::string& name) {
    if (name == "retrieved") return NegativeSource::retrieved;
    if (name == "generated") return NegativeSource::generated;
    throw DataError("unknown negative source: " + name);
}

/// True means the candidate is safely negative (not entailed by a positive).
class EntailmentFilter {
public:
    virtual ~EntailmentFilter() = default;
    virtual bool accepts(const std::string& candidate,
                         const std::vector<std::string>& positives) const = 0;
};

/// Token-overlap stand-in for an NLI model: rejects exact matches and any
/// candidate whose unigram F1 against some positive exceeds the threshold.
class OverlapEntailmentFilter final : public EntailmentFilter {
public:
    explicit OverlapEntailmentFilter(double threshold = 0.8) : threshold_(threshold) {}

    bool accepts(const std::string& candidate,
                 const std::vector<std::string>& positives) const override {
        for (const auto& pos : positives) {
            if (candidate == pos) return false;
            if (unigram_f1(candidate, pos) > threshold_) return false;
        }
        return true;
    }

private:
    double threshold_;
};

struct NegativeItem {
    KnowledgeSnippet snippet;
    NegativeSource source = NegativeSource::retrieved;
};

struct NegativeSet {
    std::string context_id;
    std::vector<NegativeItem> items;
};

/// Top-`pool` retrieval hits with any snippet matching a positive's text
/// removed; order preserved, may return fewer than `pool`.
inline std::vector<KnowledgeSnippet> retrieved_negatives(const std::string& context,
                                                         const TfIdfIndex& index,
                                                         const std::vector<KnowledgeSnippet>& positives,
                                                         std::size_t pool) {
    if (pool == 0) throw ConfigError("retrieval pool size must be >= 1");
    std::vector<KnowledgeSnippet> out;
    for (const ScoredSnippet& hit : retrieve(index, context, pool)) {
        const KnowledgeSnippet& snip = index.corpus.snippets[hit.index];
        bool is_positive = false;
        for (const auto& p : positives)
            if (p.text == snip.text) is_positive = true;
        if (!is_positive) out.push_back(snip);
    }
    return out;
}

/// Ancestral samples from the model under the knowledge identification
/// prompt, deduplicated and filtered; zero survivors is a valid outcome.
template <typename Model>
std::vector<KnowledgeSnippet> model_generated_negatives(const Model& model,
                                                        const Tokenizer& tokenizer,
                                                        const std::vector<int>& input_ids,
                                                        const std::vector<std::string>& positives,
                                                        const EntailmentFilter& filter,
                                                        std::size_t n_samples, Rng& rng,
                                                        double temperature = 1.0) {
    if (n_samples == 0) throw ConfigError("model negative sample count must be >= 1");
    std::vector<KnowledgeSnippet> out;
    std::set<std::string> seen;
    for (std::size_t s = 0; s < n_samples; ++s) {
        const std::vector<int> ids = model.sample_decode(input_ids, rng, temperature);
        const std::string text = tokenizer.decode(ids);
        if (text.empty() || !seen.insert(text).second) continue;
        if (!filter.accepts(text, positives)) continue;
        KnowledgeSnippet snip;
        snip.id = "gen" + std::to_string(out.size());
        snip.text = text;
        out.push_back(std::move(snip));
    }
    return out;
}

/// Per-slot Bernoulli(beta_neg) mixture of the two pools. Slots draw without
/// replacement while the pools allow it; an exhausted pool hands unused items
/// of the other pool first, and only when both are spent does sampling fall
/// back to replacement. Throws when both pools are empty (the caller skips
/// the example for the contrast loss).
inline NegativeSet sample_negative_set(const std::vector<KnowledgeSnippet>& ret,
                                       const std::vector<KnowledgeSnippet>& gen, double beta_neg,
                                       std::size_t m, Rng& rng) {
    if (beta_neg < 0.0 || beta_neg > 1.0) throw ConfigError("beta_neg must lie in [0, 1]");
    if (m == 0) throw ConfigError("negative set size M must be >= 1");
    if (ret.empty() && gen.empty())
        throw DataError("both negative pools are empty; skip this example for the contrast loss");

    std::vector<std::size_t> unused_ret(ret.size()), unused_gen(gen.size());
    for (std::size_t i = 0; i < ret.size(); ++i) unused_ret[i] = i;
    for (std::size_t i = 0; i < gen.size(); ++i) unused_gen[i] = i;

    const auto draw_unused = [&rng](std::vector<std::size_t>& unused) {
        const std::size_t at = rng.uniform_index(unused.size());
        const std::size_t idx = unused[at];
        unused.erase(unused.begin() + static_cast<std::ptrdiff_t>(at));
        return idx;
    };

    NegativeSet set;
    set.items.reserve(m);
    for (std::size_t slot = 0; slot < m; ++slot) {
        bool pick_ret = rng.bernoulli(beta_neg);
        if (ret.empty()) pick_ret = false;
        if (gen.empty()) pick_ret = true;

        auto& primary_unused = pick_ret ? unused_ret : unused_gen;
        auto& other_unused = pick_ret ? unused_gen : unused_ret;
        NegativeItem item;
        if (!primary_unused.empty()) {
            item.source = pick_ret ? NegativeSource::retrieved : NegativeSource::generated;
            item.snippet = (pick_ret ? ret : gen)[draw_unused(primary_unused)];
        } else if (!other_unused.empty()) {
            item.source = pick_ret ? NegativeSource::generated : NegativeSource::retrieved;
            item.snippet = (pick_ret ? gen : ret)[draw_unused(other_unused)];
        } else {
            const auto& pool = pick_ret ? ret : gen;
            item.source = pick_ret ? NegativeSource::retrieved : NegativeSource::generated;
            item.snippet = pool[rng.uniform_index(pool.size())];
        }
        set.items.push_back(std::move(item));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Sidecar file: magic + provenance header, then one JSON line per context.
// ---------------------------------------------------------------------------

inline void write_negatives(const std::string& path, const std::vector<NegativeSet>& sets,
                            const Provenance& prov) {
    std::ofstream out = open_output(path);
    write_header(out, kNegativesMagic, prov);
    for (const auto& set : sets) {
        nlohmann::json rec;
        rec["context_id"] = set.context_id;
        nlohmann::json items = nlohmann::json::array();
        for (const auto& item : set.items)
            items.push_back({{"text", item.snippet.text},
                             {"source", negative_source_name(item.source)}});
        rec["negatives"] = std::move(items);
        out << rec.dump() << "\n";
    }
    out.flush();
    if (!out) throw DataError("failed writing negatives sidecar: " + path);
}

inline std::vector<NegativeSet> read_negatives(const std::string& path,
                                               Provenance* prov_out = nullptr) {
    std::ifstream in = open_input(path);
    const Provenance prov = read_header(in, kNegativesMagic, path);
    std::vector<NegativeSet> sets;
    std::string line;
    std::size_t line_no = 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("context_id") || !rec.contains("negatives"))
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed negatives record");
        NegativeSet set;
        set.context_id = rec["context_id"].get<std::string>();
        std::size_t k = 0;
        for (const auto& item : rec["negatives"]) {
            NegativeItem ni;
            ni.snippet.id = "neg" + std::to_string(k++);
            ni.snippet.text = item.at("text").get<std::string>();
            ni.source = negative_source_from_name(item.at("source").get<std::string>());
            set.items.push_back(std::move(ni));
        }
        sets.push_back(std::move(set));
    }
    if (prov_out != nullptr) *prov_out = prov;
    return sets;
}

// ---------------------------------------------------------------------------
// Offline mining stage
// ---------------------------------------------------------------------------

struct MineConfig {
    std::size_t ret_pool = 10;      // retrieval candidates per context
    std::size_t model_samples = 8;  // ancestral samples per context
    double temperature = 1.0;
    double beta_neg = 0.5;
    std::size_t m = 8;
    std::uint64_t seed = 13;
    bool full_context = true;  // retrieve on the whole context, not just the last turn
};

/// Mines one NegativeSet per example; a context with no usable negatives
/// yields an empty record so training knows to skip its contrast term.
/// Passing model = nullptr gives retrieval-only pools.
template <typename Model>
std::vector<NegativeSet> mine_negatives(const std::vector<DialogueExample>& examples,
                                        const TfIdfIndex& index, const Tokenizer* tokenizer,
                                        const Model* model, const EntailmentFilter& filter,
                                        const MineConfig& cfg) {
    if (model != nullptr && tokenizer == nullptr)
        throw ConfigError("model-generated negatives require a tokenizer");
    std::vector<NegativeSet> sets;
    sets.reserve(examples.size());
    for (const auto& ex : examples) {
        Rng rng(mix_seed(cfg.seed, ex.id));
        const std::vector<KnowledgeSnippet> ret = retrieved_negatives(
            context_text(ex, cfg.full_context), index, ex.positives, cfg.ret_pool);
        std::vector<KnowledgeSnippet> gen;
        if (model != nullptr) {
            std::vector<std::string> positive_texts;
            for (const auto& p : ex.positives) positive_texts.push_back(p.text);
            const EncodedExample enc =
                encode_example(ex.context, "", PromptTag::knowledge_identification, *tokenizer);
            gen = model_generated_negatives(*model, *tokenizer, enc.input_ids, positive_texts,
                                            filter, cfg.model_samples, rng, cfg.temperature);
        }
        NegativeSet set;
        set.context_id = ex.id;
        try {
            set = sample_negative_set(ret, gen, cfg.beta_neg, cfg.m, rng);
            set.context_id = ex.id;
        } catch (const DataError&) {
            set.items.clear();  // keep an empty record: example is skipped for contrast
        }
        sets.push_back(std::move(set));
    }
    return sets;
}

struct NoModel {
    std::vector<int> sample_decode(const std::vector<int>&, Rng&, double) const { return {}; }
};

inline std::vector<NegativeSet> mine_negatives(const std::vector<DialogueExample>& examples,
                                               const TfIdfIndex& index,
                                               const EntailmentFilter& filter,
                                               const MineConfig& cfg) {
    return mine_negatives<NoModel>(examples, index, nullptr, nullptr, filter, cfg);
}

}  // namespace mixcl
