#pragma once

// Automatic evaluation metrics. All text metrics share one normalization
// (lowercase, punctuation stripped, whitespace split) so F1, knowledge F1,
// entity F1, BLEU and ROUGE-L agree on token boundaries. Every metric is a
// pure function bounded in [0, 1] and never errors on empty strings.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixcl/error.hpp"
#include "mixcl/spans.hpp"
#include "mixcl/text.hpp"

namespace mixcl {

namespace detail {

inline double multiset_f1(const std::vector<std::string>& pred,
                          const std::vector<std::string>& ref) {
    if (pred.empty() || ref.empty()) return 0.0;
    std::map<std::string, long> counts;
    for (const auto& t : ref) ++counts[t];
    long overlap = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 2.0 * p * r / (p + r);
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Tokens covered by entity spans, metric-normalized (span-internal commas drop out).
inline std::vector<std::string> entity_tokens(const std::string& text,
                                              const SpanExtractor& extractor) {
    if (text.empty()) return {};
    const std::vector<std::string> tokens = word_tokenize(text);
    std::vector<std::string> kept;
    for (const Span& s : extractor.extract(tokens)) {
        for (std::size_t i = s.start; i < s.end; ++i) {
            if (!is_punct_token(tokens[i])) kept.push_back(to_lower(tokens[i]));
        }
    }
    return kept;
}

}  // namespace detail

/// Multiset unigram F1 over normalized tokens; 0 when either side is empty.
inline double unigram_f1(const std::string& pred, const std::string& ref) {
    return detail::multiset_f1(metric_tokens(pred), metric_tokens(ref));
}

/// Unigram F1 against the gold knowledge sentence.
inline double knowledge_f1(const std::string& pred, const std::string& gold_knowledge) {
    return unigram_f1(pred, gold_knowledge);
}

/// Deletes non-entity tokens on both sides, then unigram F1 over what
/// remains; 0 when either side has no entities.
inline double entity_f1(const std::string& pred, const std::string& ref,
                        const SpanExtractor& extractor) {
    return detail::multiset_f1(detail::entity_tokens(pred, extractor),
                               detail::entity_tokens(ref, extractor));
}

inline double entity_f1(const std::string& pred, const std::string& ref) {
    static const EntityExtractor extractor;
    return entity_f1(pred, ref, extractor);
}

/// ROUGE-L F-measure with beta = 1.
inline double rouge_l(const std::string& pred, const std::string& ref) {
    const auto p = metric_tokens(pred);
    const auto r = metric_tokens(ref);
    if (p.empty() || r.empty()) return 0.0;
    const std::size_t lcs = detail::lcs_length(p, r);
    if (lcs == 0) return 0.0;
    const double prec = static_cast<double>(lcs) / static_cast<double>(p.size());
    const double rec = static_cast<double>(lcs) / static_cast<double>(r.size());
    return 2.0 * prec * rec / (prec + rec);
}

/// Corpus BLEU with uniform weights up to max_n and brevity penalty.
/// Smoothing rule, pinned for reproducibility: orders n >= 2 with zero
/// matches add one to their numerator and denominator; a zero unigram match
/// means BLEU 0.
class BleuAccumulator {
public:
    explicit BleuAccumulator(int max_n = 4) : max_n_(max_n) {
        if (max_n != 2 && max_n != 4) throw ConfigError("bleu max_n must be 2 or 4");
        match_.assign(static_cast<std::size_t>(max_n), 0);
        total_.assign(static_cast<std::size_t>(max_n), 0);
    }

    void add(const std::string& pred, const std::string& ref) {
        const auto p = metric_tokens(pred);
        const auto r = metric_tokens(ref);
        pred_len_ += p.size();
        ref_len_ += r.size();
        for (int n = 1; n <= max_n_; ++n) {
            const auto un = static_cast<std::size_t>(n);
            std::map<std::string, long> ref_grams;
            for (std::size_t i = 0; i + un <= r.size(); ++i) ++ref_grams[join_gram(r, i, un)];
            long matched = 0;
            long total = 0;
            for (std::size_t i = 0; i + un <= p.size(); ++i) {
                ++total;
                auto it = ref_grams.find(join_gram(p, i, un));
                if (it != ref_grams.end() && it->second > 0) {
                    --it->second;
                    ++matched;
                }
            }
            match_[un - 1] += matched;
            total_[un - 1] += total;
        }
    }

    double value() const {
        if (pred_len_ == 0) return 0.0;
        if (match_[0] == 0) return 0.0;
        double log_sum = 0.0;
        for (int n = 0; n < max_n_; ++n) {
            double num = static_cast<double>(match_[static_cast<std::size_t>(n)]);
            double den = static_cast<double>(total_[static_cast<std::size_t>(n)]);
            if (n > 0 && num == 0.0) {
                num += 1.0;
                den += 1.0;
            }
            if (den == 0.0) return 0.0;
            log_sum += std::log(num / den) / static_cast<double>(max_n_);
        }
        const double bp = pred_len_ >= ref_len_
                              ? 1.0
                              : std::exp(1.0 - static_cast<double>(ref_len_) /
                                                   static_cast<double>(pred_len_));
        return bp * std::exp(log_sum);
    }

private:
    static std::string join_gram(const std::vector<std::string>& toks, std::size_t at,
                                 std::size_t n) {
        std::string g = toks[at];
        for (std::size_t i = 1; i < n; ++i) {
            g += '\x1f';
            g += toks[at + i];
        }
        return g;
    }

    int max_n_;
    std::vector<long> match_, total_;
    std::size_t pred_len_ = 0, ref_len_ = 0;
};

inline double bleu(const std::string& pred, const std::string& ref, int max_n = 4) {
    BleuAccumulator acc(max_n);
    acc.add(pred, ref);
    return acc.value();
}

/// 1 iff the candidate with the highest unigram F1 against pred is the gold
/// one; ties break toward the lowest index.
inline int knowledge_accuracy(const std::string& pred, const std::vector<std::string>& candidates,
                              int gold_index) {
    if (candidates.empty()) throw DataError("knowledge_accuracy requires candidates");
    if (gold_index < 0 || static_cast<std::size_t>(gold_index) >= candidates.size())
        throw DataError("knowledge_accuracy gold index out of range");
    std::size_t best = 0;
    double best_score = unigram_f1(pred, candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double s = unigram_f1(pred, candidates[i]);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best == static_cast<std::size_t>(gold_index) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Corpus-level evaluation report
// ---------------------------------------------------------------------------

struct EvalExample {
    std::string pred;
    std::string ref;
    std::string knowledge;                // gold knowledge sentence ("" when absent)
    std::vector<std::string> candidates;  // knowledge candidates for accuracy
    std::optional<int> gold_candidate;
};

struct MetricsReport {
    double f1 = 0.0;
    double rouge_l = 0.0;
    double bleu2 = 0.0;
    double bleu4 = 0.0;
    double knowledge_f1 = 0.0;
    double entity_f1 = 0.0;
    double accuracy = 0.0;
    std::size_t examples = 0;
    std::size_t accuracy_examples = 0;  // examples carrying candidates + gold
};

inline MetricsReport evaluate(const std::vector<EvalExample>& examples) {
    if (examples.empty()) throw DataError("evaluate requires at least one example");
    MetricsReport rep;
    rep.examples = examples.size();
    BleuAccumulator b2(2), b4(4);
    long acc_hits = 0;
    for (const auto& ex : examples) {
        rep.f1 += unigram_f1(ex.pred, ex.ref);
        rep.rouge_l += rouge_l(ex.pred, ex.ref);
        rep.knowledge_f1 += knowledge_f1(ex.pred, ex.knowledge);
        rep.entity_f1 += entity_f1(ex.pred, ex.knowledge);
        b2.add(ex.pred, ex.ref);
        b4.add(ex.pred, ex.ref);
        if (ex.gold_candidate && !ex.candidates.empty()) {
            ++rep.accuracy_examples;
            acc_hits += knowledge_accuracy(ex.pred, ex.candidates, *ex.gold_candidate);
        }
    }
    const auto n = static_cast<double>(rep.examples);
    rep.f1 /= n;
    rep.rouge_l /= n;
    rep.knowledge_f1 /= n;
    rep.entity_f1 /= n;
    rep.bleu2 = b2.value();
    rep.bleu4 = b4.value();
    rep.accuracy = rep.accuracy_examples > 0
                       ? static_cast<double>(acc_hits) / static_cast<double>(rep.accuracy_examples)
                       : 0.0;
    return rep;
}

/// One-line table in the reporting convention: values x100, one decimal.
inline std::string format_report(const MetricsReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "F1 %.1f  RL %.1f  B2 %.1f  B4 %.1f  KF1 %.1f  EF1 %.1f  Acc %.1f",
                  r.f1 * 100.0, r.rouge_l * 100.0, r.bleu2 * 100.0, r.bleu4 * 100.0,
                  r.knowledge_f1 * 100.0, r.entity_f1 * 100.0, r.accuracy * 100.0);
    return buf;
}

/// Machine-readable twin of format_report: same x100 one-decimal rounding.
inline nlohmann::ordered_json structured_report(const MetricsReport& r) {
    const auto pct = [](double v) { return std::round(v * 1000.0) / 10.0; };
    return {{"F1", pct(r.f1)},
            {"RL", pct(r.rouge_l)},
            {"B2", pct(r.bleu2)},
            {"B4", pct(r.bleu4)},
            {"KF1", pct(r.knowledge_f1)},
            {"EF1", pct(r.entity_f1)},
            {"Acc", pct(r.accuracy)},
            {"n_examples", r.examples},
            {"n_accuracy_examples", r.accuracy_examples}};
}

// ---------------------------------------------------------------------------
// Hallucination taxonomy aggregation (labels are human-produced)
// ---------------------------------------------------------------------------

enum class HallucinationCategory {
    intrinsic_nonfactual,
    intrinsic_entity,
    intrinsic_ambiguous,
    extrinsic_out_of_context,
    extrinsic_confusion,
    extrinsic_nonspecific,
    other_ok,
    other_mechanical,
    other_no_knowledge,
    other_repeat,
};

inline constexpr std::size_t kNumHallucinationCategories = 10;

inline const char* category_name(HallucinationCategory c) {
    switch (c) {
        case HallucinationCategory::intrinsic_nonfactual: return "intrinsic_nonfactual";
        case HallucinationCategory::intrinsic_entity: return "intrinsic_entity";
        case HallucinationCategory::intrinsic_ambiguous: return "intrinsic_ambiguous";
        case HallucinationCategory::extrinsic_out_of_context: return "extrinsic_out_of_context";
        case HallucinationCategory::extrinsic_confusion: return "extrinsic_confusion";
        case HallucinationCategory::extrinsic_nonspecific: return "extrinsic_nonspecific";
        case HallucinationCategory::other_ok: return "other_ok";
        case HallucinationCategory::other_mechanical: return "other_mechanical";
        case HallucinationCategory::other_no_knowledge: return "other_no_knowledge";
        case HallucinationCategory::other_repeat: return "other_repeat";
    }
    throw DataError("unknown hallucination category");
}

inline HallucinationCategory category_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kNumHallucinationCategories; ++i) {
        const auto c = static_cast<HallucinationCategory>(i);
        if (name == category_name(c)) return c;
    }
    throw DataError("unknown hallucination category: " + name);
}

struct HallucinationLabel {
    std::string example_id;
    HallucinationCategory category = HallucinationCategory::other_ok;
};

struct TaxonomyReport {
    std::array<std::size_t, kNumHallucinationCategories> counts{};
    std::size_t total = 0;

    double fraction(HallucinationCategory c) const {
        return static_cast<double>(counts[static_cast<std::size_t>(c)]) /
               static_cast<double>(total);
    }
    double intrinsic_fraction() const {
        return group_fraction(0, 3);
    }
    double extrinsic_fraction() const {
        return group_fraction(3, 6);
    }
    double other_fraction() const {
        return group_fraction(6, kNumHallucinationCategories);
    }

    std::string table() const {
        std::string out;
        char buf[96];
        const auto row = [&](const char* name, double frac) {
            std::snprintf(buf, sizeof(buf), "%-26s %5.1f%%\n", name, frac * 100.0);
            out += buf;
        };
        for (std::size_t i = 0; i < kNumHallucinationCategories; ++i) {
            const auto c = static_cast<HallucinationCategory>(i);
            row(category_name(c), fraction(c));
            if (i == 2) row("intrinsic (subtotal)", intrinsic_fraction());
            if (i == 5) row("extrinsic (subtotal)", extrinsic_fraction());
        }
        row("other (subtotal)", other_fraction());
        return out;
    }

private:
    double group_fraction(std::size_t from, std::size_t to) const {
        std::size_t s = 0;
        for (std::size_t i = from; i < to; ++i) s += counts[i];
        return static_cast<double>(s) / static_cast<double>(total);
    }
};

inline TaxonomyReport taxonomy_report(const std::vector<HallucinationLabel>& labels) {
    if (labels.empty()) throw DataError("taxonomy report requires labels");
    TaxonomyReport rep;
    rep.total = labels.size();
    for (const auto& l : labels) ++rep.counts[static_cast<std::size_t>(l.category)];
    return rep;
}

/// Labels file: one JSON object per line, {"example_id": str, "category": str}.
inline std::vector<HallucinationLabel> parse_labels(std::istream& in, const std::string& name) {
    std::vector<HallucinationLabel> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object() || !rec.contains("example_id") ||
            !rec.contains("category"))
            throw DataError(name + ":" + std::to_string(line_no) + ": malformed label record");
        HallucinationLabel l;
        l.example_id = rec["example_id"].get<std::string>();
        l.category = category_from_name(rec["category"].get<std::string>());
        labels.push_back(std::move(l));
    }
    return labels;
}

inline std::vector<HallucinationLabel> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot open labels file: " + path);
    return parse_labels(in, path);
}

}  // namespace mixcl
