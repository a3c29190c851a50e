#pragma once

// Joint training of the grounded-response objective: a scheduled combination
// of teacher-forced likelihood on the response, the mixed-contrast loss over
// span-corrupted knowledge targets, and a denoising language-model loss over
// corpus snippets. One logical trainer owns the parameters. All randomness
// derives from (seed, epoch, example id), so batch assembly order and worker
// count can never change results.
//
// Prompt routing: the likelihood term reads the response_generation encoding,
// the contrast terms the knowledge_identification encoding, the denoising
// term the corpus_denoising encoding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mixcl/corpus.hpp"
#include "mixcl/corrupt.hpp"
#include "mixcl/dialogue.hpp"
#include "mixcl/error.hpp"
#include "mixcl/losses.hpp"
#include "mixcl/metrics.hpp"
#include "mixcl/mixup.hpp"
#include "mixcl/model.hpp"
#include "mixcl/negatives.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/tokenizer.hpp"

namespace mixcl {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 2e-5;
    double clip_norm = 0.1;  // global gradient norm ceiling
    int epochs = 5;
    int batch_size = 16;
    std::uint64_t seed = 13;
    int m = 8;               // mixed sequences per example
    double beta_neg = 0.5;   // retrieved-vs-generated mixture rate (mining)
    double beta_span = 0.5;  // entity-vs-constituent strategy rate
    double prob_floor = kProbFloor;

    // Ablation switches. mle_only implies disabling both auxiliary terms;
    // scheduled weights are kept as-is (dropped terms contribute exactly 0).
    bool disable_mcl = false;
    bool disable_lm = false;
    bool random_negatives = false;        // replace mined negatives with random snippets
    bool disable_model_negatives = false; // keep only retrieved negatives
    bool mle_only = false;

    LossWeightSchedule schedule{};  // total_steps is set by train()
    CorruptionConfig corruption{};

    // Adam with decoupled weight decay fixed at 0 and a constant step size.
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // Opt-in checkpoint selection by validation unigram F1, evaluated once
    // per epoch. Off by default: the run ends on the final parameters.
    bool select_best = false;

    bool mcl_enabled() const { return !mle_only && !disable_mcl; }
    bool lm_enabled() const { return !mle_only && !disable_lm; }

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (m < 1) throw ConfigError("m must be >= 1");
        if (beta_neg < 0.0 || beta_neg > 1.0) throw ConfigError("beta_neg must lie in [0, 1]");
        if (beta_span < 0.0 || beta_span > 1.0) throw ConfigError("beta_span must lie in [0, 1]");
        if (prob_floor <= 0.0 || prob_floor >= 0.5)
            throw ConfigError("prob_floor must lie in (0, 0.5)");
        const auto nonneg = [](const LossWeights& w) {
            return w.alpha1 >= 0.0 && w.alpha2 >= 0.0 && w.alpha3 >= 0.0;
        };
        if (!nonneg(schedule.alpha_init) || !nonneg(schedule.alpha_final))
            throw ConfigError("loss weights must be non-negative");
        if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0 ||
            adam_eps <= 0.0)
            throw ConfigError("invalid optimizer constants");
        corruption.validate();
    }
};

inline constexpr char kOptimizerName[] = "adam";

/// Multiplier that shrinks a gradient of the given norm onto the clip ball;
/// 1 when the norm is already within bounds (or degenerate).
inline double clip_scale(double grad_norm, double clip_norm) {
    if (grad_norm <= clip_norm || grad_norm <= 0.0) return 1.0;
    return clip_norm / grad_norm;
}

/// Checkpoint header fields describing how the parameters were produced.
inline nlohmann::json optimizer_metadata(const TrainConfig& cfg) {
    return {{"optimizer", kOptimizerName},
            {"weight_decay", 0.0},
            {"learning_rate", cfg.learning_rate},
            {"clip_norm", cfg.clip_norm}};
}

// ---------------------------------------------------------------------------
// Batch material
// ---------------------------------------------------------------------------

struct TrainExample {
    std::string id;
    EncodedExample response;          // response_generation prompt + context -> response
    std::vector<int> contrast_input;  // knowledge_identification prompt + context
    std::vector<KnowledgeSnippet> positives;
    NegativeSet negatives;            // empty set means: skip the contrast term
    std::string reference;            // raw response text, for validation F1
};

/// Joins dialogues with their mined negative sets (matched by example id).
/// Examples without a mined set keep an empty one.
inline std::vector<TrainExample> prepare_train_examples(
    const std::vector<DialogueExample>& dialogues, const Tokenizer& tokenizer,
    const std::map<std::string, NegativeSet>& negatives = {}, EncodeStats* stats = nullptr) {
    std::vector<TrainExample> out;
    out.reserve(dialogues.size());
    for (const auto& ex : dialogues) {
        TrainExample t;
        t.id = ex.id;
        t.response = encode_example(ex.context, ex.response, PromptTag::response_generation,
                                    tokenizer, stats);
        t.contrast_input =
            encode_example(ex.context, "", PromptTag::knowledge_identification, tokenizer)
                .input_ids;
        t.positives = ex.positives;
        t.reference = ex.response;
        if (auto it = negatives.find(ex.id); it != negatives.end()) t.negatives = it->second;
        t.negatives.context_id = ex.id;
        out.push_back(std::move(t));
    }
    return out;
}

inline std::map<std::string, NegativeSet> negatives_by_context(std::vector<NegativeSet> sets) {
    std::map<std::string, NegativeSet> out;
    for (auto& s : sets) {
        const std::string key = s.context_id;
        out[key] = std::move(s);
    }
    return out;
}

/// Bundles everything mix_with_fallback needs besides the two snippets.
struct Mixer {
    double beta_span = 0.5;
    SpanExtractors extractors{};
    const Tokenizer* tokenizer = nullptr;

    MixedSequence operator()(const KnowledgeSnippet& z_pos, const KnowledgeSnippet& z_neg,
                             Rng& rng) const {
        if (tokenizer == nullptr) throw ConfigError("mixer requires a tokenizer");
        return mix_with_fallback(z_pos, z_neg, beta_span, extractors, *tokenizer, rng);
    }
};

/// Decoder target for a mixed sequence: ids capped to the output window with
/// a final eos. The eos carries sign 1, so an identity mix trains exactly
/// like the plain likelihood target.
struct ContrastTarget {
    std::vector<int> ids;
    std::vector<int> signs;
};

inline ContrastTarget contrast_target(const MixedSequence& mixed, int max_output_len) {
    if (max_output_len < 2) throw ConfigError("max_output_len must be >= 2");
    const std::size_t cap = static_cast<std::size_t>(max_output_len) - 1;
    const std::size_t n = std::min(mixed.tokens.size(), cap);
    ContrastTarget t;
    t.ids.assign(mixed.tokens.begin(), mixed.tokens.begin() + static_cast<std::ptrdiff_t>(n));
    t.signs.assign(mixed.signs.begin(), mixed.signs.begin() + static_cast<std::ptrdiff_t>(n));
    t.ids.push_back(Tokenizer::eos_id);
    t.signs.push_back(1);
    return t;
}

/// Plain decoder target for a snippet text: ids capped to the window + eos.
inline std::vector<int> snippet_target(const Tokenizer& tokenizer, const std::string& text,
                                       int max_output_len) {
    if (max_output_len < 2) throw ConfigError("max_output_len must be >= 2");
    std::vector<int> ids = tokenizer.encode(text);
    const std::size_t cap = static_cast<std::size_t>(max_output_len) - 1;
    if (ids.size() > cap) ids.resize(cap);
    ids.push_back(Tokenizer::eos_id);
    return ids;
}

/// Denoising pair: reconstruct the snippet ids from their corrupted copy.
/// The corrupted copy rides behind the corpus_denoising prompt, truncated at
/// the tail so the snippet opening survives.
struct DenoisingExample {
    std::vector<int> input_ids;
    std::vector<int> target_ids;
};

inline DenoisingExample denoising_example(const Tokenizer& tokenizer,
                                          const std::vector<int>& k_ids,
                                          const std::vector<int>& k_hat_ids, int max_input_len,
                                          int max_output_len) {
    if (k_ids.empty() || k_hat_ids.empty())
        throw DataError("denoising requires non-empty sequences");
    DenoisingExample d;
    d.input_ids = tokenizer.encode(prompt_text(PromptTag::corpus_denoising));
    const std::size_t budget = static_cast<std::size_t>(max_input_len) - d.input_ids.size();
    const std::size_t keep = std::min(k_hat_ids.size(), budget);
    d.input_ids.insert(d.input_ids.end(), k_hat_ids.begin(),
                       k_hat_ids.begin() + static_cast<std::ptrdiff_t>(keep));
    d.target_ids = k_ids;
    const std::size_t cap = static_cast<std::size_t>(max_output_len) - 1;
    if (d.target_ids.size() > cap) d.target_ids.resize(cap);
    d.target_ids.push_back(Tokenizer::eos_id);
    return d;
}

// ---------------------------------------------------------------------------
// Model-level loss values (forward only)
// ---------------------------------------------------------------------------

template <typename Model>
double mle_loss(const Model& model, const std::vector<int>& x_ids, const std::vector<int>& y_ids,
                double prob_floor = kProbFloor) {
    if (y_ids.empty()) throw DataError("mle_loss requires a non-empty target");
    ModelTape tape;
    return mle_loss(model.forward(x_ids, y_ids, tape), prob_floor).value;
}

template <typename Model>
double lm_loss(const Model& model, const Tokenizer& tokenizer, const std::vector<int>& k_ids,
               const std::vector<int>& k_hat_ids, double prob_floor = kProbFloor) {
    const DenoisingExample d = denoising_example(tokenizer, k_ids, k_hat_ids,
                                                 model.config().max_input_len,
                                                 model.config().max_output_len);
    return mle_loss(model, d.input_ids, d.target_ids, prob_floor);
}

/// Sum over the negative set of the mixed-contrast loss, one mix per
/// negative, teacher-forced on the mixed target. The encoder pass over x is
/// shared by every mix.
template <typename Model>
double mcl_loss(const Model& model, const std::vector<int>& x_ids, const KnowledgeSnippet& z_pos,
                const NegativeSet& negatives, const Mixer& mixer, Rng& rng,
                double prob_floor = kProbFloor, std::size_t max_mixes = 0) {
    if (z_pos.text.empty()) throw DataError("mcl_loss requires a non-empty positive snippet");
    EncoderCache enc;
    model.encode(x_ids, enc);
    std::size_t count = negatives.items.size();
    if (max_mixes > 0) count = std::min(count, max_mixes);
    double total = 0.0;
    DecoderCache dec;
    for (std::size_t i = 0; i < count; ++i) {
        const MixedSequence mixed = mixer(z_pos, negatives.items[i].snippet, rng);
        const ContrastTarget target = contrast_target(mixed, model.config().max_output_len);
        const auto& probs = model.decode_forward(enc, target.ids, dec);
        total += mixed_contrast_loss(probs, target.signs, prob_floor).value;
    }
    return total;
}

/// Non-mixed baseline: softmax contrast over total sequence log-probabilities
/// of the positive snippet against each negative snippet.
template <typename Model>
double sentence_contrastive_loss(const Model& model, const std::vector<int>& x_ids,
                                 const KnowledgeSnippet& z_pos,
                                 const std::vector<KnowledgeSnippet>& negatives,
                                 const Tokenizer& tokenizer, double prob_floor = kProbFloor) {
    if (negatives.empty()) throw DataError("sentence contrast needs at least one negative");
    EncoderCache enc;
    model.encode(x_ids, enc);
    DecoderCache dec;
    const int max_out = model.config().max_output_len;
    std::vector<double> pos_probs =
        model.decode_forward(enc, snippet_target(tokenizer, z_pos.text, max_out), dec);
    std::vector<std::vector<double>> neg_probs;
    neg_probs.reserve(negatives.size());
    for (const auto& z : negatives)
        neg_probs.push_back(model.decode_forward(enc, snippet_target(tokenizer, z.text, max_out), dec));
    return sentence_contrastive_loss(pos_probs, neg_probs, prob_floor).value;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct StepRecord {
    long step = 0;
    double alpha1 = 0.0;
    double alpha2 = 0.0;
    double alpha3 = 0.0;
    double mle = 0.0;       // batch mean
    double mcl = 0.0;       // batch mean of per-example sums over mixes
    double lm = 0.0;        // batch mean
    double joint = 0.0;     // alpha1*mle + alpha2*mcl + alpha3*lm
    double grad_norm = 0.0; // global norm before clipping
};

/// One record per line, stable key order, no timestamps: logs from identical
/// runs are byte-identical.
inline void write_train_log(std::ostream& out, const std::vector<StepRecord>& log) {
    for (const auto& r : log) {
        nlohmann::ordered_json j{{"step", r.step},   {"alpha1", r.alpha1},
                                 {"alpha2", r.alpha2}, {"alpha3", r.alpha3},
                                 {"L_MLE", r.mle},     {"L_MCL", r.mcl},
                                 {"L_LM", r.lm},       {"J", r.joint},
                                 {"grad_norm", r.grad_norm}};
        out << j.dump() << "\n";
    }
}

struct TrainResult {
    std::vector<StepRecord> log;
    long total_steps = 0;
    int best_epoch = -1;        // -1 when selection is off
    double best_metric = -1.0;  // validation unigram F1 of the kept parameters
};

template <typename Param = float>
class Trainer {
  public:
    Trainer(ReferenceModel<Param>& model, const Tokenizer& tokenizer,
            const KnowledgeCorpus& corpus, TrainConfig cfg)
        : model_(model), tokenizer_(tokenizer), corpus_(corpus), cfg_(std::move(cfg)) {
        cfg_.validate();
        schedule_ = cfg_.schedule;
        if (schedule_.total_steps == 0) schedule_.total_steps = 1;
        mixer_ = Mixer{cfg_.beta_span, SpanExtractors{}, &tokenizer_};
        grad_.assign(model_.num_params(), 0.0);
        adam_m_.assign(model_.num_params(), 0.0);
        adam_v_.assign(model_.num_params(), 0.0);
    }

    const TrainConfig& config() const { return cfg_; }
    const LossWeightSchedule& schedule() const { return schedule_; }

    /// Raw accumulated gradient of J from the latest update step, before
    /// clipping. Exposed for gradient verification.
    const std::vector<double>& last_gradient() const { return grad_; }

    /// Term values at the current parameters without touching them; uses the
    /// same per-example random streams as joint_step.
    StepRecord evaluate(const std::vector<TrainExample>& batch, long step, int epoch = 0) {
        return run_step(batch, step, epoch, false);
    }

    /// One optimization step: accumulate gradients of the weighted objective
    /// over the batch, clip to the global-norm ceiling, apply one Adam update.
    StepRecord joint_step(const std::vector<TrainExample>& batch, long step, int epoch = 0) {
        return run_step(batch, step, epoch, true);
    }

    /// Full run over the examples. Epoch order is reshuffled from the seed;
    /// batches are consecutive slices; the last short batch is kept.
    TrainResult train(const std::vector<TrainExample>& examples,
                      const std::vector<TrainExample>* validation = nullptr) {
        if (examples.empty()) throw DataError("train: no examples");
        if (cfg_.lm_enabled() && corpus_.snippets.empty())
            throw DataError("train: the denoising term needs a non-empty corpus");
        const std::size_t n = examples.size();
        const std::size_t bsz = static_cast<std::size_t>(cfg_.batch_size);
        const long batches = static_cast<long>((n + bsz - 1) / bsz);
        schedule_ = cfg_.schedule;
        schedule_.total_steps = static_cast<std::size_t>(cfg_.epochs) *
                                static_cast<std::size_t>(batches);

        TrainResult res;
        res.total_steps = static_cast<long>(schedule_.total_steps);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::vector<Param> best_params;

        long step = 0;
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            shuffle_order(order, epoch);
            for (long b = 0; b < batches; ++b) {
                std::vector<TrainExample> batch;
                const std::size_t lo = static_cast<std::size_t>(b) * bsz;
                const std::size_t hi = std::min(n, lo + bsz);
                batch.reserve(hi - lo);
                for (std::size_t i = lo; i < hi; ++i) batch.push_back(examples[order[i]]);
                res.log.push_back(joint_step(batch, step, epoch));
                ++step;
            }
            if (cfg_.select_best && validation != nullptr && !validation->empty()) {
                const double f1 = validation_f1(*validation);
                if (f1 > res.best_metric) {
                    res.best_metric = f1;
                    res.best_epoch = epoch;
                    best_params = model_.parameters();
                }
            }
        }
        if (res.best_epoch >= 0) model_.parameters() = best_params;
        return res;
    }

    /// Mean unigram F1 of greedy decodes against the references.
    double validation_f1(const std::vector<TrainExample>& validation) const {
        if (validation.empty()) throw DataError("validation set is empty");
        double sum = 0.0;
        for (const auto& ex : validation) {
            const std::vector<int> out = model_.greedy_decode(ex.response.input_ids);
            sum += unigram_f1(tokenizer_.decode(out), ex.reference);
        }
        return sum / static_cast<double>(validation.size());
    }

  private:
    Rng example_rng(int epoch, const std::string& id) const {
        return Rng(mix_seed(cfg_.seed, "epoch" + std::to_string(epoch) + ":" + id));
    }

    void shuffle_order(std::vector<std::size_t>& order, int epoch) const {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(cfg_.seed, "shuffle-epoch" + std::to_string(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }

    static void check_finite(double v, const char* term, long step) {
        if (!std::isfinite(v))
            throw NumericalError("non-finite " + std::string(term) + " at step " +
                                 std::to_string(step));
    }

    StepRecord run_step(const std::vector<TrainExample>& batch, long step, int epoch,
                        bool update) {
        if (batch.empty()) throw DataError("empty batch");
        const LossWeights w = loss_weights(static_cast<std::size_t>(step), schedule_);
        if (update) std::fill(grad_.begin(), grad_.end(), 0.0);
        const double inv_b = 1.0 / static_cast<double>(batch.size());

        double mle_sum = 0.0, mcl_sum = 0.0, lm_sum = 0.0;
        for (const auto& ex : batch) {
            Rng rng = example_rng(epoch, ex.id);
            mle_sum += mle_term(ex, update ? w.alpha1 * inv_b : 0.0);
            if (cfg_.mcl_enabled()) mcl_sum += mcl_term(ex, update ? w.alpha2 * inv_b : 0.0, rng);
            if (cfg_.lm_enabled()) lm_sum += lm_term(update ? w.alpha3 * inv_b : 0.0, rng);
        }

        StepRecord rec;
        rec.step = step;
        rec.alpha1 = w.alpha1;
        rec.alpha2 = w.alpha2;
        rec.alpha3 = w.alpha3;
        rec.mle = mle_sum * inv_b;
        rec.mcl = mcl_sum * inv_b;
        rec.lm = lm_sum * inv_b;
        rec.joint = w.alpha1 * rec.mle + w.alpha2 * rec.mcl + w.alpha3 * rec.lm;
        check_finite(rec.mle, "L_MLE", step);
        check_finite(rec.mcl, "L_MCL", step);
        check_finite(rec.lm, "L_LM", step);
        check_finite(rec.joint, "J", step);

        if (update) {
            double sq = 0.0;
            for (const double g : grad_) sq += g * g;
            rec.grad_norm = std::sqrt(sq);
            check_finite(rec.grad_norm, "gradient norm", step);
            adam_update(clip_scale(rec.grad_norm, cfg_.clip_norm));
        }
        return rec;
    }

    // Likelihood on the response. A non-zero scale also accumulates the
    // scaled gradient.
    double mle_term(const TrainExample& ex, double scale) {
        ModelTape tape;
        LossResult r = mle_loss(model_.forward(ex.response.input_ids, ex.response.output_ids,
                                               tape),
                                cfg_.prob_floor);
        if (scale != 0.0) {
            for (double& g : r.dprob) g *= scale;
            model_.backward(tape, r.dprob, grad_);
        }
        return r.value;
    }

    // Mixed contrast over the example's negative set: one encoder pass on the
    // knowledge-identification input serves every mix, then the accumulated
    // encoder-output gradient flows back once.
    double mcl_term(const TrainExample& ex, double scale, Rng& rng) {
        std::vector<const KnowledgeSnippet*> positives;
        for (const auto& p : ex.positives)
            if (!p.text.empty()) positives.push_back(&p);
        if (positives.empty()) return 0.0;
        const KnowledgeSnippet& z_pos = *positives[rng.uniform_index(positives.size())];

        std::vector<const KnowledgeSnippet*> negs = select_negatives(ex, rng);
        if (negs.empty()) return 0.0;

        EncoderCache enc;
        model_.encode(ex.contrast_input, enc);
        std::vector<double> d_enc;
        if (scale != 0.0) d_enc.assign(enc.output().size(), 0.0);

        double total = 0.0;
        DecoderCache dec;
        for (const KnowledgeSnippet* z_neg : negs) {
            const MixedSequence mixed = mixer_(z_pos, *z_neg, rng);
            const ContrastTarget target = contrast_target(mixed, model_.config().max_output_len);
            const auto& probs = model_.decode_forward(enc, target.ids, dec);
            LossResult r = mixed_contrast_loss(probs, target.signs, cfg_.prob_floor);
            total += r.value;
            if (scale != 0.0) {
                for (double& g : r.dprob) g *= scale;
                model_.backward_decoder(enc, dec, r.dprob, grad_.data(), d_enc.data());
            }
        }
        if (scale != 0.0) model_.backward_encoder(enc, d_enc.data(), grad_.data());
        return total;
    }

    // Denoising on a uniformly drawn corpus snippet.
    double lm_term(double scale, Rng& rng) {
        if (corpus_.snippets.empty()) return 0.0;
        const KnowledgeSnippet& k = corpus_.snippets[rng.uniform_index(corpus_.snippets.size())];
        const std::vector<int> k_ids = tokenizer_.encode(k.text);
        if (k_ids.empty()) return 0.0;
        const std::vector<int> k_hat = corrupt(k_ids, cfg_.corruption, rng);
        const DenoisingExample d = denoising_example(tokenizer_, k_ids, k_hat,
                                                     model_.config().max_input_len,
                                                     model_.config().max_output_len);
        ModelTape tape;
        LossResult r =
            mle_loss(model_.forward(d.input_ids, d.target_ids, tape), cfg_.prob_floor);
        if (scale != 0.0) {
            for (double& g : r.dprob) g *= scale;
            model_.backward(tape, r.dprob, grad_);
        }
        return r.value;
    }

    // The negatives an example trains against, after ablation rewiring.
    // random_negatives draws fresh snippets uniformly from the corpus,
    // skipping any that textually equal a positive.
    std::vector<const KnowledgeSnippet*> select_negatives(const TrainExample& ex, Rng& rng) {
        std::vector<const KnowledgeSnippet*> out;
        const std::size_t want = static_cast<std::size_t>(cfg_.m);
        if (cfg_.random_negatives) {
            if (corpus_.snippets.empty()) return out;
            for (std::size_t i = 0; i < want; ++i) {
                const KnowledgeSnippet* pick = nullptr;
                for (int attempt = 0; attempt < 8 && pick == nullptr; ++attempt) {
                    const auto& cand = corpus_.snippets[rng.uniform_index(corpus_.snippets.size())];
                    bool is_positive = cand.text.empty();
                    for (const auto& p : ex.positives)
                        if (p.text == cand.text) is_positive = true;
                    if (!is_positive) pick = &cand;
                }
                if (pick != nullptr) out.push_back(pick);
            }
            return out;
        }
        for (const auto& item : ex.negatives.items) {
            if (out.size() >= want) break;
            if (item.snippet.text.empty()) continue;
            if (cfg_.disable_model_negatives && item.source != NegativeSource::retrieved)
                continue;
            out.push_back(&item.snippet);
        }
        return out;
    }

    void adam_update(double clip_scale) {
        ++adam_t_;
        const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(adam_t_));
        const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(adam_t_));
        auto& params = model_.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad_[i] * clip_scale;
            adam_m_[i] = cfg_.adam_beta1 * adam_m_[i] + (1.0 - cfg_.adam_beta1) * g;
            adam_v_[i] = cfg_.adam_beta2 * adam_v_[i] + (1.0 - cfg_.adam_beta2) * g * g;
            const double mhat = adam_m_[i] / bc1;
            const double vhat = adam_v_[i] / bc2;
            params[i] = static_cast<Param>(static_cast<double>(params[i]) -
                                           cfg_.learning_rate * mhat /
                                               (std::sqrt(vhat) + cfg_.adam_eps));
        }
    }

    ReferenceModel<Param>& model_;
    const Tokenizer& tokenizer_;
    const KnowledgeCorpus& corpus_;
    TrainConfig cfg_;
    LossWeightSchedule schedule_;
    Mixer mixer_;
    std::vector<double> grad_;
    std::vector<double> adam_m_;
    std::vector<double> adam_v_;
    long adam_t_ = 0;
};

}  // namespace mixcl
