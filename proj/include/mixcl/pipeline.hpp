#pragma once

// End-to-end composition: index -> mine -> train -> decode -> eval, plus the
// ablation matrix. Stages are individually resumable; each reads its inputs
// from disk, writes exactly one artifact, and stamps it with a provenance
// header {tool version, seed, config hash}. Fixed (config, seed) reproduces
// every artifact byte for byte.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mixcl/config.hpp"
#include "mixcl/corpus.hpp"
#include "mixcl/dialogue.hpp"
#include "mixcl/error.hpp"
#include "mixcl/io.hpp"
#include "mixcl/metrics.hpp"
#include "mixcl/model.hpp"
#include "mixcl/negatives.hpp"
#include "mixcl/synth.hpp"
#include "mixcl/tfidf.hpp"
#include "mixcl/tokenizer.hpp"
#include "mixcl/trainer.hpp"

namespace mixcl {

inline constexpr const char* kPredictionsMagic = "MIXCL-PRED v1";
inline constexpr const char* kTrainLogMagic = "MIXCL-LOG v1";
inline constexpr const char* kReportMagic = "MIXCL-REP v1";

enum class Stage { index, mine, train, decode, eval };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::index: return "index";
        case Stage::mine: return "mine";
        case Stage::train: return "train";
        case Stage::decode: return "decode";
        case Stage::eval: return "eval";
    }
    throw ConfigError("unknown stage");
}

inline Stage stage_from_name(const std::string& name) {
    if (name == "index") return Stage::index;
    if (name == "mine") return Stage::mine;
    if (name == "train") return Stage::train;
    if (name == "decode") return Stage::decode;
    if (name == "eval") return Stage::eval;
    throw ConfigError("unknown stage: " + name +
                      " (expected index, mine, train, decode, or eval)");
}

namespace detail {

inline void require_path_config(const std::string& value, const char* key, const char* stage) {
    if (value.empty())
        throw ConfigError(std::string("config key `") + key + "` is required for the " + stage +
                          " stage");
}

inline void require_artifact(const std::string& path, const char* what,
                             const char* produced_by) {
    if (path.empty() || !std::filesystem::exists(path))
        throw DependencyError(std::string(what) + " not found at `" + path + "`; run the " +
                              produced_by + " stage first");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tokenizer assembly
// ---------------------------------------------------------------------------

/// Deterministic vocabulary over the corpus, the dialogues, and the task
/// prompts. The prompts go in so their tokens never degrade to unk.
inline Tokenizer build_tokenizer(const KnowledgeCorpus& corpus,
                                 const std::vector<DialogueExample>& dialogues,
                                 std::size_t max_vocab) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size() + dialogues.size() * 2 + 3);
    texts.push_back(prompt_text(PromptTag::response_generation));
    texts.push_back(prompt_text(PromptTag::knowledge_identification));
    texts.push_back(prompt_text(PromptTag::corpus_denoising));
    for (const auto& s : corpus.snippets) texts.push_back(s.text);
    for (const auto& ex : dialogues) {
        for (const auto& [speaker, text] : ex.context) {
            texts.push_back(speaker);
            texts.push_back(text);
        }
        texts.push_back(ex.response);
    }
    return Tokenizer::build(texts, max_vocab);
}

// ---------------------------------------------------------------------------
// Predictions artifact
// ---------------------------------------------------------------------------

struct Prediction {
    std::string example_id;
    std::string text;
};

inline void write_predictions(const std::string& path, const std::vector<Prediction>& preds,
                              const Provenance& prov) {
    std::ofstream out = open_output(path);
    write_header(out, kPredictionsMagic, prov);
    for (const auto& p : preds) {
        nlohmann::ordered_json rec = {{"example_id", p.example_id}, {"text", p.text}};
        out << rec.dump() << "\n";
    }
    if (!out.flush()) throw DataError("failed writing predictions: " + path);
}

inline std::vector<Prediction> read_predictions(const std::string& path,
                                                Provenance* prov_out = nullptr) {
    std::ifstream in = open_input(path);
    const Provenance prov = read_header(in, kPredictionsMagic, path);
    std::vector<Prediction> preds;
    std::string line;
    std::size_t line_no = 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("example_id") || !rec.contains("text"))
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": malformed prediction record");
        preds.push_back({rec["example_id"].get<std::string>(), rec["text"].get<std::string>()});
    }
    if (prov_out != nullptr) *prov_out = prov;
    return preds;
}

/// Greedy decodes under the response prompt, in input order.
template <typename Param>
std::vector<Prediction> decode_predictions(const ReferenceModel<Param>& model,
                                           const Tokenizer& tokenizer,
                                           const std::vector<DialogueExample>& examples) {
    std::vector<Prediction> preds;
    preds.reserve(examples.size());
    for (const auto& ex : examples) {
        const EncodedExample enc =
            encode_example(ex.context, "", PromptTag::response_generation, tokenizer);
        const std::vector<int> out = model.greedy_decode(enc.input_ids);
        preds.push_back({ex.id, tokenizer.decode(out)});
    }
    return preds;
}

/// Joins predictions with their dialogues. Every example must have exactly
/// one prediction; mismatches are reported by id.
inline std::vector<EvalExample> join_eval_examples(const std::vector<DialogueExample>& dialogues,
                                                   const std::vector<Prediction>& preds) {
    std::map<std::string, const Prediction*> by_id;
    for (const auto& p : preds) {
        if (!by_id.emplace(p.example_id, &p).second)
            throw DataError("duplicate prediction for example " + p.example_id);
    }
    std::vector<EvalExample> out;
    out.reserve(dialogues.size());
    for (const auto& ex : dialogues) {
        auto it = by_id.find(ex.id);
        if (it == by_id.end()) throw DataError("missing prediction for example " + ex.id);
        EvalExample e;
        e.pred = it->second->text;
        e.ref = ex.response;
        if (!ex.positives.empty()) e.knowledge = ex.positives.front().text;
        for (const auto& c : ex.candidates) e.candidates.push_back(c.text);
        e.gold_candidate = ex.gold_candidate;
        out.push_back(std::move(e));
        by_id.erase(it);
    }
    if (!by_id.empty())
        throw DataError("prediction without a matching example: " + by_id.begin()->first);
    return out;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void run_index_stage(const PipelineConfig& cfg) {
    detail::require_path_config(cfg.corpus, "corpus", "index");
    detail::require_path_config(cfg.index, "index", "index");
    if (!std::filesystem::exists(cfg.corpus))
        throw DependencyError("corpus file not found at `" + cfg.corpus +
                              "`; provide one or generate it with the synth command");
    const KnowledgeCorpus corpus = ingest_corpus(cfg.corpus);
    if (corpus.empty()) throw DataError("corpus is empty: " + cfg.corpus);
    TfIdfConfig tfcfg;
    if (!cfg.stopwords.empty()) {
        std::ifstream in = open_input(cfg.stopwords);
        tfcfg.stopwords.clear();
        std::string word;
        while (std::getline(in, word)) {
            if (!word.empty() && word.back() == '\r') word.pop_back();
            if (!word.empty()) tfcfg.stopwords.insert(to_lower(word));
        }
    }
    const TfIdfIndex index = build_index(corpus, tfcfg);
    save_index(index, cfg.index, cfg.provenance());
}

inline void run_mine_stage(const PipelineConfig& cfg) {
    detail::require_path_config(cfg.dialogues, "dialogues", "mine");
    detail::require_path_config(cfg.negatives, "negatives", "mine");
    detail::require_artifact(cfg.index, "retrieval index", "index");
    if (!std::filesystem::exists(cfg.dialogues))
        throw DependencyError("dialogue file not found at `" + cfg.dialogues + "`");

    const TfIdfIndex index = load_index(cfg.index);
    const std::vector<DialogueExample> dialogues = load_dialogues(cfg.dialogues);
    const OverlapEntailmentFilter filter(cfg.entailment_threshold);

    std::vector<NegativeSet> sets;
    if (!cfg.mine_model.empty()) {
        // A checkpoint turns on model-generated negatives (bootstrap refresh).
        detail::require_artifact(cfg.mine_model, "model checkpoint", "train");
        nlohmann::json header;
        const ReferenceModel<float> model = load_checkpoint<float>(cfg.mine_model, nullptr,
                                                                   &header);
        if (!header.contains("vocab"))
            throw DataError(cfg.mine_model + ": checkpoint has no stored vocabulary");
        const Tokenizer tokenizer =
            Tokenizer::from_vocab(header["vocab"].get<std::vector<std::string>>());
        sets = mine_negatives(dialogues, index, &tokenizer, &model, filter, cfg.mine);
    } else {
        sets = mine_negatives(dialogues, index, filter, cfg.mine);
    }
    write_negatives(cfg.negatives, sets, cfg.provenance());
}

inline void run_train_stage(const PipelineConfig& cfg) {
    detail::require_path_config(cfg.corpus, "corpus", "train");
    detail::require_path_config(cfg.dialogues, "dialogues", "train");
    detail::require_path_config(cfg.checkpoint, "checkpoint", "train");
    detail::require_artifact(cfg.negatives, "negatives sidecar", "mine");
    if (!std::filesystem::exists(cfg.corpus))
        throw DependencyError("corpus file not found at `" + cfg.corpus + "`");
    if (!std::filesystem::exists(cfg.dialogues))
        throw DependencyError("dialogue file not found at `" + cfg.dialogues + "`");

    const KnowledgeCorpus corpus = ingest_corpus(cfg.corpus);
    const std::vector<DialogueExample> dialogues = load_dialogues(cfg.dialogues);
    const std::map<std::string, NegativeSet> negatives =
        negatives_by_context(read_negatives(cfg.negatives));

    std::vector<DialogueExample> validation;
    if (!cfg.validation_dialogues.empty()) {
        if (!std::filesystem::exists(cfg.validation_dialogues))
            throw DependencyError("validation dialogue file not found at `" +
                                  cfg.validation_dialogues + "`");
        validation = load_dialogues(cfg.validation_dialogues);
    }

    const Tokenizer tokenizer = build_tokenizer(corpus, dialogues, cfg.max_vocab);
    ModelConfig mc = cfg.model;
    mc.vocab_size = tokenizer.vocab_size();
    ReferenceModel<float> model(mc);
    model.init_params(cfg.seed);

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    Trainer<float> trainer(model, tokenizer, corpus, tc);
    const std::vector<TrainExample> examples =
        prepare_train_examples(dialogues, tokenizer, negatives);
    std::vector<TrainExample> val_examples;
    if (!validation.empty()) val_examples = prepare_train_examples(validation, tokenizer);
    const TrainResult result =
        trainer.train(examples, val_examples.empty() ? nullptr : &val_examples);

    if (!cfg.train_log.empty()) {
        std::ofstream log = open_output(cfg.train_log);
        write_header(log, kTrainLogMagic, cfg.provenance());
        write_train_log(log, result.log);
        if (!log.flush()) throw DataError("failed writing train log: " + cfg.train_log);
    }

    nlohmann::json extra = optimizer_metadata(tc);
    extra["vocab"] = tokenizer.content_tokens();
    save_checkpoint(model, cfg.checkpoint, cfg.provenance(), extra);
}

inline void run_decode_stage(const PipelineConfig& cfg) {
    detail::require_path_config(cfg.dialogues, "dialogues", "decode");
    detail::require_path_config(cfg.predictions, "predictions", "decode");
    detail::require_artifact(cfg.checkpoint, "model checkpoint", "train");
    if (!std::filesystem::exists(cfg.dialogues))
        throw DependencyError("dialogue file not found at `" + cfg.dialogues + "`");

    nlohmann::json header;
    const ReferenceModel<float> model = load_checkpoint<float>(cfg.checkpoint, nullptr, &header);
    if (!header.contains("vocab"))
        throw DataError(cfg.checkpoint + ": checkpoint has no stored vocabulary");
    const Tokenizer tokenizer =
        Tokenizer::from_vocab(header["vocab"].get<std::vector<std::string>>());
    const std::vector<DialogueExample> dialogues = load_dialogues(cfg.dialogues);
    write_predictions(cfg.predictions, decode_predictions(model, tokenizer, dialogues),
                      cfg.provenance());
}

inline MetricsReport run_eval_stage(const PipelineConfig& cfg) {
    detail::require_path_config(cfg.dialogues, "dialogues", "eval");
    detail::require_path_config(cfg.report, "report", "eval");
    detail::require_artifact(cfg.predictions, "predictions file", "decode");
    if (!std::filesystem::exists(cfg.dialogues))
        throw DependencyError("dialogue file not found at `" + cfg.dialogues + "`");

    const std::vector<DialogueExample> dialogues = load_dialogues(cfg.dialogues);
    const std::vector<Prediction> preds = read_predictions(cfg.predictions);
    const MetricsReport report = evaluate(join_eval_examples(dialogues, preds));

    std::ofstream out = open_output(cfg.report);
    write_header(out, kReportMagic, cfg.provenance());
    out << format_report(report) << "\n" << structured_report(report).dump() << "\n";
    if (!out.flush()) throw DataError("failed writing report: " + cfg.report);
    return report;
}

/// Runs the requested stages in canonical order (duplicates collapse).
inline void run_pipeline(const PipelineConfig& cfg, std::vector<Stage> stages) {
    if (stages.empty()) throw ConfigError("run_pipeline: no stages requested");
    std::sort(stages.begin(), stages.end());
    stages.erase(std::unique(stages.begin(), stages.end()), stages.end());
    for (const Stage s : stages) {
        switch (s) {
            case Stage::index: run_index_stage(cfg); break;
            case Stage::mine: run_mine_stage(cfg); break;
            case Stage::train: run_train_stage(cfg); break;
            case Stage::decode: run_decode_stage(cfg); break;
            case Stage::eval: run_eval_stage(cfg); break;
        }
    }
}

// ---------------------------------------------------------------------------
// Ablation matrix (in-memory, shared data per seed)
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& known_ablation_variants() {
    static const std::vector<std::string> v = {"full",           "wo_mcl", "wo_lm",
                                               "mle_only",       "random_negatives",
                                               "retrieved_only"};
    return v;
}

/// Returns the train config with the named variant's flags applied.
inline TrainConfig apply_ablation_variant(TrainConfig cfg, const std::string& variant) {
    if (variant == "full") return cfg;
    if (variant == "wo_mcl") {
        cfg.disable_mcl = true;
        return cfg;
    }
    if (variant == "wo_lm") {
        cfg.disable_lm = true;
        return cfg;
    }
    if (variant == "mle_only") {
        cfg.mle_only = true;
        return cfg;
    }
    if (variant == "random_negatives") {
        cfg.random_negatives = true;
        return cfg;
    }
    if (variant == "retrieved_only") {
        cfg.disable_model_negatives = true;
        return cfg;
    }
    throw ConfigError("unknown ablation variant: " + variant);
}

struct AblationCell {
    bool failed = false;
    std::string error;
    MetricsReport report;
};

struct AblationRun {
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, AblationCell>> cells;  // variant name -> result

    const AblationCell* cell(const std::string& variant) const {
        for (const auto& [name, c] : cells)
            if (name == variant) return &c;
        return nullptr;
    }
};

struct AblationMatrix {
    std::vector<std::string> variants;  // "full" first
    std::vector<AblationRun> runs;
    std::string table() const;
};

/// Trains and evaluates one variant on prepared data. Exposed so tests can
/// drive single runs directly.
inline AblationCell run_ablation_variant(const PipelineConfig& cfg, const std::string& variant,
                                         std::uint64_t seed, const KnowledgeCorpus& corpus,
                                         const Tokenizer& tokenizer,
                                         const std::vector<TrainExample>& train_examples,
                                         const std::vector<DialogueExample>& heldout) {
    AblationCell cell;
    try {
        TrainConfig tc = apply_ablation_variant(cfg.train, variant);
        tc.seed = seed;
        ModelConfig mc = cfg.model;
        mc.vocab_size = tokenizer.vocab_size();
        ReferenceModel<float> model(mc);
        model.init_params(seed);
        Trainer<float> trainer(model, tokenizer, corpus, tc);
        trainer.train(train_examples);
        const std::vector<Prediction> preds = decode_predictions(model, tokenizer, heldout);
        cell.report = evaluate(join_eval_examples(heldout, preds));
    } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
    }
    return cell;
}

/// Table 3 style comparison: every requested variant trained against the
/// full objective under shared per-run seeds. Heldout split: the last
/// heldout_fraction of the dialogue file, by dialogue.
inline AblationMatrix run_ablation_matrix(const PipelineConfig& cfg,
                                          const std::vector<std::string>& variants) {
    if (variants.empty()) throw ConfigError("run_ablation_matrix: no variants requested");
    detail::require_path_config(cfg.corpus, "corpus", "ablate");
    detail::require_path_config(cfg.dialogues, "dialogues", "ablate");
    if (!std::filesystem::exists(cfg.corpus))
        throw DependencyError("corpus file not found at `" + cfg.corpus + "`");
    if (!std::filesystem::exists(cfg.dialogues))
        throw DependencyError("dialogue file not found at `" + cfg.dialogues + "`");
    for (const auto& v : variants) apply_ablation_variant(cfg.train, v);  // validate names

    const KnowledgeCorpus corpus = ingest_corpus(cfg.corpus);
    const std::vector<DialogueExample> all = load_dialogues(cfg.dialogues);
    if (all.size() < 2) throw DataError("ablation needs at least two dialogue examples");
    const TfIdfIndex index = build_index(corpus);
    const Tokenizer tokenizer = build_tokenizer(corpus, all, cfg.max_vocab);

    // Split by example position: the tail is held out.
    std::size_t heldout_count =
        static_cast<std::size_t>(cfg.heldout_fraction * static_cast<double>(all.size()));
    heldout_count = std::max<std::size_t>(1, std::min(heldout_count, all.size() - 1));
    const std::vector<DialogueExample> train_dialogues(all.begin(),
                                                       all.end() - static_cast<std::ptrdiff_t>(
                                                                       heldout_count));
    const std::vector<DialogueExample> heldout(all.end() - static_cast<std::ptrdiff_t>(
                                                               heldout_count),
                                               all.end());

    AblationMatrix matrix;
    matrix.variants.push_back("full");
    for (const auto& v : variants)
        if (v != "full") matrix.variants.push_back(v);

    const OverlapEntailmentFilter filter(cfg.entailment_threshold);
    for (int r = 0; r < cfg.ablation_seeds; ++r) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
        MineConfig mine_cfg = cfg.mine;
        mine_cfg.seed = seed;
        const std::map<std::string, NegativeSet> negatives =
            negatives_by_context(mine_negatives(train_dialogues, index, filter, mine_cfg));
        const std::vector<TrainExample> train_examples =
            prepare_train_examples(train_dialogues, tokenizer, negatives);

        AblationRun run;
        run.seed = seed;
        for (const auto& variant : matrix.variants)
            run.cells.emplace_back(variant, run_ablation_variant(cfg, variant, seed, corpus,
                                                                 tokenizer, train_examples,
                                                                 heldout));
        matrix.runs.push_back(std::move(run));
    }
    return matrix;
}

inline std::string AblationMatrix::table() const {
    std::ostringstream out;
    char buf[160];
    out << "variant            seed  F1     B4     KF1    EF1    dF1    dB4    dKF1\n";
    for (const auto& run : runs) {
        const AblationCell* base = run.cell("full");
        for (const auto& [name, cell] : run.cells) {
            if (cell.failed) {
                std::snprintf(buf, sizeof(buf), "%-18s %4llu  FAILED: %s\n", name.c_str(),
                              static_cast<unsigned long long>(run.seed), cell.error.c_str());
                out << buf;
                continue;
            }
            const MetricsReport& m = cell.report;
            if (base != nullptr && !base->failed) {
                const MetricsReport& b = base->report;
                std::snprintf(buf, sizeof(buf),
                              "%-18s %4llu  %5.1f  %5.1f  %5.1f  %5.1f  %+5.1f  %+5.1f  %+5.1f\n",
                              name.c_str(), static_cast<unsigned long long>(run.seed),
                              m.f1 * 100.0, m.bleu4 * 100.0, m.knowledge_f1 * 100.0,
                              m.entity_f1 * 100.0, (m.f1 - b.f1) * 100.0,
                              (m.bleu4 - b.bleu4) * 100.0,
                              (m.knowledge_f1 - b.knowledge_f1) * 100.0);
            } else {
                std::snprintf(buf, sizeof(buf),
                              "%-18s %4llu  %5.1f  %5.1f  %5.1f  %5.1f  (no base)\n",
                              name.c_str(), static_cast<unsigned long long>(run.seed),
                              m.f1 * 100.0, m.bleu4 * 100.0, m.knowledge_f1 * 100.0,
                              m.entity_f1 * 100.0);
            }
            out << buf;
        }
    }
    return out.str();
}

}  // namespace mixcl
