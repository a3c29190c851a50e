// mixcl: command line front end for the mixed-contrast training pipeline.
//
// Subcommands map one-to-one onto pipeline stages plus a few inspection
// helpers. Every subcommand accepts --config with a flat `key = value` file;
// explicit flags override file values, and the MIXCL_SEED environment
// variable overrides the file seed (but not an explicit --seed flag).
//
// Exit codes: 0 success, 2 configuration or data error, 3 missing upstream
// artifact, 4 numerical failure during training.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixcl/config.hpp"
#include "mixcl/corpus.hpp"
#include "mixcl/dialogue.hpp"
#include "mixcl/error.hpp"
#include "mixcl/io.hpp"
#include "mixcl/metrics.hpp"
#include "mixcl/mixup.hpp"
#include "mixcl/pipeline.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/spans.hpp"
#include "mixcl/synth.hpp"
#include "mixcl/text.hpp"
#include "mixcl/version.hpp"

namespace {

std::uint64_t parse_seed_text(const std::string& text, const std::string& origin) {
    std::size_t pos = 0;
    unsigned long long value = 0;
    try {
        if (text.empty() || text[0] == '-') throw std::invalid_argument("sign");
        value = std::stoull(text, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != text.size())
        throw mixcl::ConfigError(origin + " must be a non-negative integer, got `" + text + "`");
    return value;
}

/// Loads the config file (or defaults) and applies the MIXCL_SEED override.
mixcl::PipelineConfig resolve_config(const std::string& config_path) {
    mixcl::PipelineConfig cfg;
    if (!config_path.empty()) cfg = mixcl::PipelineConfig::load(config_path);
    if (const char* env = std::getenv("MIXCL_SEED"))
        cfg.override_seed(parse_seed_text(env, "MIXCL_SEED"));
    return cfg;
}

mixcl::MixStrategy parse_strategy(const std::string& name, double beta_span, mixcl::Rng& rng) {
    if (name == "entity") return mixcl::MixStrategy::entity;
    if (name == "constituent") return mixcl::MixStrategy::constituent;
    if (name == "auto") return mixcl::choose_strategy(beta_span, rng);
    throw mixcl::ConfigError("--strategy must be entity, constituent, or auto, got `" + name +
                             "`");
}

/// Mixed sequence rendered with every negative-sign run in brackets.
std::string render_mix(const mixcl::SurfaceMix& m) {
    std::ostringstream out;
    bool in_neg = false;
    for (std::size_t i = 0; i < m.tokens.size(); ++i) {
        if (i > 0) out << ' ';
        if (m.signs[i] == 0 && !in_neg) {
            out << "[ ";
            in_neg = true;
        } else if (m.signs[i] == 1 && in_neg) {
            out << "] ";
            in_neg = false;
        }
        out << m.tokens[i];
    }
    if (in_neg) out << " ]";
    return out.str();
}

void print_spans(const char* kind, const std::vector<mixcl::Span>& spans) {
    for (const auto& s : spans)
        std::cout << kind << '\t' << s.label << "\t[" << s.start << ',' << s.end << ")\t"
                  << s.text << '\n';
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        while (!item.empty() && item.front() == ' ') item.erase(item.begin());
        while (!item.empty() && item.back() == ' ') item.pop_back();
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"span-level mixed contrastive learning for knowledge-grounded dialogue"};
    app.set_version_flag("--version", MIXCL_VERSION);
    app.require_subcommand(1);

    // ---- index ----------------------------------------------------------
    struct {
        std::string config, corpus, out, stopwords;
    } ix;
    auto* index_cmd = app.add_subcommand("index", "build the sparse retrieval index");
    index_cmd->add_option("--config", ix.config, "pipeline config file");
    index_cmd->add_option("--corpus", ix.corpus, "knowledge corpus (jsonl)");
    index_cmd->add_option("--out", ix.out, "index output path");
    index_cmd->add_option("--stopwords", ix.stopwords, "stopword list, one word per line");
    index_cmd->callback([&] {
        mixcl::PipelineConfig cfg = resolve_config(ix.config);
        if (!ix.corpus.empty()) cfg.corpus = ix.corpus;
        if (!ix.out.empty()) cfg.index = ix.out;
        if (!ix.stopwords.empty()) cfg.stopwords = ix.stopwords;
        mixcl::run_index_stage(cfg);
        std::cout << "wrote " << cfg.index << '\n';
    });

    // ---- mine -----------------------------------------------------------
    struct {
        std::string config, dialogues, index, out, model;
        double beta_neg = 0.5;
        int m = 8;
        std::uint64_t seed = 13;
    } mn;
    auto* mine_cmd = app.add_subcommand("mine", "mine negative knowledge per dialogue context");
    mine_cmd->add_option("--config", mn.config, "pipeline config file");
    mine_cmd->add_option("--dialogues", mn.dialogues, "dialogue examples (jsonl)");
    mine_cmd->add_option("--index", mn.index, "retrieval index path");
    mine_cmd->add_option("--out", mn.out, "negatives sidecar output path");
    mine_cmd->add_option("--model", mn.model, "checkpoint for model-generated negatives");
    mine_cmd->add_option("--beta-neg", mn.beta_neg, "retrieved-vs-generated mixture rate");
    mine_cmd->add_option("--m", mn.m, "negatives sampled per context");
    mine_cmd->add_option("--seed", mn.seed, "sampling seed");
    mine_cmd->callback([&] {
        mixcl::PipelineConfig cfg = resolve_config(mn.config);
        if (!mn.dialogues.empty()) cfg.dialogues = mn.dialogues;
        if (!mn.index.empty()) cfg.index = mn.index;
        if (!mn.out.empty()) cfg.negatives = mn.out;
        if (!mn.model.empty()) cfg.mine_model = mn.model;
        if (mine_cmd->count("--beta-neg")) {
            cfg.mine.beta_neg = mn.beta_neg;
            cfg.train.beta_neg = mn.beta_neg;
        }
        if (mine_cmd->count("--m")) {
            cfg.mine.m = mn.m;
            cfg.train.m = mn.m;
        }
        if (mine_cmd->count("--seed")) cfg.override_seed(mn.seed);
        mixcl::run_mine_stage(cfg);
        std::cout << "wrote " << cfg.negatives << '\n';
    });

    // ---- train ----------------------------------------------------------
    struct {
        std::string config, dialogues, corpus, negatives, out, validation, log;
        std::uint64_t seed = 13;
    } tr;
    auto* train_cmd = app.add_subcommand("train", "train the generator on the joint objective");
    train_cmd->add_option("--config", tr.config, "pipeline config file");
    train_cmd->add_option("--dialogues", tr.dialogues, "training dialogues (jsonl)");
    train_cmd->add_option("--corpus", tr.corpus, "knowledge corpus (jsonl)");
    train_cmd->add_option("--negatives", tr.negatives, "mined negatives sidecar");
    train_cmd->add_option("--out", tr.out, "checkpoint output path");
    train_cmd->add_option("--validation", tr.validation, "held-out dialogues for selection");
    train_cmd->add_option("--log", tr.log, "training log output path");
    train_cmd->add_option("--seed", tr.seed, "training seed");
    train_cmd->callback([&] {
        mixcl::PipelineConfig cfg = resolve_config(tr.config);
        if (!tr.dialogues.empty()) cfg.dialogues = tr.dialogues;
        if (!tr.corpus.empty()) cfg.corpus = tr.corpus;
        if (!tr.negatives.empty()) cfg.negatives = tr.negatives;
        if (!tr.out.empty()) cfg.checkpoint = tr.out;
        if (!tr.validation.empty()) cfg.validation_dialogues = tr.validation;
        if (!tr.log.empty()) cfg.train_log = tr.log;
        if (train_cmd->count("--seed")) cfg.override_seed(tr.seed);
        mixcl::run_train_stage(cfg);
        std::cout << "wrote " << cfg.checkpoint << '\n';
    });

    // ---- decode ---------------------------------------------------------
    struct {
        std::string config, checkpoint, dialogues, out;
    } dc;
    auto* decode_cmd = app.add_subcommand("decode", "greedy-decode responses for a dialogue file");
    decode_cmd->add_option("--config", dc.config, "pipeline config file");
    decode_cmd->add_option("--checkpoint", dc.checkpoint, "trained checkpoint");
    decode_cmd->add_option("--dialogues", dc.dialogues, "dialogue examples (jsonl)");
    decode_cmd->add_option("--out", dc.out, "predictions output path");
    decode_cmd->callback([&] {
        mixcl::PipelineConfig cfg = resolve_config(dc.config);
        if (!dc.checkpoint.empty()) cfg.checkpoint = dc.checkpoint;
        if (!dc.dialogues.empty()) cfg.dialogues = dc.dialogues;
        if (!dc.out.empty()) cfg.predictions = dc.out;
        mixcl::run_decode_stage(cfg);
        std::cout << "wrote " << cfg.predictions << '\n';
    });

    // ---- eval -----------------------------------------------------------
    struct {
        std::string config, pred, dialogues, report;
    } ev;
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against references");
    eval_cmd->add_option("--config", ev.config, "pipeline config file");
    eval_cmd->add_option("--pred", ev.pred, "predictions file");
    eval_cmd->add_option("--dialogues", ev.dialogues, "dialogue examples (jsonl)");
    eval_cmd->add_option("--report", ev.report, "report output path");
    eval_cmd->callback([&] {
        mixcl::PipelineConfig cfg = resolve_config(ev.config);
        if (!ev.pred.empty()) cfg.predictions = ev.pred;
        if (!ev.dialogues.empty()) cfg.dialogues = ev.dialogues;
        if (!ev.report.empty()) cfg.report = ev.report;
        const mixcl::MetricsReport report = mixcl::run_eval_stage(cfg);
        std::cout << mixcl::format_report(report) << '\n';
    });

    // ---- label-report ---------------------------------------------------
    struct {
        std::string labels, out;
    } lr;
    auto* label_cmd = app.add_subcommand("label-report", "summarize hallucination labels");
    label_cmd->add_option("--labels", lr.labels, "jsonl label file")->required();
    label_cmd->add_option("--out", lr.out, "also write the table to this path");
    label_cmd->callback([&] {
        const auto labels = mixcl::load_labels(lr.labels);
        const mixcl::TaxonomyReport rep = mixcl::taxonomy_report(labels);
        std::cout << rep.table();
        if (!lr.out.empty()) {
            std::ofstream out = mixcl::open_output(lr.out);
            out << rep.table();
            if (!out.flush()) throw mixcl::DataError("failed writing " + lr.out);
        }
    });

    // ---- preview-mix ----------------------------------------------------
    struct {
        std::string pos, neg, strategy = "auto";
        double beta_span = 0.5;
        std::uint64_t seed = 13;
    } pm;
    auto* preview_cmd = app.add_subcommand("preview-mix", "show one span substitution");
    preview_cmd->add_option("--pos", pm.pos, "positive sentence")->required();
    preview_cmd->add_option("--neg", pm.neg, "negative sentence")->required();
    preview_cmd->add_option("--strategy", pm.strategy, "entity, constituent, or auto");
    preview_cmd->add_option("--beta-span", pm.beta_span, "entity rate for auto strategy");
    preview_cmd->add_option("--seed", pm.seed, "span sampling seed");
    preview_cmd->callback([&] {
        std::uint64_t seed = pm.seed;
        if (const char* env = std::getenv("MIXCL_SEED"); env && !preview_cmd->count("--seed"))
            seed = parse_seed_text(env, "MIXCL_SEED");
        mixcl::Rng rng(mixcl::mix_seed(seed, "preview-mix"));
        const mixcl::MixStrategy strategy = parse_strategy(pm.strategy, pm.beta_span, rng);
        const mixcl::SurfaceMix m = mixcl::surface_mix_with_fallback(
            mixcl::word_tokenize(pm.pos), mixcl::word_tokenize(pm.neg), strategy, rng);
        const bool pure_negative =
            std::all_of(m.signs.begin(), m.signs.end(), [](int s) { return s == 0; });
        std::cout << "strategy: " << mixcl::mix_strategy_name(m.strategy) << '\n';
        std::cout << "mixed: " << render_mix(m) << '\n';
        std::cout << "signs:";
        for (const int s : m.signs) std::cout << ' ' << s;
        std::cout << '\n';
        if (pure_negative)
            std::cout << "replaced: (no span matched; whole negative used)\n";
        else
            std::cout << "replaced: `" << m.positive_span.text << "` -> `"
                      << m.negative_span.text << "`\n";
    });

    // ---- spans ----------------------------------------------------------
    struct {
        std::string text, kind = "both";
    } sp;
    auto* spans_cmd = app.add_subcommand("spans", "list extracted spans for a sentence");
    spans_cmd->add_option("--text", sp.text, "input sentence")->required();
    spans_cmd->add_option("--kind", sp.kind, "entity, constituent, or both");
    spans_cmd->callback([&] {
        if (sp.kind != "entity" && sp.kind != "constituent" && sp.kind != "both")
            throw mixcl::ConfigError("--kind must be entity, constituent, or both, got `" +
                                     sp.kind + "`");
        const std::vector<std::string> tokens = mixcl::word_tokenize(sp.text);
        const mixcl::SpanExtractors ex;
        if (sp.kind != "constituent") print_spans("entity", ex.entity->extract(tokens));
        if (sp.kind != "entity") print_spans("constituent", ex.constituent->extract(tokens));
    });

    // ---- synth ----------------------------------------------------------
    struct {
        std::string config, out_corpus, out_dialogues;
        int entities = 50;
        int dialogues = 500;
        double two_turn_rate = 0.3;
        std::uint64_t seed = 13;
    } sy;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus and dialogues");
    synth_cmd->add_option("--config", sy.config, "pipeline config file");
    synth_cmd->add_option("--out-corpus", sy.out_corpus, "corpus output path");
    synth_cmd->add_option("--out-dialogues", sy.out_dialogues, "dialogues output path");
    synth_cmd->add_option("--entities", sy.entities, "number of synthetic people");
    synth_cmd->add_option("--dialogues", sy.dialogues, "number of dialogue examples");
    synth_cmd->add_option("--two-turn-rate", sy.two_turn_rate, "share with a lead-in turn");
    synth_cmd->add_option("--seed", sy.seed, "generation seed");
    synth_cmd->callback([&] {
        mixcl::PipelineConfig cfg = resolve_config(sy.config);
        if (!sy.out_corpus.empty()) cfg.corpus = sy.out_corpus;
        if (!sy.out_dialogues.empty()) cfg.dialogues = sy.out_dialogues;
        if (synth_cmd->count("--entities")) cfg.synth.entities = sy.entities;
        if (synth_cmd->count("--dialogues")) cfg.synth.dialogues = sy.dialogues;
        if (synth_cmd->count("--two-turn-rate")) cfg.synth.two_turn_rate = sy.two_turn_rate;
        if (synth_cmd->count("--seed")) cfg.override_seed(sy.seed);
        if (cfg.corpus.empty() || cfg.dialogues.empty())
            throw mixcl::ConfigError("synth needs --out-corpus and --out-dialogues (or the "
                                     "corpus/dialogues config keys)");
        const mixcl::SynthDataset data = mixcl::make_synthetic_dataset(cfg.synth);
        mixcl::write_corpus_file(cfg.corpus, data.corpus);
        mixcl::write_dialogues_file(cfg.dialogues, data.dialogue_lines);
        std::cout << "wrote " << cfg.corpus << " (" << data.corpus.size() << " snippets)\n";
        std::cout << "wrote " << cfg.dialogues << " (" << data.dialogue_lines.size()
                  << " dialogues)\n";
    });

    // ---- ablate ---------------------------------------------------------
    struct {
        std::string config, corpus, dialogues, out;
        std::string variants = "wo_mcl,wo_lm,mle_only";
        int seeds = 0;
        std::uint64_t seed = 13;
    } ab;
    auto* ablate_cmd = app.add_subcommand("ablate", "train ablation variants and report deltas");
    ablate_cmd->add_option("--config", ab.config, "pipeline config file");
    ablate_cmd->add_option("--corpus", ab.corpus, "knowledge corpus (jsonl)");
    ablate_cmd->add_option("--dialogues", ab.dialogues, "dialogue examples (jsonl)");
    ablate_cmd->add_option("--variants", ab.variants, "comma-separated variant names");
    ablate_cmd->add_option("--seeds", ab.seeds, "number of seeds to run");
    ablate_cmd->add_option("--seed", ab.seed, "base seed");
    ablate_cmd->add_option("--out", ab.out, "also write the table to this path");
    ablate_cmd->callback([&] {
        mixcl::PipelineConfig cfg = resolve_config(ab.config);
        if (!ab.corpus.empty()) cfg.corpus = ab.corpus;
        if (!ab.dialogues.empty()) cfg.dialogues = ab.dialogues;
        if (ablate_cmd->count("--seeds")) cfg.ablation_seeds = ab.seeds;
        if (ablate_cmd->count("--seed")) cfg.override_seed(ab.seed);
        const mixcl::AblationMatrix matrix =
            mixcl::run_ablation_matrix(cfg, split_csv(ab.variants));
        std::cout << matrix.table();
        if (!ab.out.empty()) {
            std::ofstream out = mixcl::open_output(ab.out);
            mixcl::write_header(out, "MIXCL-TAB v1", cfg.provenance());
            out << matrix.table();
            if (!out.flush()) throw mixcl::DataError("failed writing " + ab.out);
        }
    });

    // ---- validate-data --------------------------------------------------
    struct {
        std::string config, corpus, dialogues, labels;
    } vd;
    auto* validate_cmd = app.add_subcommand("validate-data", "parse data files and print stats");
    validate_cmd->add_option("--config", vd.config, "pipeline config file");
    validate_cmd->add_option("--corpus", vd.corpus, "knowledge corpus (jsonl)");
    validate_cmd->add_option("--dialogues", vd.dialogues, "dialogue examples (jsonl)");
    validate_cmd->add_option("--labels", vd.labels, "hallucination label file (jsonl)");
    validate_cmd->callback([&] {
        mixcl::PipelineConfig cfg = resolve_config(vd.config);
        if (!vd.corpus.empty()) cfg.corpus = vd.corpus;
        if (!vd.dialogues.empty()) cfg.dialogues = vd.dialogues;
        bool checked = false;
        if (!cfg.corpus.empty()) {
            const mixcl::KnowledgeCorpus corpus = mixcl::ingest_corpus(cfg.corpus);
            std::size_t tokens = 0;
            std::set<std::string> titles;
            for (const auto& s : corpus.snippets) {
                tokens += mixcl::word_tokenize(s.text).size();
                titles.insert(s.title);
            }
            std::cout << "corpus ok: " << corpus.size() << " snippets, " << titles.size()
                      << " titles, " << tokens << " tokens\n";
            checked = true;
        }
        if (!cfg.dialogues.empty()) {
            const auto dialogues = mixcl::load_dialogues(cfg.dialogues);
            std::size_t multi_turn = 0, with_gold = 0;
            std::set<std::string> topics;
            for (const auto& d : dialogues) {
                if (d.context.size() > 1) ++multi_turn;
                if (d.gold_candidate.has_value()) ++with_gold;
                topics.insert(d.topic);
            }
            std::cout << "dialogues ok: " << dialogues.size() << " examples, " << topics.size()
                      << " topics, " << multi_turn << " multi-turn, " << with_gold
                      << " with gold candidates\n";
            checked = true;
        }
        if (!vd.labels.empty()) {
            const auto labels = mixcl::load_labels(vd.labels);
            std::set<std::string> cats;
            for (const auto& l : labels) cats.insert(mixcl::category_name(l.category));
            std::cout << "labels ok: " << labels.size() << " labels, " << cats.size()
                      << " categories\n";
            checked = true;
        }
        if (!checked)
            throw mixcl::ConfigError("validate-data needs at least one of --corpus, "
                                     "--dialogues, --labels");
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const mixcl::DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << '\n';
        return 3;
    } catch (const mixcl::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 4;
    } catch (const mixcl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const mixcl::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
