// Data plumbing and stage composition: dialogue parsing, prompt encoding,
// the synthetic dataset, artifact round trips, stage dependency errors, a
// miniature end-to-end run (index -> mine -> train -> decode -> eval) with
// byte-level determinism checks, and the ablation matrix.

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "mixcl/pipeline.hpp"

using namespace mixcl;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("mixcl_pipe_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int n = 0;
        return n;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

std::vector<DialogueExample> parse_text(const std::string& text,
                                        DialogueLoadStats* stats = nullptr) {
    std::istringstream in(text);
    return parse_dialogues(in, "test", stats);
}

// One dialogue, two answered turns, two context-only turns.
const char* kTwoExampleDialogue =
    R"({"topic":"t","turns":[)"
    R"({"speaker":"A","text":"hi"},)"
    R"({"speaker":"B","text":"hello","response":"first reply","positives":["p0"]},)"
    R"({"text":"more"},)"
    R"({"text":"question","response":"second reply","positives":["p0"],)"
    R"("candidates":["p0","x"],"gold_candidate":0}]})";

}  // namespace

// ---------------------------------------------------------------------------
// Dialogue parsing
// ---------------------------------------------------------------------------

TEST_CASE("dialogue parser accumulates context and assigns stable ids") {
    DialogueLoadStats stats;
    const auto examples = parse_text(std::string(kTwoExampleDialogue) + "\n", &stats);
    REQUIRE(examples.size() == 2);

    CHECK(examples[0].id == "d0_t1");
    CHECK(examples[0].topic == "t");
    REQUIRE(examples[0].context.size() == 2);
    CHECK(examples[0].context[0] == std::pair<std::string, std::string>("A", "hi"));
    CHECK(examples[0].context[1] == std::pair<std::string, std::string>("B", "hello"));
    CHECK(examples[0].response == "first reply");
    REQUIRE(examples[0].positives.size() == 1);
    CHECK(examples[0].positives[0].text == "p0");
    CHECK(examples[0].positives[0].id == "d0_t1_pos0");
    CHECK(examples[0].candidates.empty());
    CHECK_FALSE(examples[0].gold_candidate.has_value());

    CHECK(examples[1].id == "d0_t3");
    REQUIRE(examples[1].context.size() == 4);
    // Turns without an explicit speaker alternate U1/U2 by position.
    CHECK(examples[1].context[2].first == "U1");
    CHECK(examples[1].context[3].first == "U2");
    REQUIRE(examples[1].candidates.size() == 2);
    CHECK(examples[1].candidates[0].id == "d0_t3_cand0");
    REQUIRE(examples[1].gold_candidate.has_value());
    CHECK(*examples[1].gold_candidate == 0);

    CHECK(stats.dialogues == 1);
    CHECK(stats.examples == 2);
    CHECK(stats.skipped_turns == 2);
}

TEST_CASE("dialogue parser tolerates CRLF and blank lines, numbers dialogues") {
    const std::string two =
        std::string(kTwoExampleDialogue) + "\r\n\n   \n" +
        R"({"turns":[{"text":"q","response":"r"}]})" + "\n";
    DialogueLoadStats stats;
    const auto examples = parse_text(two, &stats);
    REQUIRE(examples.size() == 3);
    CHECK(examples[2].id == "d1_t0");
    CHECK(examples[2].topic.empty());
    CHECK(examples[2].context.size() == 1);
    CHECK(examples[2].context[0].first == "U1");
    CHECK(stats.dialogues == 2);
}

TEST_CASE("dialogue parser reports malformed records with line numbers") {
    CHECK_THROWS_MATCHES(parse_text("{oops\n"), DataError,
                         MessageMatches(ContainsSubstring("test:1") &&
                                        ContainsSubstring("malformed dialogue record")));
    CHECK_THROWS_MATCHES(parse_text("[1,2]\n"), DataError,
                         MessageMatches(ContainsSubstring("malformed dialogue record")));
    CHECK_THROWS_MATCHES(parse_text(R"({"turns":[{"speaker":"A"}]})"), DataError,
                         MessageMatches(ContainsSubstring("turn 0 missing `text`")));
    const std::string second_line = "\n" R"({"turns":[{"text":"q","response":""}]})";
    CHECK_THROWS_MATCHES(parse_text(std::string(kTwoExampleDialogue) + second_line), DataError,
                         MessageMatches(ContainsSubstring("test:2") &&
                                        ContainsSubstring("empty response")));
}

TEST_CASE("dialogue parser validates gold candidates") {
    CHECK_THROWS_MATCHES(
        parse_text(R"({"turns":[{"text":"q","response":"r","candidates":["a"],)"
                   R"("gold_candidate":3}]})"),
        DataError, MessageMatches(ContainsSubstring("gold_candidate out of range")));
    CHECK_THROWS_MATCHES(
        parse_text(R"({"turns":[{"text":"q","response":"r","candidates":["a"],)"
                   R"("gold_candidate":-1}]})"),
        DataError, MessageMatches(ContainsSubstring("gold_candidate out of range")));
    CHECK_THROWS_MATCHES(
        parse_text(R"({"turns":[{"text":"q","response":"r","positives":["b"],)"
                   R"("candidates":["a"],"gold_candidate":0}]})"),
        DataError, MessageMatches(ContainsSubstring("not among positives")));
}

TEST_CASE("load_dialogues reports a missing file") {
    CHECK_THROWS_MATCHES(load_dialogues("/nonexistent/dialogues.jsonl"), DataError,
                         MessageMatches(ContainsSubstring("cannot open dialogue file")));
}

TEST_CASE("context_text joins utterances or keeps only the last turn") {
    DialogueExample ex;
    CHECK(context_text(ex).empty());
    ex.context = {{"U1", "where was henry born"}, {"U2", "why do you ask"}};
    CHECK(context_text(ex, true) == "where was henry born why do you ask");
    CHECK(context_text(ex, false) == "why do you ask");
}

// ---------------------------------------------------------------------------
// Prompts and encoding
// ---------------------------------------------------------------------------

TEST_CASE("prompt strings are fixed and the none tag is rejected") {
    CHECK(prompt_text(PromptTag::response_generation) == "response generation :");
    CHECK(prompt_text(PromptTag::knowledge_identification) == "knowledge identification :");
    CHECK(prompt_text(PromptTag::corpus_denoising) == "corpus denoising :");
    CHECK_THROWS_AS(prompt_text(PromptTag::none), ConfigError);
}

TEST_CASE("encode_example keeps the prompt and the newest context under the cap") {
    std::string longest;
    for (int i = 0; i < 200; ++i) longest += "w" + std::to_string(i) + " ";
    const Tokenizer tok = Tokenizer::build(
        std::vector<std::string>{"response generation :", "u1 :", longest, "short turn",
                                 "the reply"},
        400);

    EncodeStats stats;
    const EncodedExample enc = encode_example({{"U1", longest}}, "the reply",
                                              PromptTag::response_generation, tok, &stats);
    REQUIRE(enc.input_ids.size() == kMaxInputLen);
    CHECK(stats.inputs_truncated == 1);
    CHECK(stats.outputs_truncated == 0);
    // Prompt survives at the front, the newest context word at the back.
    const std::vector<int> prompt_ids = tok.encode("response generation :");
    for (std::size_t i = 0; i < prompt_ids.size(); ++i) CHECK(enc.input_ids[i] == prompt_ids[i]);
    CHECK(enc.input_ids.back() == tok.encode("w199")[0]);

    EncodeStats none;
    const EncodedExample small = encode_example({{"U1", "short turn"}}, "the reply",
                                                PromptTag::response_generation, tok, &none);
    std::vector<int> want = tok.encode("response generation :");
    for (int id : tok.encode("u1 :")) want.push_back(id);
    for (int id : tok.encode("short turn")) want.push_back(id);
    CHECK(small.input_ids == want);
    CHECK(none.inputs_truncated == 0);
    CHECK(small.prompt_tag == PromptTag::response_generation);
}

TEST_CASE("encode_example caps the target and appends eos") {
    std::string target;
    for (int i = 0; i < 100; ++i) target += "w" + std::to_string(i) + " ";
    const Tokenizer tok = Tokenizer::build(
        std::vector<std::string>{"response generation :", "hi", target}, 400);

    EncodeStats stats;
    const EncodedExample enc =
        encode_example({{"U1", "hi"}}, target, PromptTag::response_generation, tok, &stats);
    REQUIRE(enc.output_ids.size() == kMaxOutputLen);
    CHECK(enc.output_ids.back() == Tokenizer::eos_id);
    CHECK(enc.output_ids[kMaxOutputLen - 2] == tok.encode("w62")[0]);
    CHECK(stats.outputs_truncated == 1);

    const EncodedExample small =
        encode_example({{"U1", "hi"}}, "hi", PromptTag::response_generation, tok);
    CHECK(small.output_ids == std::vector<int>{tok.encode("hi")[0], Tokenizer::eos_id});
}

TEST_CASE("encode_text_input truncates plain inputs the same way") {
    std::string longest;
    for (int i = 0; i < 300; ++i) longest += "w" + std::to_string(i % 40) + " ";
    const Tokenizer tok = Tokenizer::build(
        std::vector<std::string>{"corpus denoising :", longest}, 400);

    EncodeStats stats;
    const EncodedExample enc =
        encode_text_input(longest, "w0", PromptTag::corpus_denoising, tok, &stats);
    CHECK(enc.input_ids.size() == kMaxInputLen);
    CHECK(stats.inputs_truncated == 1);
    const std::vector<int> prompt_ids = tok.encode("corpus denoising :");
    for (std::size_t i = 0; i < prompt_ids.size(); ++i) CHECK(enc.input_ids[i] == prompt_ids[i]);

    const EncodedExample small = encode_text_input("w0 w1", "w2", PromptTag::corpus_denoising, tok);
    std::vector<int> want = prompt_ids;
    for (int id : tok.encode("w0 w1")) want.push_back(id);
    CHECK(small.input_ids == want);
}

TEST_CASE("build_tokenizer covers the task prompts and the data") {
    KnowledgeCorpus corpus;
    corpus.snippets.push_back({"k0", "", "anna okafor was born in paris ."});
    const auto dialogues = parse_text(
        R"({"turns":[{"speaker":"Q","text":"where was anna born","response":"in paris"}]})");
    const Tokenizer tok = build_tokenizer(corpus, dialogues, 200);

    for (PromptTag tag : {PromptTag::response_generation, PromptTag::knowledge_identification,
                          PromptTag::corpus_denoising}) {
        for (int id : tok.encode(prompt_text(tag))) CHECK(id != Tokenizer::unk_id);
    }
    for (int id : tok.encode("q : where was anna born in paris okafor ."))
        CHECK(id != Tokenizer::unk_id);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

TEST_CASE("synthetic dataset is deterministic and sized by its config") {
    SynthConfig cfg;
    cfg.entities = 5;
    cfg.dialogues = 12;
    cfg.seed = 21;
    const SynthDataset a = make_synthetic_dataset(cfg);
    const SynthDataset b = make_synthetic_dataset(cfg);

    REQUIRE(a.corpus.size() == 10);  // two snippets per person
    REQUIRE(a.dialogue_lines.size() == 12);
    for (std::size_t i = 0; i < a.corpus.size(); ++i) {
        CHECK(a.corpus.snippets[i].id == "k" + std::to_string(i));
        CHECK(a.corpus.snippets[i].text == b.corpus.snippets[i].text);
    }
    CHECK(a.dialogue_lines == b.dialogue_lines);

    SynthConfig other = cfg;
    other.seed = 22;
    CHECK(make_synthetic_dataset(other).dialogue_lines != a.dialogue_lines);
}

TEST_CASE("synthetic dialogues parse back with valid gold candidates") {
    SynthConfig cfg;
    cfg.entities = 4;
    cfg.dialogues = 20;
    cfg.seed = 3;
    cfg.two_turn_rate = 0.5;
    const SynthDataset data = make_synthetic_dataset(cfg);

    std::string joined;
    for (const auto& line : data.dialogue_lines) joined += line + "\n";
    DialogueLoadStats stats;
    const auto examples = parse_text(joined, &stats);
    REQUIRE(examples.size() == 20);
    CHECK(stats.dialogues == 20);

    std::set<std::string> corpus_texts;
    for (const auto& s : data.corpus.snippets) corpus_texts.insert(s.text);
    for (const auto& ex : examples) {
        REQUIRE(ex.positives.size() == 1);
        REQUIRE(ex.candidates.size() == 4);
        REQUIRE(ex.gold_candidate.has_value());
        CHECK(ex.candidates[static_cast<std::size_t>(*ex.gold_candidate)].text ==
              ex.positives[0].text);
        CHECK(corpus_texts.count(ex.positives[0].text) == 1);
        for (const auto& c : ex.candidates) CHECK(corpus_texts.count(c.text) == 1);
        CHECK_FALSE(ex.response.empty());
    }
}

TEST_CASE("synthetic two-turn rate controls the lead-in turn") {
    SynthConfig cfg;
    cfg.entities = 3;
    cfg.dialogues = 8;

    cfg.two_turn_rate = 0.0;
    DialogueLoadStats stats;
    std::string joined;
    for (const auto& line : make_synthetic_dataset(cfg).dialogue_lines) joined += line + "\n";
    auto examples = parse_text(joined, &stats);
    CHECK(stats.skipped_turns == 0);
    CHECK(examples[0].id == "d0_t0");
    CHECK(examples[0].context.size() == 1);

    cfg.two_turn_rate = 1.0;
    joined.clear();
    for (const auto& line : make_synthetic_dataset(cfg).dialogue_lines) joined += line + "\n";
    examples = parse_text(joined, &stats);
    REQUIRE(examples.size() == 8);
    CHECK(stats.skipped_turns == 8);
    for (const auto& ex : examples) {
        CHECK(ex.context.size() == 2);
        CHECK_THAT(ex.context[0].second, ContainsSubstring("tell me about"));
    }
}

TEST_CASE("synthetic generator validates its config") {
    SynthConfig cfg;
    cfg.entities = 1;
    CHECK_THROWS_AS(make_synthetic_dataset(cfg), ConfigError);
    cfg.entities = 61;
    CHECK_THROWS_MATCHES(make_synthetic_dataset(cfg), ConfigError,
                         MessageMatches(ContainsSubstring("at most 60")));
    cfg.entities = 2;
    cfg.dialogues = 0;
    CHECK_THROWS_AS(make_synthetic_dataset(cfg), ConfigError);
    cfg.dialogues = 1;
    cfg.two_turn_rate = 1.5;
    CHECK_THROWS_AS(make_synthetic_dataset(cfg), ConfigError);
}

TEST_CASE("corpus file round trips through ingest_corpus") {
    TempDir dir;
    SynthConfig cfg;
    cfg.entities = 3;
    cfg.dialogues = 1;
    const SynthDataset data = make_synthetic_dataset(cfg);
    write_corpus_file(dir.file("corpus.jsonl"), data.corpus);

    const KnowledgeCorpus loaded = ingest_corpus(dir.file("corpus.jsonl"));
    REQUIRE(loaded.size() == data.corpus.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded.snippets[i].id == data.corpus.snippets[i].id);
        CHECK(loaded.snippets[i].title == data.corpus.snippets[i].title);
        CHECK(loaded.snippets[i].text == data.corpus.snippets[i].text);
    }
}

// ---------------------------------------------------------------------------
// Predictions artifact
// ---------------------------------------------------------------------------

TEST_CASE("predictions round trip with provenance") {
    TempDir dir;
    const std::string path = dir.file("preds.jsonl");
    Provenance prov;
    prov.seed = 9;
    prov.config_hash = "cafe";
    write_predictions(path, {{"d0_t0", "he was born in paris ."}, {"d1_t0", ""}}, prov);

    Provenance got;
    const auto preds = read_predictions(path, &got);
    REQUIRE(preds.size() == 2);
    CHECK(preds[0].example_id == "d0_t0");
    CHECK(preds[0].text == "he was born in paris .");
    CHECK(preds[1].text.empty());
    CHECK(got.seed == 9);
    CHECK(got.config_hash == "cafe");
    CHECK(got.tool_version == MIXCL_VERSION);
}

TEST_CASE("prediction reader rejects malformed lines and wrong magic") {
    TempDir dir;
    const std::string path = dir.file("preds.jsonl");
    write_file(path, std::string(kPredictionsMagic) + "\n" +
                         Provenance{}.to_json().dump() + "\nnot json\n");
    CHECK_THROWS_MATCHES(read_predictions(path), DataError,
                         MessageMatches(ContainsSubstring(":3") &&
                                        ContainsSubstring("malformed prediction record")));

    write_file(path, std::string(kPredictionsMagic) + "\n" + Provenance{}.to_json().dump() +
                         "\n{\"example_id\":\"a\"}\n");
    CHECK_THROWS_AS(read_predictions(path), DataError);

    write_file(path, "MIXCL-IDX v1\n{}\n");
    CHECK_THROWS_MATCHES(read_predictions(path), DataError,
                         MessageMatches(ContainsSubstring("expected header `MIXCL-PRED v1`")));
    CHECK_THROWS_AS(read_predictions(dir.file("missing.jsonl")), DependencyError);
}

TEST_CASE("join_eval_examples matches predictions to examples by id") {
    const auto dialogues = parse_text(std::string(kTwoExampleDialogue) + "\n");
    REQUIRE(dialogues.size() == 2);

    const std::vector<Prediction> preds = {{"d0_t3", "beta"}, {"d0_t1", "alpha"}};
    const auto joined = join_eval_examples(dialogues, preds);
    REQUIRE(joined.size() == 2);
    CHECK(joined[0].pred == "alpha");  // dialogue order, not prediction order
    CHECK(joined[0].ref == "first reply");
    CHECK(joined[0].knowledge == "p0");
    CHECK(joined[1].pred == "beta");
    REQUIRE(joined[1].gold_candidate.has_value());
    CHECK(joined[1].candidates == std::vector<std::string>{"p0", "x"});

    CHECK_THROWS_MATCHES(join_eval_examples(dialogues, {{"d0_t1", "a"}, {"d0_t1", "b"}}),
                         DataError,
                         MessageMatches(ContainsSubstring("duplicate prediction")));
    CHECK_THROWS_MATCHES(join_eval_examples(dialogues, {{"d0_t1", "a"}}), DataError,
                         MessageMatches(ContainsSubstring("missing prediction for example d0_t3")));
    CHECK_THROWS_MATCHES(
        join_eval_examples(dialogues, {{"d0_t1", "a"}, {"d0_t3", "b"}, {"zzz", "c"}}), DataError,
        MessageMatches(ContainsSubstring("prediction without a matching example: zzz")));
}

// ---------------------------------------------------------------------------
// Stage wiring
// ---------------------------------------------------------------------------

TEST_CASE("stage names round trip and reject unknowns") {
    for (Stage s : {Stage::index, Stage::mine, Stage::train, Stage::decode, Stage::eval})
        CHECK(stage_from_name(stage_name(s)) == s);
    CHECK_THROWS_MATCHES(stage_from_name("deploy"), ConfigError,
                         MessageMatches(ContainsSubstring("unknown stage: deploy")));
    CHECK_THROWS_AS(run_pipeline(PipelineConfig{}, {}), ConfigError);
}

TEST_CASE("stage runners demand their config keys") {
    const PipelineConfig empty;
    CHECK_THROWS_MATCHES(run_index_stage(empty), ConfigError,
                         MessageMatches(ContainsSubstring("`corpus`") &&
                                        ContainsSubstring("index stage")));
    CHECK_THROWS_MATCHES(run_mine_stage(empty), ConfigError,
                         MessageMatches(ContainsSubstring("`dialogues`") &&
                                        ContainsSubstring("mine stage")));
    CHECK_THROWS_MATCHES(run_train_stage(empty), ConfigError,
                         MessageMatches(ContainsSubstring("`corpus`") &&
                                        ContainsSubstring("train stage")));
    CHECK_THROWS_MATCHES(run_decode_stage(empty), ConfigError,
                         MessageMatches(ContainsSubstring("`dialogues`")));
    CHECK_THROWS_MATCHES(run_eval_stage(empty), ConfigError,
                         MessageMatches(ContainsSubstring("`dialogues`")));
}

TEST_CASE("stage runners name the producing stage when an input is missing") {
    TempDir dir;
    PipelineConfig cfg;
    cfg.corpus = dir.file("corpus.jsonl");
    cfg.dialogues = dir.file("dialogues.jsonl");
    cfg.index = dir.file("index.bin");
    cfg.negatives = dir.file("negatives.jsonl");
    cfg.checkpoint = dir.file("model.ckpt");
    cfg.predictions = dir.file("preds.jsonl");
    cfg.report = dir.file("report.txt");

    CHECK_THROWS_MATCHES(run_index_stage(cfg), DependencyError,
                         MessageMatches(ContainsSubstring("generate it with the synth command")));
    CHECK_THROWS_MATCHES(run_mine_stage(cfg), DependencyError,
                         MessageMatches(ContainsSubstring("retrieval index not found") &&
                                        ContainsSubstring("run the index stage first")));
    CHECK_THROWS_MATCHES(run_train_stage(cfg), DependencyError,
                         MessageMatches(ContainsSubstring("negatives sidecar not found") &&
                                        ContainsSubstring("run the mine stage first")));
    CHECK_THROWS_MATCHES(run_decode_stage(cfg), DependencyError,
                         MessageMatches(ContainsSubstring("model checkpoint not found") &&
                                        ContainsSubstring("run the train stage first")));
    CHECK_THROWS_MATCHES(run_eval_stage(cfg), DependencyError,
                         MessageMatches(ContainsSubstring("predictions file not found") &&
                                        ContainsSubstring("run the decode stage first")));
}

TEST_CASE("index stage rejects an empty corpus and honors a stopword override") {
    TempDir dir;
    PipelineConfig cfg;
    cfg.corpus = dir.file("corpus.jsonl");
    cfg.index = dir.file("index.bin");

    write_file(cfg.corpus, "\n");
    CHECK_THROWS_MATCHES(run_index_stage(cfg), DataError,
                         MessageMatches(ContainsSubstring("corpus is empty")));

    SynthConfig sc;
    sc.entities = 3;
    sc.dialogues = 1;
    write_corpus_file(cfg.corpus, make_synthetic_dataset(sc).corpus);

    run_index_stage(cfg);
    const TfIdfIndex with_defaults = load_index(cfg.index);
    CHECK(with_defaults.vocabulary.count("was") == 0);  // default stopword
    CHECK(with_defaults.vocabulary.count("born") == 1);

    cfg.stopwords = dir.file("stopwords.txt");
    write_file(cfg.stopwords, "BORN\r\n\nworks\n");
    run_index_stage(cfg);
    const TfIdfIndex with_override = load_index(cfg.index);
    CHECK(with_override.vocabulary.count("born") == 0);
    CHECK(with_override.vocabulary.count("works") == 0);
    CHECK(with_override.vocabulary.count("was") == 1);  // defaults were replaced

    cfg.stopwords = dir.file("no_such_stopwords.txt");
    CHECK_THROWS_AS(run_index_stage(cfg), DependencyError);
}

namespace {

/// Writes a small synthetic dataset and returns a lean end-to-end config.
PipelineConfig make_micro_config(const TempDir& dir, int entities, int dialogues,
                                 std::uint64_t seed) {
    SynthConfig sc;
    sc.entities = entities;
    sc.dialogues = dialogues;
    sc.seed = seed;
    sc.two_turn_rate = 0.25;
    const SynthDataset data = make_synthetic_dataset(sc);
    write_corpus_file(dir.file("corpus.jsonl"), data.corpus);
    write_dialogues_file(dir.file("dialogues.jsonl"), data.dialogue_lines);

    std::istringstream text(
        "corpus = " + dir.file("corpus.jsonl") + "\n" +
        "dialogues = " + dir.file("dialogues.jsonl") + "\n" +
        "index = " + dir.file("index.bin") + "\n" +
        "negatives = " + dir.file("negatives.jsonl") + "\n" +
        "checkpoint = " + dir.file("model.ckpt") + "\n" +
        "predictions = " + dir.file("preds.jsonl") + "\n" +
        "report = " + dir.file("report.txt") + "\n" +
        "train_log = " + dir.file("train.log") + "\n" +
        "seed = " + std::to_string(seed) + "\n" +
        "max_vocab = 400\n"
        "epochs = 1\n"
        "batch_size = 4\n"
        "m = 2\n"
        "learning_rate = 0.001\n"
        "d_model = 16\n"
        "num_heads = 2\n"
        "enc_layers = 1\n"
        "dec_layers = 1\n"
        "d_ff = 32\n"
        "ret_pool = 6\n"
        "model_samples = 2\n"
        "ablation_seeds = 1\n"
        "heldout_fraction = 0.25\n");
    return PipelineConfig::from_config(KeyValueConfig::parse(text, "micro"), "micro");
}

}  // namespace

TEST_CASE("pipeline runs end to end on a miniature dataset") {
    TempDir dir;
    const PipelineConfig cfg = make_micro_config(dir, 4, 10, 7);
    const auto dialogues = load_dialogues(cfg.dialogues);
    REQUIRE(dialogues.size() == 10);

    // --- index ---
    run_index_stage(cfg);
    Provenance prov;
    load_index(cfg.index, &prov);
    CHECK(prov.tool_version == MIXCL_VERSION);
    CHECK(prov.seed == 7);
    CHECK(prov.config_hash == cfg.config_hash());

    // --- mine (byte-deterministic) ---
    run_mine_stage(cfg);
    const std::string mine_bytes = read_file(cfg.negatives);
    run_mine_stage(cfg);
    CHECK(read_file(cfg.negatives) == mine_bytes);

    Provenance mine_prov;
    const auto sets = read_negatives(cfg.negatives, &mine_prov);
    CHECK(mine_prov.config_hash == cfg.config_hash());
    REQUIRE(sets.size() == dialogues.size());
    std::set<std::string> ids;
    for (const auto& ex : dialogues) ids.insert(ex.id);
    for (std::size_t i = 0; i < sets.size(); ++i) {
        CHECK(ids.count(sets[i].context_id) == 1);
        CHECK(sets[i].items.size() <= 2);
        for (const auto& item : sets[i].items)
            CHECK(item.snippet.text != dialogues[i].positives[0].text);
    }

    // --- train (byte-deterministic checkpoint and log) ---
    run_train_stage(cfg);
    const std::string ckpt_bytes = read_file(cfg.checkpoint);
    const std::string log_bytes = read_file(cfg.train_log);
    run_train_stage(cfg);
    CHECK(read_file(cfg.checkpoint) == ckpt_bytes);
    CHECK(read_file(cfg.train_log) == log_bytes);

    {
        std::istringstream log(log_bytes);
        Provenance log_prov = read_header(log, kTrainLogMagic, cfg.train_log);
        CHECK(log_prov.config_hash == cfg.config_hash());
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(log, line))
            if (!line.empty()) lines.push_back(line);
        REQUIRE(lines.size() == 3);  // 1 epoch x ceil(10 / 4) batches
        // Steps are logged zero-based: the first record carries the exact
        // schedule start weights.
        const nlohmann::json first = nlohmann::json::parse(lines[0]);
        CHECK(first.at("step") == 0);
        CHECK(first.at("alpha1").get<double>() == 0.4);
        for (const char* key : {"alpha1", "alpha2", "alpha3", "L_MLE", "L_MCL", "L_LM", "J",
                                "grad_norm"})
            CHECK(first.contains(key));
        CHECK(nlohmann::json::parse(lines[2]).at("step") == 2);
    }
    {
        nlohmann::json header;
        const ReferenceModel<float> model = load_checkpoint<float>(cfg.checkpoint, nullptr,
                                                                   &header);
        CHECK(header.at("optimizer") == "adam");
        CHECK(header.at("learning_rate").get<double>() == 0.001);
        REQUIRE(header.contains("vocab"));
        const auto vocab = header["vocab"].get<std::vector<std::string>>();
        CHECK(model.config().vocab_size ==
              static_cast<int>(vocab.size()) + Tokenizer::num_reserved);
    }

    // --- mine again with the trained model in the loop ---
    {
        PipelineConfig boot = cfg;
        boot.mine_model = cfg.checkpoint;
        boot.negatives = dir.file("negatives_boot.jsonl");
        run_mine_stage(boot);
        CHECK(read_negatives(boot.negatives).size() == dialogues.size());

        boot.mine_model = dir.file("no_such.ckpt");
        CHECK_THROWS_MATCHES(run_mine_stage(boot), DependencyError,
                             MessageMatches(ContainsSubstring("run the train stage first")));
    }

    // --- decode (byte-deterministic) ---
    run_decode_stage(cfg);
    const std::string pred_bytes = read_file(cfg.predictions);
    run_decode_stage(cfg);
    CHECK(read_file(cfg.predictions) == pred_bytes);

    const auto preds = read_predictions(cfg.predictions);
    REQUIRE(preds.size() == dialogues.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
        CHECK(preds[i].example_id == dialogues[i].id);

    // --- eval ---
    const MetricsReport report = run_eval_stage(cfg);
    CHECK(report.examples == dialogues.size());
    CHECK(report.accuracy_examples == dialogues.size());
    for (double v : {report.f1, report.rouge_l, report.bleu2, report.bleu4, report.knowledge_f1,
                     report.entity_f1, report.accuracy}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    {
        std::ifstream in(cfg.report);
        Provenance rep_prov = read_header(in, kReportMagic, cfg.report);
        CHECK(rep_prov.seed == 7);
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK_THAT(line, ContainsSubstring("F1 ") && ContainsSubstring("KF1 "));
        REQUIRE(std::getline(in, line));
        const nlohmann::json structured = nlohmann::json::parse(line);
        CHECK(structured.at("n_examples") == dialogues.size());
    }

    // Duplicate stages collapse to one run.
    run_pipeline(cfg, {Stage::eval, Stage::eval, Stage::decode});

    // --- validation split drives best-epoch selection without breaking IO ---
    {
        PipelineConfig val = cfg;
        val.validation_dialogues = cfg.dialogues;
        val.checkpoint = dir.file("model_val.ckpt");
        val.train_log = "";
        run_train_stage(val);
        CHECK(std::filesystem::exists(val.checkpoint));

        val.validation_dialogues = dir.file("no_such_dialogues.jsonl");
        CHECK_THROWS_MATCHES(run_train_stage(val), DependencyError,
                             MessageMatches(ContainsSubstring("validation dialogue file")));
    }
}

// ---------------------------------------------------------------------------
// Ablation machinery
// ---------------------------------------------------------------------------

TEST_CASE("ablation variants toggle exactly one training flag each") {
    const auto& names = known_ablation_variants();
    REQUIRE(names.size() == 6);
    CHECK(names[0] == "full");

    const TrainConfig base;
    for (const auto& name : names) {
        const TrainConfig tc = apply_ablation_variant(base, name);
        const int toggles = int(tc.disable_mcl) + int(tc.disable_lm) + int(tc.mle_only) +
                            int(tc.random_negatives) + int(tc.disable_model_negatives);
        CHECK(toggles == (name == "full" ? 0 : 1));
    }
    CHECK(apply_ablation_variant(base, "wo_mcl").disable_mcl);
    CHECK(apply_ablation_variant(base, "wo_lm").disable_lm);
    CHECK(apply_ablation_variant(base, "mle_only").mle_only);
    CHECK(apply_ablation_variant(base, "random_negatives").random_negatives);
    CHECK(apply_ablation_variant(base, "retrieved_only").disable_model_negatives);
    CHECK_THROWS_MATCHES(apply_ablation_variant(base, "bogus"), ConfigError,
                         MessageMatches(ContainsSubstring("unknown ablation variant: bogus")));
}

TEST_CASE("a failing variant is captured in its cell instead of throwing") {
    PipelineConfig cfg;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 2;
    cfg.model.d_model = 16;
    cfg.model.num_heads = 2;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.d_ff = 32;

    const KnowledgeCorpus empty_corpus;  // the denoising term cannot sample from this
    const auto dialogues = parse_text(std::string(kTwoExampleDialogue) + "\n");
    const Tokenizer tok = build_tokenizer(empty_corpus, dialogues, 100);
    const auto train_examples = prepare_train_examples(dialogues, tok);

    const AblationCell cell =
        run_ablation_variant(cfg, "full", 3, empty_corpus, tok, train_examples, dialogues);
    CHECK(cell.failed);
    CHECK_FALSE(cell.error.empty());
}

TEST_CASE("ablation table renders deltas against the full objective") {
    AblationMatrix matrix;
    matrix.variants = {"full", "wo_mcl"};
    AblationRun run;
    run.seed = 3;
    AblationCell full;
    full.report.f1 = 0.50;
    full.report.bleu4 = 0.20;
    full.report.knowledge_f1 = 0.40;
    full.report.entity_f1 = 0.30;
    AblationCell failed;
    failed.failed = true;
    failed.error = "boom";
    run.cells = {{"full", full}, {"wo_mcl", failed}};
    matrix.runs.push_back(run);

    REQUIRE(matrix.runs[0].cell("full") != nullptr);
    CHECK(matrix.runs[0].cell("nope") == nullptr);

    const std::string table = matrix.table();
    CHECK_THAT(table, ContainsSubstring("variant            seed  F1"));
    CHECK_THAT(table, ContainsSubstring("50.0"));
    CHECK_THAT(table, ContainsSubstring("+0.0"));  // full against itself
    CHECK_THAT(table, ContainsSubstring("FAILED: boom"));
}

TEST_CASE("ablation matrix trains shared-seed variants on a tiny dataset") {
    TempDir dir;
    const PipelineConfig cfg = make_micro_config(dir, 3, 8, 11);

    CHECK_THROWS_AS(run_ablation_matrix(cfg, {}), ConfigError);
    CHECK_THROWS_MATCHES(run_ablation_matrix(cfg, {"bogus"}), ConfigError,
                         MessageMatches(ContainsSubstring("unknown ablation variant")));

    const AblationMatrix matrix = run_ablation_matrix(cfg, {"mle_only"});
    CHECK(matrix.variants == std::vector<std::string>{"full", "mle_only"});
    REQUIRE(matrix.runs.size() == 1);  // ablation_seeds = 1
    CHECK(matrix.runs[0].seed == 11);
    REQUIRE(matrix.runs[0].cells.size() == 2);
    for (const auto& [name, cell] : matrix.runs[0].cells) {
        INFO(name << ": " << cell.error);
        CHECK_FALSE(cell.failed);
        CHECK(cell.report.examples == 2);  // 8 dialogues * 0.25 held out
    }
    CHECK_THAT(matrix.table(), ContainsSubstring("mle_only"));

    // Too little data to split.
    TempDir tiny;
    PipelineConfig small = make_micro_config(tiny, 2, 1, 11);
    CHECK_THROWS_MATCHES(run_ablation_matrix(small, {"full"}), DataError,
                         MessageMatches(ContainsSubstring("at least two dialogue examples")));
}
