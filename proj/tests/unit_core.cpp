// Core utility tests: deterministic RNG streams, tokenization, the corpus
// reader, artifact headers, and the flat key = value configuration.

#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mixcl/config.hpp"
#include "mixcl/corpus.hpp"
#include "mixcl/io.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/text.hpp"
#include "mixcl/tokenizer.hpp"
#include "mixcl/version.hpp"

using namespace mixcl;

TEST_CASE("mix_seed separates streams by tag and is stable") {
    CHECK(mix_seed(13, "a") == mix_seed(13, "a"));
    CHECK(mix_seed(13, "a") != mix_seed(13, "b"));
    CHECK(mix_seed(13, "a") != mix_seed(14, "a"));
}

TEST_CASE("rng reproduces the same stream for the same seed") {
    Rng a(99), b(99), c(100);
    bool any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t x = a.next_u64();
        CHECK(x == b.next_u64());
        if (x != c.next_u64()) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("rng uniform lies in [0, 1) and indexes stay in range") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        REQUIRE(rng.uniform_index(7) < 7);
    }
    CHECK(rng.uniform_index(0) == 0);
    CHECK(rng.uniform_index(1) == 0);
}

TEST_CASE("rng bernoulli endpoints are exact") {
    Rng rng(21);
    for (int i = 0; i < 200; ++i) {
        CHECK_FALSE(rng.bernoulli(0.0));
        CHECK(rng.bernoulli(1.0));
    }
}

TEST_CASE("rng poisson mean is near the requested mean") {
    Rng rng(5);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += rng.poisson(3.0);
    const double mean = sum / n;
    CHECK(mean > 2.9);
    CHECK(mean < 3.1);
}

TEST_CASE("rng weighted_index honors point masses") {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) CHECK(rng.weighted_index({0.0, 5.0, 0.0}) == 1);
}

TEST_CASE("word_tokenize splits punctuation and preserves case") {
    const auto toks = word_tokenize("He was born in Montreal, Quebec, Canada.");
    const std::vector<std::string> want = {"He", "was",    "born", "in", "Montreal", ",",
                                           "Quebec", ",", "Canada", "."};
    CHECK(toks == want);
    CHECK(word_tokenize("don't stop") == std::vector<std::string>{"don't", "stop"});
    CHECK(word_tokenize("").empty());
    CHECK(word_tokenize("   ").empty());
}

TEST_CASE("metric_tokens lowercases and drops punctuation") {
    const auto toks = metric_tokens("The Cat, the Mat!");
    CHECK(toks == std::vector<std::string>{"the", "cat", "the", "mat"});
    CHECK(metric_tokens("...").empty());
}

TEST_CASE("detokenize reattaches closing punctuation") {
    const std::string text = "He was born in Montreal, Quebec, Canada.";
    CHECK(detokenize(word_tokenize(text)) == text);
    CHECK(detokenize({"(", "a", ")"}) == "(a)");
    const auto toks = word_tokenize(text);
    CHECK(detokenize(toks, 4, 9) == "Montreal, Quebec, Canada");
}

TEST_CASE("stopword list covers common function words only") {
    CHECK(is_stopword("the"));
    CHECK(is_stopword("was"));
    CHECK_FALSE(is_stopword("paris"));
    CHECK_FALSE(is_stopword("born"));
}

TEST_CASE("tokenizer reserves pad, unk, bos, eos") {
    CHECK(Tokenizer::pad_id == 0);
    CHECK(Tokenizer::unk_id == 1);
    CHECK(Tokenizer::bos_id == 2);
    CHECK(Tokenizer::eos_id == 3);
    CHECK(Tokenizer::num_reserved == 4);
}

TEST_CASE("tokenizer round trips known words and maps unknowns to unk") {
    const std::vector<std::string> texts = {"anna was born in paris", "anna works in rome"};
    const Tokenizer tok = Tokenizer::build(texts, 100);
    const auto ids = tok.encode("Anna was born in Paris");
    for (int id : ids) CHECK(id != Tokenizer::unk_id);
    CHECK(tok.decode(ids) == "anna was born in paris");
    const auto unk = tok.encode("zanzibar");
    REQUIRE(unk.size() == 1);
    CHECK(unk[0] == Tokenizer::unk_id);
}

TEST_CASE("tokenizer keeps the most frequent words under a vocab cap") {
    // "common" appears three times, the fillers once each.
    const std::vector<std::string> texts = {"common common common", "rare1 rare2 rare3"};
    const Tokenizer tok = Tokenizer::build(texts, Tokenizer::num_reserved + 1);
    CHECK(tok.vocab_size() == Tokenizer::num_reserved + 1);
    CHECK(tok.encode("common")[0] != Tokenizer::unk_id);
    CHECK(tok.encode("rare1")[0] == Tokenizer::unk_id);
}

TEST_CASE("tokenizer orders equal-frequency words lexicographically") {
    const std::vector<std::string> texts = {"delta alpha charlie bravo"};
    const Tokenizer tok = Tokenizer::build(texts, 100);
    CHECK(tok.content_tokens() ==
          std::vector<std::string>{"alpha", "bravo", "charlie", "delta"});
}

TEST_CASE("tokenizer from_vocab round trips and rejects duplicates") {
    const std::vector<std::string> texts = {"anna was born in paris"};
    const Tokenizer tok = Tokenizer::build(texts, 100);
    const Tokenizer copy = Tokenizer::from_vocab(tok.content_tokens());
    CHECK(copy.encode("anna was born in paris") == tok.encode("anna was born in paris"));
    CHECK_THROWS_AS(Tokenizer::from_vocab({"a", "a"}), DataError);
}

TEST_CASE("tokenizer encode_tokens is one id per surface token") {
    const Tokenizer tok = Tokenizer::build(std::vector<std::string>{"a b c"}, 100);
    const auto ids = tok.encode_tokens({"A", ",", "b"});
    REQUIRE(ids.size() == 3);
    CHECK(ids[1] == Tokenizer::unk_id);  // "," was never in the vocabulary
}

TEST_CASE("corpus parser reads records, skips blanks, rejects duplicates") {
    std::istringstream ok(R"({"id":"k1","title":"t","text":"a b"}

{"id":"k2","text":"c d"}
)");
    const KnowledgeCorpus corpus = parse_corpus(ok, "test");
    REQUIRE(corpus.size() == 2);
    CHECK(corpus.snippets[0].id == "k1");
    CHECK(corpus.snippets[0].title == "t");
    CHECK(corpus.snippets[1].title.empty());

    std::istringstream dup(R"({"id":"k1","text":"a"}
{"id":"k1","text":"b"}
)");
    CHECK_THROWS_WITH(parse_corpus(dup, "test"), Catch::Matchers::ContainsSubstring("k1"));

    std::istringstream missing(R"({"id":"k1"}
)");
    CHECK_THROWS_AS(parse_corpus(missing, "test"), DataError);

    std::istringstream garbage("not an object\n");
    CHECK_THROWS_WITH(parse_corpus(garbage, "test"), Catch::Matchers::ContainsSubstring("1"));
}

TEST_CASE("corpus parser assigns sequential ids when missing") {
    std::istringstream in(R"({"text":"a"}
{"text":"b"}
)");
    const KnowledgeCorpus corpus = parse_corpus(in, "test");
    REQUIRE(corpus.size() == 2);
    CHECK(corpus.snippets[0].id != corpus.snippets[1].id);
}

TEST_CASE("ingest_corpus reports a missing file") {
    CHECK_THROWS_AS(ingest_corpus("/nonexistent/corpus.jsonl"), DataError);
}

TEST_CASE("hash_hex is the pinned 64-bit FNV-1a") {
    CHECK(hash_hex("") == "cbf29ce484222325");
    CHECK(hash_hex("abc") == "e71fa2190541574b");
}

TEST_CASE("artifact headers round trip provenance") {
    Provenance prov;
    prov.seed = 42;
    prov.config_hash = "deadbeefdeadbeef";
    std::stringstream buf;
    write_header(buf, "MIXCL-TST v1", prov);
    buf << "payload\n";
    const Provenance got = read_header(buf, "MIXCL-TST v1", "buf");
    CHECK(got.tool_version == MIXCL_VERSION);
    CHECK(got.seed == 42);
    CHECK(got.config_hash == "deadbeefdeadbeef");
    std::string payload;
    std::getline(buf, payload);
    CHECK(payload == "payload");
}

TEST_CASE("artifact headers reject a wrong magic") {
    Provenance prov;
    std::stringstream buf;
    write_header(buf, "MIXCL-TST v1", prov);
    CHECK_THROWS_AS(read_header(buf, "MIXCL-OTHER v1", "buf"), DataError);
}

TEST_CASE("key = value parser handles comments, trimming, duplicates") {
    std::istringstream in(R"(# leading comment
seed = 7
  epochs=2   # trailing comment

learning_rate = 0.001
)");
    const KeyValueConfig kv = KeyValueConfig::parse(in, "test");
    CHECK(kv.get_uint64("seed", 0) == 7);
    CHECK(kv.get_int("epochs", 0) == 2);
    CHECK(kv.get_double("learning_rate", 0.0) == 0.001);
    CHECK(kv.get_string("missing", "fallback") == "fallback");

    std::istringstream dup("a = 1\na = 2\n");
    CHECK_THROWS_WITH(KeyValueConfig::parse(dup, "test"),
                      Catch::Matchers::ContainsSubstring("duplicate"));
    std::istringstream noeq("just words\n");
    CHECK_THROWS_AS(KeyValueConfig::parse(noeq, "test"), ConfigError);
}

TEST_CASE("key = value parser rejects malformed numbers and booleans") {
    std::istringstream in("n = 12x\nb = maybe\nf = 1.2.3\n");
    const KeyValueConfig kv = KeyValueConfig::parse(in, "test");
    CHECK_THROWS_AS(kv.get_int("n", 0), ConfigError);
    CHECK_THROWS_AS(kv.get_bool("b", false), ConfigError);
    CHECK_THROWS_AS(kv.get_double("f", 0.0), ConfigError);
    std::istringstream bools("t = yes\nf = off\n");
    const KeyValueConfig kb = KeyValueConfig::parse(bools, "test");
    CHECK(kb.get_bool("t", false));
    CHECK_FALSE(kb.get_bool("f", true));
}

TEST_CASE("pipeline config defaults match the training recipe") {
    const PipelineConfig cfg;
    CHECK(cfg.seed == 13);
    CHECK(cfg.train.learning_rate == 2e-5);
    CHECK(cfg.train.clip_norm == 0.1);
    CHECK(cfg.train.epochs == 5);
    CHECK(cfg.train.batch_size == 16);
    CHECK(cfg.train.m == 8);
    CHECK(cfg.train.beta_neg == 0.5);
    CHECK(cfg.train.beta_span == 0.5);
    CHECK(cfg.train.schedule.alpha_init.alpha1 == 0.4);
    CHECK(cfg.train.schedule.alpha_init.alpha2 == 0.3);
    CHECK(cfg.train.schedule.alpha_init.alpha3 == 0.3);
    CHECK(cfg.train.schedule.alpha_final.alpha1 == 0.5);
    CHECK(cfg.train.schedule.alpha_final.alpha2 == 0.5);
    CHECK(cfg.train.schedule.alpha_final.alpha3 == 0.0);
    CHECK(cfg.model.d_model == 64);
    CHECK(cfg.model.num_heads == 2);
    CHECK(cfg.model.enc_layers == 2);
    CHECK(cfg.model.dec_layers == 2);
    CHECK(cfg.model.d_ff == 256);
    CHECK(cfg.model.max_input_len == 128);
    CHECK(cfg.model.max_output_len == 64);
    CHECK(cfg.mine.m == 8);
    CHECK(cfg.mine.beta_neg == 0.5);
    CHECK(cfg.mine.full_context);
    CHECK(cfg.synth.entities == 50);
    CHECK(cfg.synth.dialogues == 500);
}

TEST_CASE("pipeline config rejects unknown keys") {
    std::istringstream in("not_a_real_key = 1\n");
    const KeyValueConfig kv = KeyValueConfig::parse(in, "test");
    CHECK_THROWS_WITH(PipelineConfig::from_config(kv, "test"),
                      Catch::Matchers::ContainsSubstring("not_a_real_key"));
}

TEST_CASE("pipeline config file values land in the nested configs") {
    std::istringstream in(R"(seed = 99
learning_rate = 0.001
epochs = 2
m = 4
beta_neg = 0.25
d_model = 32
ret_pool = 5
full_context = false
synth_entities = 10
mask_rate = 0.5
)");
    const PipelineConfig cfg =
        PipelineConfig::from_config(KeyValueConfig::parse(in, "test"), "test");
    CHECK(cfg.seed == 99);
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.mine.seed == 99);
    CHECK(cfg.synth.seed == 99);
    CHECK(cfg.train.learning_rate == 0.001);
    CHECK(cfg.train.epochs == 2);
    CHECK(cfg.train.m == 4);
    CHECK(cfg.mine.m == 4);
    CHECK(cfg.train.beta_neg == 0.25);
    CHECK(cfg.mine.beta_neg == 0.25);
    CHECK(cfg.model.d_model == 32);
    CHECK(cfg.mine.ret_pool == 5);
    CHECK_FALSE(cfg.mine.full_context);
    CHECK(cfg.synth.entities == 10);
    CHECK(cfg.train.corruption.mask_rate == 0.5);
}

TEST_CASE("config hash tracks value changes and override_seed propagates") {
    PipelineConfig a, b;
    CHECK(a.config_hash() == b.config_hash());
    b.train.learning_rate = 1e-3;
    CHECK(a.config_hash() != b.config_hash());

    a.override_seed(1234);
    CHECK(a.seed == 1234);
    CHECK(a.train.seed == 1234);
    CHECK(a.mine.seed == 1234);
    CHECK(a.synth.seed == 1234);
}

TEST_CASE("pipeline config validates ranges") {
    std::istringstream bad1("heldout_fraction = 1.5\n");
    CHECK_THROWS_AS(PipelineConfig::from_config(KeyValueConfig::parse(bad1, "t"), "t"),
                    ConfigError);
    std::istringstream bad2("ablation_seeds = 0\n");
    CHECK_THROWS_AS(PipelineConfig::from_config(KeyValueConfig::parse(bad2, "t"), "t"),
                    ConfigError);
    std::istringstream bad3("entailment_threshold = 2\n");
    CHECK_THROWS_AS(PipelineConfig::from_config(KeyValueConfig::parse(bad3, "t"), "t"),
                    ConfigError);
}
