#pragma once

// Flat key = value configuration shared by every CLI subcommand. Lines hold
// one `key = value` pair; `#` starts a comment; blank lines are skipped.
// Unknown keys are rejected so typos fail loudly instead of silently keeping
// a default. The canonical serialization of the resolved config is hashed
// into every artifact header.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixcl/corrupt.hpp"
#include "mixcl/error.hpp"
#include "mixcl/io.hpp"
#include "mixcl/model.hpp"
#include "mixcl/negatives.hpp"
#include "mixcl/synth.hpp"
#include "mixcl/trainer.hpp"

namespace mixcl {

class KeyValueConfig {
  public:
    static KeyValueConfig parse(std::istream& in, const std::string& name) {
        KeyValueConfig cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(name + ":" + std::to_string(line_no) +
                                  ": expected `key = value`");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(name + ":" + std::to_string(line_no) + ": empty key");
            if (!cfg.values_.emplace(key, value).second)
                throw ConfigError(name + ":" + std::to_string(line_no) + ": duplicate key `" +
                                  key + "`");
        }
        return cfg;
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        return parse(in, path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key `" + key + "`: not a number: " + it->second);
        }
    }

    long get_int(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const long v = std::stol(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key `" + key + "`: not an integer: " + it->second);
        }
    }

    std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key `" + key + "`: not an unsigned integer: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError("config key `" + key + "`: not a boolean: " + v);
    }

    /// Throws when the file holds a key outside the known set.
    void require_known(const std::set<std::string>& known, const std::string& name) const {
        for (const auto& [key, value] : values_) {
            (void)value;
            if (!known.count(key))
                throw ConfigError(name + ": unknown config key `" + key + "`");
        }
    }

  private:
    static std::string trim(const std::string& s) {
        const std::size_t b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        const std::size_t e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Resolved pipeline configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
    // Artifact paths. Stage commands require the ones they touch.
    std::string corpus;
    std::string dialogues;
    std::string validation_dialogues;  // optional held-out set
    std::string index;
    std::string negatives;
    std::string checkpoint;
    std::string mine_model;  // optional checkpoint for model-generated negatives
    std::string predictions;
    std::string report;
    std::string train_log;
    std::string stopwords;  // optional override list for the retrieval index

    std::uint64_t seed = 13;
    std::size_t max_vocab = 2000;  // tokenizer cap when training from scratch
    double heldout_fraction = 0.2; // ablation split over the dialogue file
    int ablation_seeds = 5;
    double entailment_threshold = 0.8;

    TrainConfig train;
    ModelConfig model;  // vocab_size stays 0 until a tokenizer is built
    MineConfig mine;
    SynthConfig synth;

    /// Stable text form of every field; its hash goes into artifact headers.
    std::string canonical() const {
        std::ostringstream out;
        out.precision(17);
        out << "corpus=" << corpus << "\ndialogues=" << dialogues
            << "\nvalidation_dialogues=" << validation_dialogues << "\nindex=" << index
            << "\nnegatives=" << negatives << "\ncheckpoint=" << checkpoint
            << "\nmine_model=" << mine_model
            << "\npredictions=" << predictions << "\nreport=" << report
            << "\ntrain_log=" << train_log << "\nstopwords=" << stopwords
            << "\nseed=" << seed << "\nmax_vocab=" << max_vocab
            << "\nheldout_fraction=" << heldout_fraction << "\nablation_seeds=" << ablation_seeds
            << "\nentailment_threshold=" << entailment_threshold
            << "\nlearning_rate=" << train.learning_rate << "\nclip_norm=" << train.clip_norm
            << "\nepochs=" << train.epochs << "\nbatch_size=" << train.batch_size
            << "\nm=" << train.m << "\nbeta_neg=" << train.beta_neg
            << "\nbeta_span=" << train.beta_span << "\nprob_floor=" << train.prob_floor
            << "\ndisable_mcl=" << train.disable_mcl << "\ndisable_lm=" << train.disable_lm
            << "\nrandom_negatives=" << train.random_negatives
            << "\ndisable_model_negatives=" << train.disable_model_negatives
            << "\nmle_only=" << train.mle_only << "\nalpha1_init=" << train.schedule.alpha_init.alpha1
            << "\nalpha2_init=" << train.schedule.alpha_init.alpha2
            << "\nalpha3_init=" << train.schedule.alpha_init.alpha3
            << "\nalpha1_final=" << train.schedule.alpha_final.alpha1
            << "\nalpha2_final=" << train.schedule.alpha_final.alpha2
            << "\nalpha3_final=" << train.schedule.alpha_final.alpha3
            << "\nmask_weight=" << train.corruption.mask_weight
            << "\ndelete_weight=" << train.corruption.delete_weight
            << "\ninfill_weight=" << train.corruption.infill_weight
            << "\nmask_rate=" << train.corruption.mask_rate
            << "\ninfill_mean=" << train.corruption.infill_mean
            << "\nadam_beta1=" << train.adam_beta1 << "\nadam_beta2=" << train.adam_beta2
            << "\nadam_eps=" << train.adam_eps << "\nselect_best=" << train.select_best
            << "\nd_model=" << model.d_model << "\nnum_heads=" << model.num_heads
            << "\nenc_layers=" << model.enc_layers << "\ndec_layers=" << model.dec_layers
            << "\nd_ff=" << model.d_ff << "\nmax_input_len=" << model.max_input_len
            << "\nmax_output_len=" << model.max_output_len << "\nret_pool=" << mine.ret_pool
            << "\nmodel_samples=" << mine.model_samples << "\ntemperature=" << mine.temperature
            << "\nfull_context=" << mine.full_context
            << "\nsynth_entities=" << synth.entities << "\nsynth_dialogues=" << synth.dialogues
            << "\nsynth_two_turn_rate=" << synth.two_turn_rate << "\n";
        return out.str();
    }

    std::string config_hash() const { return hash_hex(canonical()); }

    Provenance provenance() const {
        Provenance p;
        p.seed = seed;
        p.config_hash = config_hash();
        return p;
    }

    static const std::set<std::string>& known_keys() {
        static const std::set<std::string> keys = {
            "corpus", "dialogues", "validation_dialogues", "index", "negatives", "checkpoint",
            "mine_model", "predictions", "report", "train_log", "seed", "max_vocab",
            "heldout_fraction",
            "ablation_seeds", "entailment_threshold", "learning_rate", "clip_norm", "epochs",
            "batch_size", "m", "beta_neg", "beta_span", "prob_floor", "disable_mcl",
            "disable_lm", "random_negatives", "disable_model_negatives", "mle_only",
            "alpha1_init", "alpha2_init", "alpha3_init", "alpha1_final", "alpha2_final",
            "alpha3_final", "mask_weight", "delete_weight", "infill_weight", "mask_rate",
            "infill_mean", "adam_beta1", "adam_beta2", "adam_eps", "select_best", "d_model",
            "num_heads", "enc_layers", "dec_layers", "d_ff", "max_input_len", "max_output_len",
            "ret_pool", "model_samples", "temperature", "full_context", "stopwords",
            "synth_entities", "synth_dialogues", "synth_two_turn_rate"};
        return keys;
    }

    static PipelineConfig from_config(const KeyValueConfig& kv, const std::string& name) {
        kv.require_known(known_keys(), name);
        PipelineConfig c;
        c.corpus = kv.get_string("corpus", c.corpus);
        c.dialogues = kv.get_string("dialogues", c.dialogues);
        c.validation_dialogues = kv.get_string("validation_dialogues", c.validation_dialogues);
        c.index = kv.get_string("index", c.index);
        c.negatives = kv.get_string("negatives", c.negatives);
        c.checkpoint = kv.get_string("checkpoint", c.checkpoint);
        c.mine_model = kv.get_string("mine_model", c.mine_model);
        c.predictions = kv.get_string("predictions", c.predictions);
        c.report = kv.get_string("report", c.report);
        c.train_log = kv.get_string("train_log", c.train_log);
        c.stopwords = kv.get_string("stopwords", c.stopwords);
        c.seed = kv.get_uint64("seed", c.seed);
        c.max_vocab = static_cast<std::size_t>(kv.get_int("max_vocab",
                                                          static_cast<long>(c.max_vocab)));
        c.heldout_fraction = kv.get_double("heldout_fraction", c.heldout_fraction);
        c.ablation_seeds = static_cast<int>(kv.get_int("ablation_seeds", c.ablation_seeds));
        c.entailment_threshold = kv.get_double("entailment_threshold", c.entailment_threshold);

        TrainConfig& t = c.train;
        t.learning_rate = kv.get_double("learning_rate", t.learning_rate);
        t.clip_norm = kv.get_double("clip_norm", t.clip_norm);
        t.epochs = static_cast<int>(kv.get_int("epochs", t.epochs));
        t.batch_size = static_cast<int>(kv.get_int("batch_size", t.batch_size));
        t.m = static_cast<int>(kv.get_int("m", t.m));
        t.beta_neg = kv.get_double("beta_neg", t.beta_neg);
        t.beta_span = kv.get_double("beta_span", t.beta_span);
        t.prob_floor = kv.get_double("prob_floor", t.prob_floor);
        t.disable_mcl = kv.get_bool("disable_mcl", t.disable_mcl);
        t.disable_lm = kv.get_bool("disable_lm", t.disable_lm);
        t.random_negatives = kv.get_bool("random_negatives", t.random_negatives);
        t.disable_model_negatives = kv.get_bool("disable_model_negatives",
                                                t.disable_model_negatives);
        t.mle_only = kv.get_bool("mle_only", t.mle_only);
        t.schedule.alpha_init.alpha1 = kv.get_double("alpha1_init", t.schedule.alpha_init.alpha1);
        t.schedule.alpha_init.alpha2 = kv.get_double("alpha2_init", t.schedule.alpha_init.alpha2);
        t.schedule.alpha_init.alpha3 = kv.get_double("alpha3_init", t.schedule.alpha_init.alpha3);
        t.schedule.alpha_final.alpha1 =
            kv.get_double("alpha1_final", t.schedule.alpha_final.alpha1);
        t.schedule.alpha_final.alpha2 =
            kv.get_double("alpha2_final", t.schedule.alpha_final.alpha2);
        t.schedule.alpha_final.alpha3 =
            kv.get_double("alpha3_final", t.schedule.alpha_final.alpha3);
        t.corruption.mask_weight = kv.get_double("mask_weight", t.corruption.mask_weight);
        t.corruption.delete_weight = kv.get_double("delete_weight", t.corruption.delete_weight);
        t.corruption.infill_weight = kv.get_double("infill_weight", t.corruption.infill_weight);
        t.corruption.mask_rate = kv.get_double("mask_rate", t.corruption.mask_rate);
        t.corruption.infill_mean = kv.get_double("infill_mean", t.corruption.infill_mean);
        t.adam_beta1 = kv.get_double("adam_beta1", t.adam_beta1);
        t.adam_beta2 = kv.get_double("adam_beta2", t.adam_beta2);
        t.adam_eps = kv.get_double("adam_eps", t.adam_eps);
        t.select_best = kv.get_bool("select_best", t.select_best);
        t.seed = c.seed;

        ModelConfig& mo = c.model;
        mo.d_model = static_cast<int>(kv.get_int("d_model", mo.d_model));
        mo.num_heads = static_cast<int>(kv.get_int("num_heads", mo.num_heads));
        mo.enc_layers = static_cast<int>(kv.get_int("enc_layers", mo.enc_layers));
        mo.dec_layers = static_cast<int>(kv.get_int("dec_layers", mo.dec_layers));
        mo.d_ff = static_cast<int>(kv.get_int("d_ff", mo.d_ff));
        mo.max_input_len = static_cast<int>(kv.get_int("max_input_len", mo.max_input_len));
        mo.max_output_len = static_cast<int>(kv.get_int("max_output_len", mo.max_output_len));

        MineConfig& mi = c.mine;
        mi.ret_pool = static_cast<std::size_t>(kv.get_int("ret_pool",
                                                          static_cast<long>(mi.ret_pool)));
        mi.model_samples = static_cast<std::size_t>(
            kv.get_int("model_samples", static_cast<long>(mi.model_samples)));
        mi.temperature = kv.get_double("temperature", mi.temperature);
        mi.full_context = kv.get_bool("full_context", mi.full_context);
        mi.beta_neg = t.beta_neg;
        mi.m = static_cast<std::size_t>(t.m);
        mi.seed = c.seed;

        SynthConfig& s = c.synth;
        s.entities = static_cast<int>(kv.get_int("synth_entities", s.entities));
        s.dialogues = static_cast<int>(kv.get_int("synth_dialogues", s.dialogues));
        s.two_turn_rate = kv.get_double("synth_two_turn_rate", s.two_turn_rate);
        s.seed = c.seed;

        if (c.heldout_fraction < 0.0 || c.heldout_fraction >= 1.0)
            throw ConfigError("heldout_fraction must lie in [0, 1)");
        if (c.ablation_seeds < 1) throw ConfigError("ablation_seeds must be >= 1");
        if (c.max_vocab <= static_cast<std::size_t>(Tokenizer::num_reserved))
            throw ConfigError("max_vocab must exceed the reserved ids");
        if (c.entailment_threshold < 0.0 || c.entailment_threshold > 1.0)
            throw ConfigError("entailment_threshold must lie in [0, 1]");
        return c;
    }

    static PipelineConfig load(const std::string& path) {
        return from_config(KeyValueConfig::load(path), path);
    }

    /// Applies the MIXCL_SEED environment override and re-propagates the seed
    /// into the nested configs.
    void override_seed(std::uint64_t value) {
        seed = value;
        train.seed = value;
        mine.seed = value;
        synth.seed = value;
    }
};

}  // namespace mixcl
