#pragma once

// Token corruption for the denoising language-model objective: the model
// reconstructs a knowledge snippet from a corrupted copy. One corruption mode
// is drawn per call; masking uses the unk id as the mask token. Reserved
// pad / bos / eos ids are never altered or removed.

#include <cmath>
#include <string>
#include <vector>

#include "mixcl/error.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/tokenizer.hpp"

namespace mixcl {

enum class CorruptionMode { mask, erase, infill };

inline const char* corruption_mode_name(CorruptionMode m) {
    switch (m) {
        case CorruptionMode::mask: return "mask";
        case CorruptionMode::erase: return "delete";
        case CorruptionMode::infill: return "infill";
    }
    throw ConfigError("unknown corruption mode");
}

struct CorruptionConfig {
    double mask_weight = 1.0 / 3.0;
    double delete_weight = 1.0 / 3.0;
    double infill_weight = 1.0 / 3.0;
    double mask_rate = 0.15;    // per-token rate for mask / delete
    double infill_mean = 3.0;   // Poisson mean of the infilled span length

    void validate() const {
        if (mask_weight < 0.0 || delete_weight < 0.0 || infill_weight < 0.0)
            throw ConfigError("corruption mode weights must be non-negative");
        const double sum = mask_weight + delete_weight + infill_weight;
        if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError("corruption mode weights must sum to 1");
        if (mask_rate < 0.0 || mask_rate > 1.0)
            throw ConfigError("mask_rate must lie in [0, 1]");
        if (infill_mean <= 0.0) throw ConfigError("infill_mean must be positive");
    }
};

namespace detail {

inline bool protected_id(int id) {
    return id == Tokenizer::pad_id || id == Tokenizer::bos_id || id == Tokenizer::eos_id;
}

}  // namespace detail

/// Applies one corruption mode drawn from the config's mode weights.
/// mask_rate 0 leaves mask / delete inputs unchanged; deletion keeps at
/// least one token so the result is never empty.
inline std::vector<int> corrupt(const std::vector<int>& k_ids, const CorruptionConfig& cfg,
                                Rng& rng) {
    if (k_ids.empty()) throw DataError("cannot corrupt an empty sequence");
    cfg.validate();
    const std::size_t n = k_ids.size();
    const std::size_t mode_index =
        rng.weighted_index({cfg.mask_weight, cfg.delete_weight, cfg.infill_weight});
    const auto mode = static_cast<CorruptionMode>(mode_index);
    std::vector<int> out;
    switch (mode) {
        case CorruptionMode::mask: {
            out = k_ids;
            for (std::size_t i = 0; i < n; ++i)
                if (!detail::protected_id(out[i]) && rng.bernoulli(cfg.mask_rate))
                    out[i] = Tokenizer::unk_id;
            break;
        }
        case CorruptionMode::erase: {
            std::size_t kept = n;
            std::vector<bool> keep(n, true);
            for (std::size_t i = 0; i < n; ++i) {
                if (detail::protected_id(k_ids[i])) continue;
                if (kept > 1 && rng.bernoulli(cfg.mask_rate)) {
                    keep[i] = false;
                    --kept;
                }
            }
            for (std::size_t i = 0; i < n; ++i)
                if (keep[i]) out.push_back(k_ids[i]);
            break;
        }
        case CorruptionMode::infill: {
            // Maximal runs of unprotected positions; the span lives inside one.
            std::vector<std::pair<std::size_t, std::size_t>> runs;  // (start, length)
            std::size_t i = 0;
            while (i < n) {
                if (detail::protected_id(k_ids[i])) {
                    ++i;
                    continue;
                }
                std::size_t j = i;
                while (j < n && !detail::protected_id(k_ids[j])) ++j;
                runs.emplace_back(i, j - i);
                i = j;
            }
            if (runs.empty()) return k_ids;
            std::vector<double> weights;
            weights.reserve(runs.size());
            for (const auto& r : runs) weights.push_back(static_cast<double>(r.second));
            const auto [run_start, run_len] = runs[rng.weighted_index(weights)];
            std::size_t len = static_cast<std::size_t>(rng.poisson(cfg.infill_mean));
            if (len < 1) len = 1;
            if (len > run_len) len = run_len;
            const std::size_t start = run_start + rng.uniform_index(run_len - len + 1);
            out.reserve(n - len + 1);
            out.insert(out.end(), k_ids.begin(), k_ids.begin() + static_cast<std::ptrdiff_t>(start));
            out.push_back(Tokenizer::unk_id);
            out.insert(out.end(), k_ids.begin() + static_cast<std::ptrdiff_t>(start + len),
                       k_ids.end());
            break;
        }
    }
    return out;
}

}  // namespace mixcl
