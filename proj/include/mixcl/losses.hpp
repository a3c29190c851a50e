#pragma once

// Loss family over per-step realized-token probabilities. Every loss returns
// its value together with dL/dp for each step so the model backward can chain
// through the output softmax. Probabilities are clamped to
// [prob_floor, 1 - prob_floor] inside the log terms; a clamped step
// contributes a finite value and a zero gradient. The 1e-7 default floor is
// shared across all losses so their values stay comparable.

#include <cmath>
#include <vector>

#include "mixcl/error.hpp"
#include "mixcl/model.hpp"

namespace mixcl {

constexpr double kProbFloor = 1e-7;

inline double clamp_prob(double p, double floor = kProbFloor) {
    if (p < floor) return floor;
    if (p > 1.0 - floor) return 1.0 - floor;
    return p;
}

inline bool prob_clamped(double p, double floor = kProbFloor) {
    return p < floor || p > 1.0 - floor;
}

struct LossResult {
    double value = 0.0;
    std::vector<double> dprob;  // dL/d(step probability), zero where clamped
};

/// Negative log-likelihood summed over steps: -sum_t ln p_t.
inline LossResult mle_loss(const std::vector<double>& step_probs, double floor = kProbFloor) {
    LossResult r;
    r.dprob.assign(step_probs.size(), 0.0);
    for (std::size_t t = 0; t < step_probs.size(); ++t) {
        const double p = step_probs[t];
        r.value -= std::log(clamp_prob(p, floor));
        if (!prob_clamped(p, floor)) r.dprob[t] = -1.0 / p;
    }
    return r;
}

/// Token-level mixed contrast: -sum_t [sign_t ln p_t + (1-sign_t) ln(1-p_t)].
/// With sign identically 1 this reduces exactly to mle_loss.
inline LossResult mixed_contrast_loss(const std::vector<double>& step_probs,
                                      const std::vector<int>& sign,
                                      double floor = kProbFloor) {
    if (sign.size() != step_probs.size())
        throw DataError("sign vector length does not match the step count");
    LossResult r;
    r.dprob.assign(step_probs.size(), 0.0);
    for (std::size_t t = 0; t < step_probs.size(); ++t) {
        const double p = step_probs[t];
        if (sign[t] != 0) {
            r.value -= std::log(clamp_prob(p, floor));
            if (!prob_clamped(p, floor)) r.dprob[t] = -1.0 / p;
        } else {
            r.value -= std::log(1.0 - clamp_prob(p, floor));
            if (!prob_clamped(p, floor)) r.dprob[t] = 1.0 / (1.0 - p);
        }
    }
    return r;
}

/// Per-step log-probabilities of a target sequence under the model
/// (clamped). Entry t is ln p(target_t | target_<t, input).
template <typename Model>
std::vector<double> sequence_logprob(const Model& model, const std::vector<int>& input_ids,
                                     const std::vector<int>& target_ids,
                                     double floor = kProbFloor) {
    ModelTape tape;
    const std::vector<double>& probs = model.forward(input_ids, target_ids, tape);
    std::vector<double> out(probs.size());
    for (std::size_t t = 0; t < probs.size(); ++t) out[t] = std::log(clamp_prob(probs[t], floor));
    return out;
}

/// Total sequence log-probability and its per-step gradient.
struct SequenceScore {
    double score = 0.0;
    std::vector<double> dscore;  // d score / d p_t
};

inline SequenceScore sequence_score(const std::vector<double>& step_probs,
                                    double floor = kProbFloor) {
    if (step_probs.empty()) throw DataError("sequence score needs at least one step");
    SequenceScore s;
    s.dscore.assign(step_probs.size(), 0.0);
    for (std::size_t t = 0; t < step_probs.size(); ++t) {
        const double p = step_probs[t];
        s.score += std::log(clamp_prob(p, floor));
        if (!prob_clamped(p, floor)) s.dscore[t] = 1.0 / p;
    }
    return s;
}

/// Sentence-level contrast baseline: -ln[exp(s+) / (exp(s+) + sum exp(s-))]
/// over total sequence log-probabilities. dprob[0] aligns with the positive
/// sequence, dprob[1 + j] with negative j.
struct SentenceContrastResult {
    double value = 0.0;
    std::vector<std::vector<double>> dprob;
};

inline SentenceContrastResult sentence_contrastive_loss(
    const std::vector<double>& positive_probs,
    const std::vector<std::vector<double>>& negative_probs, double floor = kProbFloor) {
    if (negative_probs.empty())
        throw DataError("sentence contrast needs at least one negative sequence");
    std::vector<SequenceScore> scores;
    scores.reserve(1 + negative_probs.size());
    scores.push_back(sequence_score(positive_probs, floor));
    for (const auto& probs : negative_probs) scores.push_back(sequence_score(probs, floor));

    double mx = scores[0].score;
    for (const auto& s : scores) mx = std::max(mx, s.score);
    double z = 0.0;
    std::vector<double> w(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        w[i] = std::exp(scores[i].score - mx);
        z += w[i];
    }
    for (double& wi : w) wi /= z;

    SentenceContrastResult r;
    r.value = -std::log(w[0]);
    r.dprob.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double dscore = i == 0 ? w[0] - 1.0 : w[i];
        r.dprob[i].assign(scores[i].dscore.size(), 0.0);
        for (std::size_t t = 0; t < scores[i].dscore.size(); ++t)
            r.dprob[i][t] = dscore * scores[i].dscore[t];
    }
    return r;
}

// ---------------------------------------------------------------------------
// Joint objective weights
// ---------------------------------------------------------------------------

struct LossWeights {
    double alpha1 = 0.0;  // likelihood term
    double alpha2 = 0.0;  // mixed-contrast term
    double alpha3 = 0.0;  // denoising language-model term
};

/// Linear interpolation between the start and end weights over total_steps;
/// steps beyond total_steps clamp to the final weights.
struct LossWeightSchedule {
    LossWeights alpha_init{0.4, 0.3, 0.3};
    LossWeights alpha_final{0.5, 0.5, 0.0};
    std::size_t total_steps = 1;

    LossWeights at(double progress) const {
        const double t = progress < 0.0 ? 0.0 : (progress > 1.0 ? 1.0 : progress);
        return {alpha_init.alpha1 + t * (alpha_final.alpha1 - alpha_init.alpha1),
                alpha_init.alpha2 + t * (alpha_final.alpha2 - alpha_init.alpha2),
                alpha_init.alpha3 + t * (alpha_final.alpha3 - alpha_init.alpha3)};
    }
};

inline LossWeights loss_weights(std::size_t step, const LossWeightSchedule& schedule) {
    if (schedule.total_steps == 0) throw ConfigError("schedule total_steps must be positive");
    return schedule.at(static_cast<double>(step) / static_cast<double>(schedule.total_steps));
}

}  // namespace mixcl
