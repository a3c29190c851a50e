#pragma once

// Trainable encoder-decoder used as the reference generation model. The
// implementation favors auditability over speed: explicit row-major double
// buffers, manual backprop, no external math libraries. Parameters are stored
// as Param (float or double); every intermediate value is computed in double
// so analytic gradients can be checked against central finite differences.
//
// Architecture: pre-norm transformer with parameter-free RMSNorm, multi-head
// attention without biases, GELU feed-forward with biases, a token embedding
// shared by encoder and decoder, separate learned positional embeddings, and
// an untied output projection. All losses consume the per-step probability of
// the realized target token, so backward takes one dL/dp value per step.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixcl/error.hpp"
#include "mixcl/io.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/tokenizer.hpp"

namespace mixcl {

inline constexpr char kCheckpointMagic[] = "MIXCL-CKPT v1";

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int num_heads = 2;
    int enc_layers = 2;
    int dec_layers = 2;
    int d_ff = 256;
    int max_input_len = 128;
    int max_output_len = 64;

    void validate() const {
        if (vocab_size <= Tokenizer::num_reserved)
            throw ConfigError("model vocab_size must exceed the reserved ids");
        if (d_model <= 0 || num_heads <= 0 || d_model % num_heads != 0)
            throw ConfigError("d_model must be a positive multiple of num_heads");
        if (enc_layers < 1 || dec_layers < 1) throw ConfigError("layer counts must be >= 1");
        if (d_ff <= 0) throw ConfigError("d_ff must be positive");
        if (max_input_len < 2 || max_output_len < 2)
            throw ConfigError("sequence length limits must be >= 2");
    }

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size},   {"d_model", d_model},
                {"num_heads", num_heads},     {"enc_layers", enc_layers},
                {"dec_layers", dec_layers},   {"d_ff", d_ff},
                {"max_input_len", max_input_len}, {"max_output_len", max_output_len}};
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.vocab_size = j.value("vocab_size", 0);
        c.d_model = j.value("d_model", 64);
        c.num_heads = j.value("num_heads", 2);
        c.enc_layers = j.value("enc_layers", 2);
        c.dec_layers = j.value("dec_layers", 2);
        c.d_ff = j.value("d_ff", 256);
        c.max_input_len = j.value("max_input_len", 128);
        c.max_output_len = j.value("max_output_len", 64);
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Primitive ops (row-major, double accumulation)
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kNormEps = 1e-6;

// Y[t,o] = sum_i X[t,i] * W[i,o]
template <typename P>
void linear(const double* x, const P* w, double* y, std::size_t t, std::size_t din,
            std::size_t dout) {
    for (std::size_t r = 0; r < t; ++r) {
        double* yr = y + r * dout;
        std::fill(yr, yr + dout, 0.0);
        const double* xr = x + r * din;
        for (std::size_t i = 0; i < din; ++i) {
            const double xi = xr[i];
            const P* wrow = w + i * dout;
            for (std::size_t o = 0; o < dout; ++o) yr[o] += xi * static_cast<double>(wrow[o]);
        }
    }
}

// dX[t,i] += sum_o dY[t,o] * W[i,o]
template <typename P>
void linear_dx(const double* dy, const P* w, double* dx, std::size_t t, std::size_t din,
               std::size_t dout) {
    for (std::size_t r = 0; r < t; ++r) {
        const double* dyr = dy + r * dout;
        double* dxr = dx + r * din;
        for (std::size_t i = 0; i < din; ++i) {
            const P* wrow = w + i * dout;
            double acc = 0.0;
            for (std::size_t o = 0; o < dout; ++o) acc += dyr[o] * static_cast<double>(wrow[o]);
            dxr[i] += acc;
        }
    }
}

// dW[i,o] += sum_t X[t,i] * dY[t,o]
inline void linear_dw(const double* x, const double* dy, double* dw, std::size_t t,
                      std::size_t din, std::size_t dout) {
    for (std::size_t r = 0; r < t; ++r) {
        const double* xr = x + r * din;
        const double* dyr = dy + r * dout;
        for (std::size_t i = 0; i < din; ++i) {
            const double xi = xr[i];
            if (xi == 0.0) continue;
            double* dwrow = dw + i * dout;
            for (std::size_t o = 0; o < dout; ++o) dwrow[o] += xi * dyr[o];
        }
    }
}

// y = x / sqrt(mean(x^2) + eps), per row; rms holds the divisor.
inline void rmsnorm(const double* x, double* y, double* rms, std::size_t t, std::size_t d) {
    for (std::size_t r = 0; r < t; ++r) {
        const double* xr = x + r * d;
        double m = 0.0;
        for (std::size_t i = 0; i < d; ++i) m += xr[i] * xr[i];
        const double divisor = std::sqrt(m / static_cast<double>(d) + kNormEps);
        rms[r] = divisor;
        double* yr = y + r * d;
        for (std::size_t i = 0; i < d; ++i) yr[i] = xr[i] / divisor;
    }
}

// dx[i] += (dy[i] - y[i] * dot(dy, y) / d) / rms
inline void rmsnorm_backward(const double* y, const double* rms, const double* dy, double* dx,
                             std::size_t t, std::size_t d) {
    for (std::size_t r = 0; r < t; ++r) {
        const double* yr = y + r * d;
        const double* dyr = dy + r * d;
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += dyr[i] * yr[i];
        dot /= static_cast<double>(d);
        double* dxr = dx + r * d;
        for (std::size_t i = 0; i < d; ++i) dxr[i] += (dyr[i] - yr[i] * dot) / rms[r];
    }
}

// tanh-form GELU; smooth everywhere so finite differences stay well behaved.
inline double gelu(double x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    const double u = k * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
    constexpr double k = 0.7978845608028654;
    const double u = k * (x + 0.044715 * x * x * x);
    const double th = std::tanh(u);
    const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

inline void softmax_row(double* x, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        z += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) x[i] /= z;
}

struct NormCache {
    std::vector<double> normed;  // t x d
    std::vector<double> rms;     // t
};

struct AttnCache {
    std::vector<double> q, k, v;  // t x d
    std::vector<double> attn;     // heads x tq x tk, masked entries stay 0
    std::vector<double> concat;   // tq x d, pre output projection
};

struct FfnCache {
    std::vector<double> pre, act;  // t x d_ff
};

template <typename P>
void attention_forward(const double* xq, const double* xkv, std::size_t tq, std::size_t tk,
                       const P* wq, const P* wk, const P* wv, const P* wo, std::size_t d,
                       std::size_t heads, bool causal, AttnCache& c, double* out) {
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    c.q.resize(tq * d);
    c.k.resize(tk * d);
    c.v.resize(tk * d);
    linear(xq, wq, c.q.data(), tq, d, d);
    linear(xkv, wk, c.k.data(), tk, d, d);
    linear(xkv, wv, c.v.data(), tk, d, d);
    c.attn.assign(heads * tq * tk, 0.0);
    c.concat.assign(tq * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t col = h * dh;
        for (std::size_t i = 0; i < tq; ++i) {
            const std::size_t limit = causal ? i + 1 : tk;
            double* arow = &c.attn[(h * tq + i) * tk];
            const double* qi = &c.q[i * d + col];
            for (std::size_t j = 0; j < limit; ++j) {
                const double* kj = &c.k[j * d + col];
                double s = 0.0;
                for (std::size_t cc = 0; cc < dh; ++cc) s += qi[cc] * kj[cc];
                arow[j] = s * scale;
            }
            softmax_row(arow, limit);
            double* orow = &c.concat[i * d + col];
            for (std::size_t j = 0; j < limit; ++j) {
                const double a = arow[j];
                const double* vj = &c.v[j * d + col];
                for (std::size_t cc = 0; cc < dh; ++cc) orow[cc] += a * vj[cc];
            }
        }
    }
    linear(c.concat.data(), wo, out, tq, d, d);
}

// dxq and dxkv accumulate; they may alias for self-attention.
template <typename P>
void attention_backward(const AttnCache& c, const double* xq, const double* xkv, std::size_t tq,
                        std::size_t tk, const P* wq, const P* wk, const P* wv, const P* wo,
                        std::size_t d, std::size_t heads, bool causal, const double* dout,
                        double* dxq, double* dxkv, double* gwq, double* gwk, double* gwv,
                        double* gwo) {
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dconcat(tq * d, 0.0);
    linear_dx(dout, wo, dconcat.data(), tq, d, d);
    linear_dw(c.concat.data(), dout, gwo, tq, d, d);
    std::vector<double> dq(tq * d, 0.0), dk(tk * d, 0.0), dv(tk * d, 0.0);
    std::vector<double> da(tk), ds(tk);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t col = h * dh;
        for (std::size_t i = 0; i < tq; ++i) {
            const std::size_t limit = causal ? i + 1 : tk;
            const double* arow = &c.attn[(h * tq + i) * tk];
            const double* doi = &dconcat[i * d + col];
            for (std::size_t j = 0; j < limit; ++j) {
                const double* vj = &c.v[j * d + col];
                double acc = 0.0;
                for (std::size_t cc = 0; cc < dh; ++cc) acc += doi[cc] * vj[cc];
                da[j] = acc;
                double* dvj = &dv[j * d + col];
                const double a = arow[j];
                for (std::size_t cc = 0; cc < dh; ++cc) dvj[cc] += a * doi[cc];
            }
            double dot = 0.0;
            for (std::size_t j = 0; j < limit; ++j) dot += da[j] * arow[j];
            for (std::size_t j = 0; j < limit; ++j) ds[j] = arow[j] * (da[j] - dot);
            double* dqi = &dq[i * d + col];
            const double* qi = &c.q[i * d + col];
            for (std::size_t j = 0; j < limit; ++j) {
                const double s = ds[j] * scale;
                const double* kj = &c.k[j * d + col];
                double* dkj = &dk[j * d + col];
                for (std::size_t cc = 0; cc < dh; ++cc) {
                    dqi[cc] += s * kj[cc];
                    dkj[cc] += s * qi[cc];
                }
            }
        }
    }
    linear_dx(dq.data(), wq, dxq, tq, d, d);
    linear_dw(xq, dq.data(), gwq, tq, d, d);
    linear_dx(dk.data(), wk, dxkv, tk, d, d);
    linear_dw(xkv, dk.data(), gwk, tk, d, d);
    linear_dx(dv.data(), wv, dxkv, tk, d, d);
    linear_dw(xkv, dv.data(), gwv, tk, d, d);
}

template <typename P>
void ffn_forward(const double* x, std::size_t t, const P* w1, const P* b1, const P* w2,
                 const P* b2, std::size_t d, std::size_t dff, FfnCache& c, double* out) {
    c.pre.resize(t * dff);
    c.act.resize(t * dff);
    linear(x, w1, c.pre.data(), t, d, dff);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t j = 0; j < dff; ++j) c.pre[r * dff + j] += static_cast<double>(b1[j]);
    for (std::size_t i = 0; i < t * dff; ++i) c.act[i] = gelu(c.pre[i]);
    linear(c.act.data(), w2, out, t, dff, d);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] += static_cast<double>(b2[j]);
}

template <typename P>
void ffn_backward(const FfnCache& c, const double* x, std::size_t t, const P* w1, const P* w2,
                  std::size_t d, std::size_t dff, const double* dout, double* dx, double* gw1,
                  double* gb1, double* gw2, double* gb2) {
    std::vector<double> dact(t * dff, 0.0), dpre(t * dff);
    linear_dx(dout, w2, dact.data(), t, dff, d);
    linear_dw(c.act.data(), dout, gw2, t, dff, d);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t j = 0; j < d; ++j) gb2[j] += dout[r * d + j];
    for (std::size_t i = 0; i < t * dff; ++i) dpre[i] = dact[i] * gelu_grad(c.pre[i]);
    linear_dx(dpre.data(), w1, dx, t, d, dff);
    linear_dw(x, dpre.data(), gw1, t, d, dff);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t j = 0; j < dff; ++j) gb1[j] += dpre[r * dff + j];
}

struct EncLayerCache {
    NormCache ln1;
    AttnCache attn;
    NormCache ln2;
    FfnCache ffn;
};

struct DecLayerCache {
    NormCache ln1;
    AttnCache self_attn;
    NormCache ln2;
    AttnCache cross_attn;
    NormCache ln3;
    FfnCache ffn;
};

}  // namespace detail

struct EncoderCache {
    std::vector<int> input_ids;
    std::vector<detail::EncLayerCache> layers;
    detail::NormCache final;  // final.normed is the encoder output

    const std::vector<double>& output() const { return final.normed; }
};

struct DecoderCache {
    std::vector<int> dec_in;   // bos followed by targets[:-1]
    std::vector<int> targets;
    std::vector<detail::DecLayerCache> layers;
    detail::NormCache final;
    std::vector<double> probs;       // t x vocab softmax rows
    std::vector<double> step_probs;  // probability of each realized target token
};

/// Forward tape for one (input, target) pair.
struct ModelTape {
    EncoderCache enc;
    DecoderCache dec;
};

/// Incremental decoding state: per-layer key/value caches.
struct DecodeSession {
    std::vector<double> enc_out;
    std::size_t t_in = 0;
    std::vector<std::vector<double>> self_k, self_v;    // grown one row per step
    std::vector<std::vector<double>> cross_k, cross_v;  // fixed, from the encoder output
    std::size_t pos = 0;
};

struct ParamSegment {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

template <typename Param = float>
class ReferenceModel {
public:
    using param_type = Param;

    explicit ReferenceModel(ModelConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto v = static_cast<std::size_t>(cfg_.vocab_size);
        const auto ff = static_cast<std::size_t>(cfg_.d_ff);
        tok_emb_ = alloc("tok_emb", v * d);
        pos_in_ = alloc("pos_in", static_cast<std::size_t>(cfg_.max_input_len) * d);
        pos_out_ = alloc("pos_out", static_cast<std::size_t>(cfg_.max_output_len) * d);
        for (int l = 0; l < cfg_.enc_layers; ++l) {
            const std::string p = "enc" + std::to_string(l);
            EncOff off;
            off.attn = alloc_attn(p + ".attn", d);
            off.ffn = alloc_ffn(p + ".ffn", d, ff);
            enc_off_.push_back(off);
        }
        for (int l = 0; l < cfg_.dec_layers; ++l) {
            const std::string p = "dec" + std::to_string(l);
            DecOff off;
            off.self_attn = alloc_attn(p + ".self", d);
            off.cross_attn = alloc_attn(p + ".cross", d);
            off.ffn = alloc_ffn(p + ".ffn", d, ff);
            dec_off_.push_back(off);
        }
        lm_head_ = alloc("lm_head", d * v);
        params_.assign(total_, Param(0));
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t num_params() const { return total_; }
    std::vector<Param>& parameters() { return params_; }
    const std::vector<Param>& parameters() const { return params_; }
    const std::vector<ParamSegment>& segments() const { return segments_; }

    /// Biases start at zero, everything else N(0, 0.02^2).
    void init_params(std::uint64_t seed) {
        Rng rng(mix_seed(seed, "model-init"));
        for (const auto& seg : segments_) {
            const bool bias = seg.name.ends_with(".b1") || seg.name.ends_with(".b2");
            for (std::size_t i = 0; i < seg.size; ++i)
                params_[seg.offset + i] = bias ? Param(0) : Param(rng.normal() * 0.02);
        }
    }

    // -- teacher-forced forward / backward --------------------------------

    void encode(const std::vector<int>& input_ids, EncoderCache& enc) const {
        check_ids(input_ids, cfg_.max_input_len, "input");
        enc.input_ids = input_ids;
        const std::size_t t = input_ids.size();
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        std::vector<double> x(t * d);
        embed(input_ids, pos_in_, x.data());
        enc.layers.assign(static_cast<std::size_t>(cfg_.enc_layers), {});
        for (int l = 0; l < cfg_.enc_layers; ++l) enc_layer_forward(x, t, enc.layers[l], enc_off_[l]);
        enc.final.normed.resize(t * d);
        enc.final.rms.resize(t);
        detail::rmsnorm(x.data(), enc.final.normed.data(), enc.final.rms.data(), t, d);
    }

    /// Returns the probability of each target token under teacher forcing.
    const std::vector<double>& decode_forward(const EncoderCache& enc,
                                              const std::vector<int>& targets,
                                              DecoderCache& dec) const {
        check_ids(targets, cfg_.max_output_len, "target");
        const std::size_t t = targets.size();
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto v = static_cast<std::size_t>(cfg_.vocab_size);
        dec.targets = targets;
        dec.dec_in.resize(t);
        dec.dec_in[0] = Tokenizer::bos_id;
        for (std::size_t i = 1; i < t; ++i) dec.dec_in[i] = targets[i - 1];
        std::vector<double> x(t * d);
        embed(dec.dec_in, pos_out_, x.data());
        dec.layers.assign(static_cast<std::size_t>(cfg_.dec_layers), {});
        const std::size_t t_in = enc.input_ids.size();
        for (int l = 0; l < cfg_.dec_layers; ++l)
            dec_layer_forward(x, t, enc.output().data(), t_in, dec.layers[l], dec_off_[l]);
        dec.final.normed.resize(t * d);
        dec.final.rms.resize(t);
        detail::rmsnorm(x.data(), dec.final.normed.data(), dec.final.rms.data(), t, d);
        dec.probs.resize(t * v);
        detail::linear(dec.final.normed.data(), p(lm_head_), dec.probs.data(), t, d, v);
        dec.step_probs.resize(t);
        for (std::size_t r = 0; r < t; ++r) {
            detail::softmax_row(&dec.probs[r * v], v);
            dec.step_probs[r] = dec.probs[r * v + static_cast<std::size_t>(targets[r])];
        }
        return dec.step_probs;
    }

    const std::vector<double>& forward(const std::vector<int>& input_ids,
                                       const std::vector<int>& targets, ModelTape& tape) const {
        encode(input_ids, tape.enc);
        return decode_forward(tape.enc, targets, tape.dec);
    }

    /// dprob[s] is dL/d(step_probs[s]). Parameter gradients accumulate into
    /// grad; the gradient w.r.t. the encoder output accumulates into d_enc so
    /// several decoder passes can share one encoder pass.
    void backward_decoder(const EncoderCache& enc, const DecoderCache& dec,
                          const std::vector<double>& dprob, double* grad, double* d_enc) const {
        const std::size_t t = dec.targets.size();
        if (dprob.size() != t) throw DataError("dprob size does not match target length");
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto v = static_cast<std::size_t>(cfg_.vocab_size);
        std::vector<double> dh(t * d, 0.0);
        std::vector<double> dlogits(v);
        const double* h = dec.final.normed.data();
        for (std::size_t s = 0; s < t; ++s) {
            const double g = dprob[s];
            if (g == 0.0) continue;
            const double* prow = &dec.probs[s * v];
            const auto target = static_cast<std::size_t>(dec.targets[s]);
            const double pj = prow[target];
            for (std::size_t k = 0; k < v; ++k)
                dlogits[k] = g * pj * ((k == target ? 1.0 : 0.0) - prow[k]);
            const double* hrow = h + s * d;
            double* dhrow = &dh[s * d];
            for (std::size_t i = 0; i < d; ++i) {
                const P* wrow = p(lm_head_) + i * v;
                double acc = 0.0;
                double* grow = grad + lm_head_ + i * v;
                const double hi = hrow[i];
                for (std::size_t k = 0; k < v; ++k) {
                    acc += dlogits[k] * static_cast<double>(wrow[k]);
                    grow[k] += hi * dlogits[k];
                }
                dhrow[i] += acc;
            }
        }
        std::vector<double> dx(t * d, 0.0);
        detail::rmsnorm_backward(dec.final.normed.data(), dec.final.rms.data(), dh.data(),
                                 dx.data(), t, d);
        const std::size_t t_in = enc.input_ids.size();
        for (int l = cfg_.dec_layers - 1; l >= 0; --l)
            dec_layer_backward(dec.layers[l], dec_off_[l], dx, t, enc.output().data(), t_in,
                               d_enc, grad);
        embed_backward(dec.dec_in, pos_out_, dx.data(), grad);
    }

    void backward_encoder(const EncoderCache& enc, const double* d_enc, double* grad) const {
        const std::size_t t = enc.input_ids.size();
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        std::vector<double> dx(t * d, 0.0);
        detail::rmsnorm_backward(enc.final.normed.data(), enc.final.rms.data(), d_enc, dx.data(),
                                 t, d);
        for (int l = cfg_.enc_layers - 1; l >= 0; --l)
            enc_layer_backward(enc.layers[l], enc_off_[l], dx, t, grad);
        embed_backward(enc.input_ids, pos_in_, dx.data(), grad);
    }

    void backward(const ModelTape& tape, const std::vector<double>& dprob,
                  std::vector<double>& grad) const {
        if (grad.size() != total_) throw DataError("gradient buffer size mismatch");
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        std::vector<double> d_enc(tape.enc.input_ids.size() * d, 0.0);
        backward_decoder(tape.enc, tape.dec, dprob, grad.data(), d_enc.data());
        backward_encoder(tape.enc, d_enc.data(), grad.data());
    }

    // -- incremental decoding ----------------------------------------------

    DecodeSession begin_decode(const std::vector<int>& input_ids) const {
        EncoderCache enc;
        encode(input_ids, enc);
        return begin_decode(enc);
    }

    DecodeSession begin_decode(const EncoderCache& enc) const {
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        DecodeSession s;
        s.enc_out = enc.output();
        s.t_in = enc.input_ids.size();
        const auto layers = static_cast<std::size_t>(cfg_.dec_layers);
        s.self_k.assign(layers, {});
        s.self_v.assign(layers, {});
        s.cross_k.assign(layers, std::vector<double>(s.t_in * d));
        s.cross_v.assign(layers, std::vector<double>(s.t_in * d));
        for (std::size_t l = 0; l < layers; ++l) {
            detail::linear(s.enc_out.data(), p(dec_off_[l].cross_attn.wk), s.cross_k[l].data(),
                           s.t_in, d, d);
            detail::linear(s.enc_out.data(), p(dec_off_[l].cross_attn.wv), s.cross_v[l].data(),
                           s.t_in, d, d);
        }
        return s;
    }

    /// Feeds one decoder token (bos first) and returns the next-token
    /// distribution. Matches teacher-forced forward exactly.
    std::vector<double> decode_step(DecodeSession& s, int token) const {
        if (s.pos >= static_cast<std::size_t>(cfg_.max_output_len))
            throw DataError("decode exceeded max_output_len");
        if (token < 0 || token >= cfg_.vocab_size) throw DataError("decode token out of range");
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto v = static_cast<std::size_t>(cfg_.vocab_size);
        const auto heads = static_cast<std::size_t>(cfg_.num_heads);
        const std::size_t dh = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> x(d), n(d), rms(1), row(d), ctx(d), proj(d);
        for (std::size_t i = 0; i < d; ++i)
            x[i] = static_cast<double>(params_[tok_emb_ + static_cast<std::size_t>(token) * d + i]) +
                   static_cast<double>(params_[pos_out_ + s.pos * d + i]);
        for (int l = 0; l < cfg_.dec_layers; ++l) {
            const DecOff& off = dec_off_[static_cast<std::size_t>(l)];
            auto& sk = s.self_k[static_cast<std::size_t>(l)];
            auto& sv = s.self_v[static_cast<std::size_t>(l)];
            // self-attention over the grown cache (causality is implicit)
            detail::rmsnorm(x.data(), n.data(), rms.data(), 1, d);
            detail::linear(n.data(), p(off.self_attn.wq), row.data(), 1, d, d);
            const std::size_t base = sk.size();
            sk.resize(base + d);
            sv.resize(base + d);
            detail::linear(n.data(), p(off.self_attn.wk), sk.data() + base, 1, d, d);
            detail::linear(n.data(), p(off.self_attn.wv), sv.data() + base, 1, d, d);
            attend_row(row.data(), sk.data(), sv.data(), s.pos + 1, d, heads, scale, ctx.data());
            detail::linear(ctx.data(), p(off.self_attn.wo), proj.data(), 1, d, d);
            for (std::size_t i = 0; i < d; ++i) x[i] += proj[i];
            // cross-attention over the fixed encoder cache
            detail::rmsnorm(x.data(), n.data(), rms.data(), 1, d);
            detail::linear(n.data(), p(off.cross_attn.wq), row.data(), 1, d, d);
            attend_row(row.data(), s.cross_k[static_cast<std::size_t>(l)].data(),
                       s.cross_v[static_cast<std::size_t>(l)].data(), s.t_in, d, heads, scale,
                       ctx.data());
            detail::linear(ctx.data(), p(off.cross_attn.wo), proj.data(), 1, d, d);
            for (std::size_t i = 0; i < d; ++i) x[i] += proj[i];
            // feed-forward
            detail::rmsnorm(x.data(), n.data(), rms.data(), 1, d);
            detail::FfnCache fc;
            detail::ffn_forward(n.data(), 1, p(off.ffn.w1), p(off.ffn.b1), p(off.ffn.w2),
                                p(off.ffn.b2), d, static_cast<std::size_t>(cfg_.d_ff), fc,
                                proj.data());
            for (std::size_t i = 0; i < d; ++i) x[i] += proj[i];
        }
        detail::rmsnorm(x.data(), n.data(), rms.data(), 1, d);
        std::vector<double> probs(v);
        detail::linear(n.data(), p(lm_head_), probs.data(), 1, d, v);
        detail::softmax_row(probs.data(), v);
        ++s.pos;
        return probs;
    }

    /// Greedy continuation; stops after emitting eos or at the length cap.
    /// Ties break toward the lowest token id.
    std::vector<int> greedy_decode(const std::vector<int>& input_ids,
                                   std::size_t max_new_tokens = 0) const {
        DecodeSession s = begin_decode(input_ids);
        return continue_greedy(s, max_new_tokens);
    }

    std::vector<int> greedy_decode(const EncoderCache& enc, std::size_t max_new_tokens = 0) const {
        DecodeSession s = begin_decode(enc);
        return continue_greedy(s, max_new_tokens);
    }

    /// Ancestral sampling from the per-step distribution, with optional
    /// temperature applied as p^(1/temperature) renormalized. The terminal
    /// eos (when reached) is part of the returned sequence.
    std::vector<int> sample_decode(const std::vector<int>& input_ids, Rng& rng,
                                   double temperature = 1.0,
                                   std::size_t max_new_tokens = 0) const {
        if (temperature <= 0.0) throw ConfigError("sampling temperature must be positive");
        DecodeSession s = begin_decode(input_ids);
        const std::size_t cap = length_cap(max_new_tokens);
        std::vector<int> out;
        int tok = Tokenizer::bos_id;
        while (s.pos < cap) {
            std::vector<double> probs = decode_step(s, tok);
            if (temperature != 1.0) {
                const double inv = 1.0 / temperature;
                for (double& pv : probs) pv = pv > 0.0 ? std::pow(pv, inv) : 0.0;
            }
            const int next = static_cast<int>(rng.weighted_index(probs));
            out.push_back(next);
            if (next == Tokenizer::eos_id) break;
            tok = next;
        }
        return out;
    }

    /// Distribution over the token following the given target prefix (empty
    /// prefix means the first generated token).
    std::vector<double> step_distribution(const std::vector<int>& input_ids,
                                          const std::vector<int>& prefix_ids) const {
        DecodeSession s = begin_decode(input_ids);
        std::vector<double> probs = decode_step(s, Tokenizer::bos_id);
        for (int id : prefix_ids) probs = decode_step(s, id);
        return probs;
    }

private:
    using P = Param;

    struct AttnOff {
        std::size_t wq = 0, wk = 0, wv = 0, wo = 0;
    };
    struct FfnOff {
        std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
    };
    struct EncOff {
        AttnOff attn;
        FfnOff ffn;
    };
    struct DecOff {
        AttnOff self_attn;
        AttnOff cross_attn;
        FfnOff ffn;
    };

    std::size_t alloc(const std::string& name, std::size_t n) {
        segments_.push_back({name, total_, n});
        const std::size_t at = total_;
        total_ += n;
        return at;
    }

    AttnOff alloc_attn(const std::string& prefix, std::size_t d) {
        AttnOff a;
        a.wq = alloc(prefix + ".wq", d * d);
        a.wk = alloc(prefix + ".wk", d * d);
        a.wv = alloc(prefix + ".wv", d * d);
        a.wo = alloc(prefix + ".wo", d * d);
        return a;
    }

    FfnOff alloc_ffn(const std::string& prefix, std::size_t d, std::size_t ff) {
        FfnOff f;
        f.w1 = alloc(prefix + ".w1", d * ff);
        f.b1 = alloc(prefix + ".b1", ff);
        f.w2 = alloc(prefix + ".w2", ff * d);
        f.b2 = alloc(prefix + ".b2", d);
        return f;
    }

    const P* p(std::size_t off) const { return params_.data() + off; }

    void check_ids(const std::vector<int>& ids, int max_len, const char* what) const {
        if (ids.empty()) throw DataError(std::string(what) + " sequence is empty");
        if (ids.size() > static_cast<std::size_t>(max_len))
            throw DataError(std::string(what) + " sequence exceeds the model length limit");
        for (int id : ids)
            if (id < 0 || id >= cfg_.vocab_size)
                throw DataError(std::string(what) + " token id out of vocabulary range");
    }

    void embed(const std::vector<int>& ids, std::size_t pos_table, double* x) const {
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const std::size_t tok = tok_emb_ + static_cast<std::size_t>(ids[r]) * d;
            const std::size_t pos = pos_table + r * d;
            for (std::size_t i = 0; i < d; ++i)
                x[r * d + i] = static_cast<double>(params_[tok + i]) +
                               static_cast<double>(params_[pos + i]);
        }
    }

    void embed_backward(const std::vector<int>& ids, std::size_t pos_table, const double* dx,
                        double* grad) const {
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        for (std::size_t r = 0; r < ids.size(); ++r) {
            double* gtok = grad + tok_emb_ + static_cast<std::size_t>(ids[r]) * d;
            double* gpos = grad + pos_table + r * d;
            const double* dxr = dx + r * d;
            for (std::size_t i = 0; i < d; ++i) {
                gtok[i] += dxr[i];
                gpos[i] += dxr[i];
            }
        }
    }

    void enc_layer_forward(std::vector<double>& x, std::size_t t, detail::EncLayerCache& c,
                           const EncOff& off) const {
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto heads = static_cast<std::size_t>(cfg_.num_heads);
        std::vector<double> sub(t * d);
        c.ln1.normed.resize(t * d);
        c.ln1.rms.resize(t);
        detail::rmsnorm(x.data(), c.ln1.normed.data(), c.ln1.rms.data(), t, d);
        detail::attention_forward(c.ln1.normed.data(), c.ln1.normed.data(), t, t, p(off.attn.wq),
                                  p(off.attn.wk), p(off.attn.wv), p(off.attn.wo), d, heads,
                                  /*causal=*/false, c.attn, sub.data());
        for (std::size_t i = 0; i < t * d; ++i) x[i] += sub[i];
        c.ln2.normed.resize(t * d);
        c.ln2.rms.resize(t);
        detail::rmsnorm(x.data(), c.ln2.normed.data(), c.ln2.rms.data(), t, d);
        detail::ffn_forward(c.ln2.normed.data(), t, p(off.ffn.w1), p(off.ffn.b1), p(off.ffn.w2),
                            p(off.ffn.b2), d, static_cast<std::size_t>(cfg_.d_ff), c.ffn,
                            sub.data());
        for (std::size_t i = 0; i < t * d; ++i) x[i] += sub[i];
    }

    void enc_layer_backward(const detail::EncLayerCache& c, const EncOff& off,
                            std::vector<double>& dx, std::size_t t, double* grad) const {
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto heads = static_cast<std::size_t>(cfg_.num_heads);
        std::vector<double> dn(t * d, 0.0);
        detail::ffn_backward(c.ffn, c.ln2.normed.data(), t, p(off.ffn.w1), p(off.ffn.w2), d,
                             static_cast<std::size_t>(cfg_.d_ff), dx.data(), dn.data(),
                             grad + off.ffn.w1, grad + off.ffn.b1, grad + off.ffn.w2,
                             grad + off.ffn.b2);
        detail::rmsnorm_backward(c.ln2.normed.data(), c.ln2.rms.data(), dn.data(), dx.data(), t, d);
        std::fill(dn.begin(), dn.end(), 0.0);
        detail::attention_backward(c.attn, c.ln1.normed.data(), c.ln1.normed.data(), t, t,
                                   p(off.attn.wq), p(off.attn.wk), p(off.attn.wv), p(off.attn.wo),
                                   d, heads, /*causal=*/false, dx.data(), dn.data(), dn.data(),
                                   grad + off.attn.wq, grad + off.attn.wk, grad + off.attn.wv,
                                   grad + off.attn.wo);
        detail::rmsnorm_backward(c.ln1.normed.data(), c.ln1.rms.data(), dn.data(), dx.data(), t, d);
    }

    void dec_layer_forward(std::vector<double>& x, std::size_t t, const double* enc_out,
                           std::size_t t_in, detail::DecLayerCache& c, const DecOff& off) const {
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto heads = static_cast<std::size_t>(cfg_.num_heads);
        std::vector<double> sub(t * d);
        c.ln1.normed.resize(t * d);
        c.ln1.rms.resize(t);
        detail::rmsnorm(x.data(), c.ln1.normed.data(), c.ln1.rms.data(), t, d);
        detail::attention_forward(c.ln1.normed.data(), c.ln1.normed.data(), t, t,
                                  p(off.self_attn.wq), p(off.self_attn.wk), p(off.self_attn.wv),
                                  p(off.self_attn.wo), d, heads, /*causal=*/true, c.self_attn,
                                  sub.data());
        for (std::size_t i = 0; i < t * d; ++i) x[i] += sub[i];
        c.ln2.normed.resize(t * d);
        c.ln2.rms.resize(t);
        detail::rmsnorm(x.data(), c.ln2.normed.data(), c.ln2.rms.data(), t, d);
        detail::attention_forward(c.ln2.normed.data(), enc_out, t, t_in, p(off.cross_attn.wq),
                                  p(off.cross_attn.wk), p(off.cross_attn.wv), p(off.cross_attn.wo),
                                  d, heads, /*causal=*/false, c.cross_attn, sub.data());
        for (std::size_t i = 0; i < t * d; ++i) x[i] += sub[i];
        c.ln3.normed.resize(t * d);
        c.ln3.rms.resize(t);
        detail::rmsnorm(x.data(), c.ln3.normed.data(), c.ln3.rms.data(), t, d);
        detail::ffn_forward(c.ln3.normed.data(), t, p(off.ffn.w1), p(off.ffn.b1), p(off.ffn.w2),
                            p(off.ffn.b2), d, static_cast<std::size_t>(cfg_.d_ff), c.ffn,
                            sub.data());
        for (std::size_t i = 0; i < t * d; ++i) x[i] += sub[i];
    }

    void dec_layer_backward(const detail::DecLayerCache& c, const DecOff& off,
                            std::vector<double>& dx, std::size_t t, const double* enc_out,
                            std::size_t t_in, double* d_enc, double* grad) const {
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto heads = static_cast<std::size_t>(cfg_.num_heads);
        std::vector<double> dn(t * d, 0.0);
        detail::ffn_backward(c.ffn, c.ln3.normed.data(), t, p(off.ffn.w1), p(off.ffn.w2), d,
                             static_cast<std::size_t>(cfg_.d_ff), dx.data(), dn.data(),
                             grad + off.ffn.w1, grad + off.ffn.b1, grad + off.ffn.w2,
                             grad + off.ffn.b2);
        detail::rmsnorm_backward(c.ln3.normed.data(), c.ln3.rms.data(), dn.data(), dx.data(), t, d);
        std::fill(dn.begin(), dn.end(), 0.0);
        detail::attention_backward(c.cross_attn, c.ln2.normed.data(), enc_out, t, t_in,
                                   p(off.cross_attn.wq), p(off.cross_attn.wk),
                                   p(off.cross_attn.wv), p(off.cross_attn.wo), d, heads,
                                   /*causal=*/false, dx.data(), dn.data(), d_enc,
                                   grad + off.cross_attn.wq, grad + off.cross_attn.wk,
                                   grad + off.cross_attn.wv, grad + off.cross_attn.wo);
        detail::rmsnorm_backward(c.ln2.normed.data(), c.ln2.rms.data(), dn.data(), dx.data(), t, d);
        std::fill(dn.begin(), dn.end(), 0.0);
        detail::attention_backward(c.self_attn, c.ln1.normed.data(), c.ln1.normed.data(), t, t,
                                   p(off.self_attn.wq), p(off.self_attn.wk), p(off.self_attn.wv),
                                   p(off.self_attn.wo), d, heads, /*causal=*/true, dx.data(),
                                   dn.data(), dn.data(), grad + off.self_attn.wq,
                                   grad + off.self_attn.wk, grad + off.self_attn.wv,
                                   grad + off.self_attn.wo);
        detail::rmsnorm_backward(c.ln1.normed.data(), c.ln1.rms.data(), dn.data(), dx.data(), t, d);
    }

    // Single query row against a cached key/value block.
    static void attend_row(const double* q, const double* k, const double* v, std::size_t tk,
                           std::size_t d, std::size_t heads, double scale, double* out) {
        const std::size_t dh = d / heads;
        std::vector<double> scores(tk);
        std::fill(out, out + d, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t col = h * dh;
            for (std::size_t j = 0; j < tk; ++j) {
                const double* kj = k + j * d + col;
                double s = 0.0;
                for (std::size_t cc = 0; cc < dh; ++cc) s += q[col + cc] * kj[cc];
                scores[j] = s * scale;
            }
            detail::softmax_row(scores.data(), tk);
            for (std::size_t j = 0; j < tk; ++j) {
                const double a = scores[j];
                const double* vj = v + j * d + col;
                for (std::size_t cc = 0; cc < dh; ++cc) out[col + cc] += a * vj[cc];
            }
        }
    }

    std::size_t length_cap(std::size_t max_new_tokens) const {
        const auto limit = static_cast<std::size_t>(cfg_.max_output_len);
        return max_new_tokens == 0 ? limit : std::min(max_new_tokens, limit);
    }

    // Emits tokens until eos (included) or the cap; ties break to the lowest
    // token id via max_element's first-maximum rule.
    std::vector<int> continue_greedy(DecodeSession& s, std::size_t max_new_tokens) const {
        const std::size_t cap = length_cap(max_new_tokens);
        std::vector<int> out;
        int tok = Tokenizer::bos_id;
        while (s.pos < cap) {
            const std::vector<double> probs = decode_step(s, tok);
            const auto best =
                static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
            out.push_back(best);
            if (best == Tokenizer::eos_id) break;
            tok = best;
        }
        return out;
    }

    ModelConfig cfg_;
    std::vector<Param> params_;
    std::size_t tok_emb_ = 0, pos_in_ = 0, pos_out_ = 0, lm_head_ = 0;
    std::vector<EncOff> enc_off_;
    std::vector<DecOff> dec_off_;
    std::size_t total_ = 0;
    std::vector<ParamSegment> segments_;
};

// ---------------------------------------------------------------------------
// Checkpoint serialization: magic line, provenance line, one JSON line with
// the architecture, then num_params little-endian float32 values.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_f32_le(std::ostream& out, float f) {
    const auto b = std::bit_cast<std::uint32_t>(f);
    const char buf[4] = {static_cast<char>(b & 0xff), static_cast<char>((b >> 8) & 0xff),
                         static_cast<char>((b >> 16) & 0xff), static_cast<char>((b >> 24) & 0xff)};
    out.write(buf, 4);
}

inline float get_f32_le(std::istream& in, const std::string& path) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw DataError(path + ": truncated parameter block");
    const std::uint32_t b = static_cast<std::uint32_t>(buf[0]) |
                            (static_cast<std::uint32_t>(buf[1]) << 8) |
                            (static_cast<std::uint32_t>(buf[2]) << 16) |
                            (static_cast<std::uint32_t>(buf[3]) << 24);
    return std::bit_cast<float>(b);
}

}  // namespace detail

template <typename Param>
void save_checkpoint(const ReferenceModel<Param>& model, const std::string& path,
                     const Provenance& prov,
                     const nlohmann::json& extra = nlohmann::json::object()) {
    std::ofstream out = open_output(path);
    write_header(out, kCheckpointMagic, prov);
    nlohmann::json header = {{"config", model.config().to_json()},
                             {"param_count", model.num_params()},
                             {"param_dtype", "f32"}};
    for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();
    out << header.dump() << "\n";
    for (const Param value : model.parameters())
        detail::put_f32_le(out, static_cast<float>(value));
    out.flush();
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

template <typename Param = float>
ReferenceModel<Param> load_checkpoint(const std::string& path, Provenance* prov_out = nullptr,
                                      nlohmann::json* header_out = nullptr) {
    std::ifstream in = open_input(path);
    const Provenance prov = read_header(in, kCheckpointMagic, path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": missing architecture line");
    const nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.contains("config"))
        throw DataError(path + ": malformed architecture line");
    ReferenceModel<Param> model(ModelConfig::from_json(header.at("config")));
    const auto count = header.value("param_count", std::size_t{0});
    if (count != model.num_params())
        throw DataError(path + ": parameter count does not match the architecture");
    auto& params = model.parameters();
    for (std::size_t i = 0; i < count; ++i)
        params[i] = static_cast<Param>(detail::get_f32_le(in, path));
    if (prov_out != nullptr) *prov_out = prov;
    if (header_out != nullptr) *header_out = header;
    return model;
}

}  // namespace mixcl
