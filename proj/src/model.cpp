#include "qfv/model.hpp"

#include <algorithm>
#include <cmath>

#include "qfv/errors.hpp"

namespace qfv {

namespace {

constexpr double kPosScale = 1.0 / 64.0;  // frame-position feature scale
constexpr double kLogSigmaClamp = 10.0;
// decoder memory gain: lifts the [Y_n; z_n] features so the output layer and
// attention keys pick up token/latent conditioning at useful gradient scale
constexpr double kMemScale = 2.0;
// previous-frame skip gain: per-bin diagonal weights see a strong self-feature
// and pick up the frame-to-frame copy structure early in training
constexpr double kSkipScale = 12.0;
// frames are predicted through expm1 of a log1p-domain head; corrections act
// multiplicatively, so spectral valleys stay clean and free-running magnitudes
// are bounded by the clamp
constexpr double kLogFrameLo = -20.0;
constexpr double kLogFrameHi = 2.5;

struct DecCache {
    size_t t_count = 0;
    std::vector<double> xin_log;  // T x F log1p inputs fed to prenet and skip
    std::vector<double> p;        // T x Pp post-tanh prenet
    std::vector<double> q;        // T x A2 attention queries
    std::vector<double> rho;      // T bias centers
    std::vector<double> cent;     // T attention centroids
    std::vector<double> w;        // T x N attention weights
    std::vector<double> ctx;      // T x M contexts
    std::vector<LstmCache> lstm;
    std::vector<double> yhat;     // T x F pre-clamp log-domain head
    std::vector<double> xhat;     // T x F predicted frames
};

}  // namespace

ModelHyper ModelHyper::from_config(const ExperimentConfig& cfg) {
    ModelHyper hp;
    hp.vocab = cfg.corpus_vocab;
    hp.embed_dim = cfg.model_embed_dim;
    hp.enc_hidden = cfg.model_enc_hidden;
    hp.latent_dim = cfg.model_latent_dim;
    hp.ref_attn_dim = cfg.model_ref_attn_dim;
    hp.ref_value_dim = cfg.model_ref_value_dim;
    hp.dec_hidden = cfg.model_dec_hidden;
    hp.dec_attn_dim = cfg.model_dec_attn_dim;
    hp.prenet_dim = cfg.model_prenet_dim;
    hp.frame_bins = cfg.corpus_frame_bins;
    hp.codebook_size = cfg.model_codebook_size;
    hp.beta = cfg.model_beta;
    hp.gamma = cfg.model_gamma;
    hp.frames_per_token = cfg.model_frames_per_token;
    hp.attn_bias_sigma = cfg.model_attn_bias_sigma;
    hp.input_drop = cfg.model_input_drop;
    return hp;
}

QfvaeModel QfvaeModel::create(const ModelHyper& hp, RngStream& rng) {
    QfvaeModel m;
    m.hp = hp;
    ParamStore& p = m.params;
    size_t e = hp.enc_out(), mdim = hp.mem_dim(), h = hp.dec_hidden;

    init_uniform(p.add("enc.embed", {hp.vocab, hp.embed_dim}), -0.5, 0.5, rng);
    init_uniform_fanin(p.add("enc.fwd.W", {hp.enc_hidden, hp.embed_dim}), hp.embed_dim, rng);
    init_uniform_fanin(p.add("enc.fwd.U", {hp.enc_hidden, hp.enc_hidden}), hp.enc_hidden, rng);
    p.add("enc.fwd.b", {hp.enc_hidden});
    init_uniform_fanin(p.add("enc.bwd.W", {hp.enc_hidden, hp.embed_dim}), hp.embed_dim, rng);
    init_uniform_fanin(p.add("enc.bwd.U", {hp.enc_hidden, hp.enc_hidden}), hp.enc_hidden, rng);
    p.add("enc.bwd.b", {hp.enc_hidden});

    init_uniform_fanin(p.add("ref.Wq", {hp.ref_attn_dim, e}), e, rng);
    p.add("ref.bq", {hp.ref_attn_dim});
    init_uniform_fanin(p.add("ref.Wk", {hp.ref_attn_dim, hp.frame_bins + 1}), hp.frame_bins + 1,
                       rng);
    p.add("ref.bk", {hp.ref_attn_dim});
    // frames are sparse across bins; fan-in by the handful of active bins so
    // aligned vectors come out at usable scale
    init_uniform_fanin(p.add("ref.Wv", {hp.ref_value_dim, hp.frame_bins + 1}), 16, rng);
    p.add("ref.bv", {hp.ref_value_dim});

    // random mu head: the latents carry reference information from step 0,
    // otherwise the decoder learns to ignore them and the posterior collapses
    init_uniform_fanin(p.add("post.Wmu", {hp.latent_dim, hp.ref_value_dim}), 4, rng);
    p.add("post.bmu", {hp.latent_dim});
    init_uniform_fanin(p.add("post.Wls", {hp.latent_dim, hp.ref_value_dim}),
                       hp.ref_value_dim, rng);
    ParamBlock& bls = p.add("post.bls", {hp.latent_dim});
    for (double& v : bls.value) v = -1.5;  // start sigma well below 1: latents stay informative

    if (hp.quantized()) init_uniform(p.add("vq.codebook", {hp.codebook_size, hp.latent_dim}),
                                     -0.05, 0.05, rng);

    init_uniform_fanin(p.add("dec.Wp", {hp.prenet_dim, hp.frame_bins}), hp.frame_bins, rng);
    p.add("dec.bp", {hp.prenet_dim});
    init_uniform_fanin(p.add("dec.Wa", {hp.dec_attn_dim, h}), h, rng);
    p.add("dec.ba", {hp.dec_attn_dim});
    init_uniform_fanin(p.add("dec.Wm", {hp.dec_attn_dim, mdim}), mdim, rng);
    p.add("dec.bm", {hp.dec_attn_dim});
    size_t xi = hp.prenet_dim + mdim;
    init_uniform_fanin(p.add("dec.Wx", {4 * h, xi}), xi, rng);
    init_uniform_fanin(p.add("dec.Wh", {4 * h, h}), h, rng);
    ParamBlock& db = p.add("dec.b", {4 * h});
    for (size_t j = 0; j < h; ++j) db[h + j] = 1.0;  // forget-gate bias
    p.add("dec.Wo", {hp.frame_bins, h + mdim});
    p.add("dec.bo", {hp.frame_bins});
    p.add("dec.Wskip", {hp.frame_bins});  // zero: the copy path switches on as it learns
    return m;
}

std::vector<double> QfvaeModel::encode_tokens(std::span<const uint32_t> tokens) const {
    if (tokens.empty()) throw DomainError("encode_tokens: empty token sequence");
    size_t n = tokens.size(), hx = hp.enc_hidden, ed = hp.embed_dim;
    const ParamBlock& embed = params.at("enc.embed");
    for (uint32_t t : tokens)
        if (t >= hp.vocab) throw DomainError("encode_tokens: token id out of vocabulary");

    const ParamBlock& wf = params.at("enc.fwd.W");
    const ParamBlock& uf = params.at("enc.fwd.U");
    const ParamBlock& bf = params.at("enc.fwd.b");
    const ParamBlock& wb = params.at("enc.bwd.W");
    const ParamBlock& ub = params.at("enc.bwd.U");
    const ParamBlock& bb = params.at("enc.bwd.b");

    std::vector<double> y(n * hp.enc_out(), 0.0);
    std::vector<double> hprev(hx, 0.0), hcur(hx);
    for (size_t i = 0; i < n; ++i) {
        const double* x = embed.data() + tokens[i] * ed;
        for (size_t r = 0; r < hx; ++r) {
            double acc = bf[r];
            const double* wr = wf.data() + r * ed;
            for (size_t j = 0; j < ed; ++j) acc += wr[j] * x[j];
            const double* ur = uf.data() + r * hx;
            for (size_t j = 0; j < hx; ++j) acc += ur[j] * hprev[j];
            hcur[r] = std::tanh(acc);
        }
        std::copy(hcur.begin(), hcur.end(), y.begin() + i * hp.enc_out());
        hprev = hcur;
    }
    std::fill(hprev.begin(), hprev.end(), 0.0);
    for (size_t ii = n; ii-- > 0;) {
        const double* x = embed.data() + tokens[ii] * ed;
        for (size_t r = 0; r < hx; ++r) {
            double acc = bb[r];
            const double* wr = wb.data() + r * ed;
            for (size_t j = 0; j < ed; ++j) acc += wr[j] * x[j];
            const double* ur = ub.data() + r * hx;
            for (size_t j = 0; j < hx; ++j) acc += ur[j] * hprev[j];
            hcur[r] = std::tanh(acc);
        }
        std::copy(hcur.begin(), hcur.end(), y.begin() + ii * hp.enc_out() + hx);
        hprev = hcur;
    }
    return y;
}

QfvaeModel::AlignResult QfvaeModel::align_reference(std::span<const double> encodings,
                                                    size_t n_tokens,
                                                    const FrameMatrix& frames) const {
    if (frames.t == 0) throw DomainError("align_reference: empty frame matrix");
    if (frames.f != hp.frame_bins) throw DimensionError("align_reference: frame bin mismatch");
    if (encodings.size() != n_tokens * hp.enc_out())
        throw DimensionError("align_reference: encoding shape mismatch");

    size_t a = hp.ref_attn_dim, p = hp.ref_value_dim, fb = hp.frame_bins;
    const ParamBlock& wq = params.at("ref.Wq");
    const ParamBlock& bq = params.at("ref.bq");
    const ParamBlock& wk = params.at("ref.Wk");
    const ParamBlock& bk = params.at("ref.bk");
    const ParamBlock& wv = params.at("ref.Wv");
    const ParamBlock& bv = params.at("ref.bv");

    std::vector<double> keys(frames.t * a), values(frames.t * p), fin(fb + 1);
    for (size_t t = 0; t < frames.t; ++t) {
        std::copy(frames.row(t).begin(), frames.row(t).end(), fin.begin());
        fin[fb] = static_cast<double>(t) * kPosScale;
        linear_forward(wk, bk, fin, {keys.data() + t * a, a});
        linear_forward(wv, bv, fin, {values.data() + t * p, p});
    }

    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(a));
    AlignResult out;
    out.aligned.assign(n_tokens * p, 0.0);
    out.weights = FrameMatrix(n_tokens, frames.t);
    std::vector<double> query(a);
    for (size_t n = 0; n < n_tokens; ++n) {
        linear_forward(wq, bq, {encodings.data() + n * hp.enc_out(), hp.enc_out()}, query);
        auto row = out.weights.row(n);
        for (size_t t = 0; t < frames.t; ++t) {
            double s = 0.0;
            const double* k = keys.data() + t * a;
            for (size_t j = 0; j < a; ++j) s += query[j] * k[j];
            row[t] = s * inv_sqrt;
        }
        softmax_inplace(row);
        double* r = out.aligned.data() + n * p;
        for (size_t t = 0; t < frames.t; ++t) {
            const double* v = values.data() + t * p;
            for (size_t j = 0; j < p; ++j) r[j] += row[t] * v[j];
        }
    }
    return out;
}

Posterior QfvaeModel::posterior(std::span<const double> aligned, size_t n_tokens) const {
    if (aligned.size() != n_tokens * hp.ref_value_dim)
        throw DimensionError("posterior: aligned shape mismatch");
    Posterior post;
    post.n = n_tokens;
    post.d = hp.latent_dim;
    post.mu.assign(n_tokens * post.d, 0.0);
    post.log_sigma.assign(n_tokens * post.d, 0.0);
    post.sigma.assign(n_tokens * post.d, 0.0);
    const ParamBlock& wmu = params.at("post.Wmu");
    const ParamBlock& bmu = params.at("post.bmu");
    const ParamBlock& wls = params.at("post.Wls");
    const ParamBlock& bls = params.at("post.bls");
    for (size_t n = 0; n < n_tokens; ++n) {
        std::span<const double> r{aligned.data() + n * hp.ref_value_dim, hp.ref_value_dim};
        linear_forward(wmu, bmu, r, {post.mu.data() + n * post.d, post.d});
        linear_forward(wls, bls, r, {post.log_sigma.data() + n * post.d, post.d});
        for (size_t j = 0; j < post.d; ++j) {
            double& ls = post.log_sigma[n * post.d + j];
            ls = std::clamp(ls, -kLogSigmaClamp, kLogSigmaClamp);
            post.sigma[n * post.d + j] = std::exp(ls);
        }
    }
    return post;
}

LatentSequence QfvaeModel::reparam_sample(const Posterior& post, RngStream& rng) const {
    LatentSequence seq;
    seq.n = post.n;
    seq.d = post.d;
    seq.z.resize(post.n * post.d);
    for (size_t i = 0; i < seq.z.size(); ++i)
        seq.z[i] = post.mu[i] + post.sigma[i] * rng.next_gaussian();
    return seq;
}

Codebook QfvaeModel::codebook() const {
    if (!hp.quantized()) throw DomainError("codebook: quantization disabled");
    Codebook cb;
    cb.k = hp.codebook_size;
    cb.dim = hp.latent_dim;
    cb.embeddings = params.at("vq.codebook").value;
    return cb;
}

void QfvaeModel::set_codebook(const Codebook& cb) {
    if (!hp.quantized()) throw DomainError("set_codebook: quantization disabled");
    ParamBlock& block = params.at("vq.codebook");
    if (cb.k != hp.codebook_size || cb.dim != hp.latent_dim)
        throw DimensionError("set_codebook: shape mismatch");
    block.value = cb.embeddings;
}

LatentSequence QfvaeModel::quantize_latents(const LatentSequence& continuous) const {
    Codebook cb = codebook();
    LatentSequence out = continuous;
    out.indices.resize(continuous.n);
    for (size_t n = 0; n < continuous.n; ++n) {
        Assignment a = quantize(cb, {continuous.z.data() + n * continuous.d, continuous.d});
        out.indices[n] = a.index;
    }
    return out;
}

DecoderOutput QfvaeModel::decode(std::span<const double> encodings, const LatentSequence& latents,
                                 const FrameMatrix* teacher, size_t free_frames) const {
    size_t n = latents.n;
    if (encodings.size() != n * hp.enc_out())
        throw DimensionError("decode: encodings/latents length mismatch");
    if (latents.d != hp.latent_dim) throw DimensionError("decode: latent dimension mismatch");
    if (!teacher && free_frames == 0)
        throw DomainError("decode: need teacher frames or a free-running length");

    size_t e = hp.enc_out(), d = hp.latent_dim, mdim = hp.mem_dim();
    std::vector<double> mem(n * mdim);
    Codebook cb;
    if (latents.quantized()) cb = codebook();
    for (size_t i = 0; i < n; ++i) {
        const double* u = latents.quantized() ? cb.embeddings.data() + latents.indices[i] * d
                                              : latents.z.data() + i * d;
        for (size_t j = 0; j < e; ++j) mem[i * mdim + j] = kMemScale * encodings[i * e + j];
        for (size_t j = 0; j < d; ++j) mem[i * mdim + e + j] = kMemScale * u[j];
    }

    size_t a2 = hp.dec_attn_dim;
    const ParamBlock& wm = params.at("dec.Wm");
    const ParamBlock& bm = params.at("dec.bm");
    std::vector<double> kappa(n * a2);
    for (size_t i = 0; i < n; ++i)
        linear_forward(wm, bm, {mem.data() + i * mdim, mdim}, {kappa.data() + i * a2, a2});

    size_t t_count = teacher ? teacher->t : free_frames;
    size_t fb = hp.frame_bins, h = hp.dec_hidden, pp = hp.prenet_dim;
    if (teacher && teacher->f != fb) throw DimensionError("decode: teacher bin mismatch");

    const ParamBlock& wp = params.at("dec.Wp");
    const ParamBlock& bp = params.at("dec.bp");
    const ParamBlock& wa = params.at("dec.Wa");
    const ParamBlock& ba = params.at("dec.ba");
    const ParamBlock& wx = params.at("dec.Wx");
    const ParamBlock& wh = params.at("dec.Wh");
    const ParamBlock& bl = params.at("dec.b");
    const ParamBlock& wo = params.at("dec.Wo");
    const ParamBlock& bo = params.at("dec.bo");
    const ParamBlock& wskip = params.at("dec.Wskip");

    DecoderOutput out;
    out.frames = FrameMatrix(t_count, fb);
    out.attention = FrameMatrix(t_count, n);

    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(a2));
    double adv = 1.0 / hp.frames_per_token;
    double inv2s2 = 1.0 / (2.0 * hp.attn_bias_sigma * hp.attn_bias_sigma);

    std::vector<double> hstate(h, 0.0), cstate(h, 0.0);
    std::vector<double> xin_log(fb, 0.0), p(pp), query(a2), ctx(mdim), xi(pp + mdim), yo(h + mdim);
    LstmCache cache;
    double cent_prev = 0.0;
    for (size_t t = 0; t < t_count; ++t) {
        if (t > 0) {
            if (teacher) {
                for (size_t j = 0; j < fb; ++j) xin_log[j] = std::log1p(teacher->at(t - 1, j));
            } else {
                for (size_t j = 0; j < fb; ++j)
                    xin_log[j] = std::log1p(std::max(out.frames.at(t - 1, j), 0.0));
            }
        }
        linear_forward(wp, bp, xin_log, p);
        for (double& v : p) v = std::tanh(v);
        linear_forward(wa, ba, hstate, query);
        double rho = t == 0 ? 0.0 : cent_prev + adv;
        auto wrow = out.attention.row(t);
        for (size_t i = 0; i < n; ++i) {
            double s = 0.0;
            const double* k = kappa.data() + i * a2;
            for (size_t j = 0; j < a2; ++j) s += query[j] * k[j];
            double off = static_cast<double>(i) - rho;
            wrow[i] = s * inv_sqrt - off * off * inv2s2;
        }
        softmax_inplace(wrow);
        cent_prev = 0.0;
        std::fill(ctx.begin(), ctx.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            cent_prev += wrow[i] * static_cast<double>(i);
            const double* m = mem.data() + i * mdim;
            for (size_t j = 0; j < mdim; ++j) ctx[j] += wrow[i] * m[j];
        }
        std::copy(p.begin(), p.end(), xi.begin());
        std::copy(ctx.begin(), ctx.end(), xi.begin() + pp);
        lstm_step(wx, wh, bl, xi, hstate, cstate, cache);
        std::copy(hstate.begin(), hstate.end(), yo.begin());
        std::copy(ctx.begin(), ctx.end(), yo.begin() + h);
        auto orow = out.frames.row(t);
        linear_forward(wo, bo, yo, orow);
        for (size_t j = 0; j < fb; ++j) {
            double yhat = orow[j] + wskip[j] * kSkipScale * xin_log[j];
            orow[j] = std::expm1(std::clamp(yhat, kLogFrameLo, kLogFrameHi));
        }
    }
    return out;
}

QfvaeModel::Analysis QfvaeModel::analyze(const Utterance& utt) const {
    Analysis out;
    out.encodings = encode_tokens(utt.tokens);
    AlignResult aligned = align_reference(out.encodings, utt.tokens.size(), utt.frames);
    out.post = posterior(aligned.aligned, utt.tokens.size());
    return out;
}

std::vector<double> kl_standard(const Posterior& post) {
    std::vector<double> kl(post.n, 0.0);
    for (size_t n = 0; n < post.n; ++n) {
        double acc = 0.0;
        for (size_t j = 0; j < post.d; ++j) {
            double mu = post.mu[n * post.d + j];
            double sig = post.sigma[n * post.d + j];
            if (!(sig > 0.0)) throw DomainError("kl_standard: non-positive sigma");
            acc += 0.5 * (mu * mu + sig * sig - 1.0 - 2.0 * post.log_sigma[n * post.d + j]);
        }
        kl[n] = std::max(acc, 0.0);
    }
    return kl;
}

ElboResult elbo_loss(const FrameMatrix& predicted, const FrameMatrix& target,
                     std::span<const double> kl_values, double beta) {
    if (predicted.t != target.t || predicted.f != target.f)
        throw DimensionError("elbo_loss: frame shape mismatch");
    if (predicted.t == 0) throw DimensionError("elbo_loss: empty frames");
    ElboResult out;
    out.d_predicted = FrameMatrix(predicted.t, predicted.f);
    out.d_kl.assign(kl_values.size(), beta);
    double inv_t = 1.0 / static_cast<double>(predicted.t);
    for (size_t i = 0; i < predicted.v.size(); ++i) {
        double diff = predicted.v[i] - target.v[i];
        out.loss += diff * diff * inv_t;
        out.d_predicted.v[i] = 2.0 * diff * inv_t;
    }
    for (double k : kl_values) out.loss += beta * k;
    return out;
}

FrozenVq QfvaeModel::capture_frozen(const Utterance& utt, std::span<const double> noise) const {
    if (!hp.quantized()) throw DomainError("capture_frozen: quantization disabled");
    Analysis an = analyze(utt);
    size_t n = an.post.n, d = an.post.d;
    FrozenVq frozen;
    frozen.indices.resize(n);
    frozen.z0.resize(n * d);
    frozen.e0.resize(n * d);
    Codebook cb = codebook();
    for (size_t i = 0; i < n * d; ++i)
        frozen.z0[i] = an.post.mu[i] + an.post.sigma[i] * noise[i];
    for (size_t i = 0; i < n; ++i) {
        Assignment a = quantize(cb, {frozen.z0.data() + i * d, d});
        frozen.indices[i] = a.index;
        std::copy(a.quantized.begin(), a.quantized.end(), frozen.e0.begin() + i * d);
    }
    return frozen;
}

UttLossParts QfvaeModel::utterance_loss(const Utterance& utt, std::span<const double> noise,
                                        double weight, ParamStore* grads,
                                        const FrozenVq* frozen,
                                        std::vector<double>* out_d_latents,
                                        std::span<const uint8_t> frame_drop) const {
    size_t n = utt.tokens.size();
    size_t d = hp.latent_dim;
    if (noise.size() != n * d) throw DimensionError("utterance_loss: noise shape mismatch");
    const FrameMatrix& target = utt.frames;
    size_t t_count = target.t, fb = hp.frame_bins;
    if (target.f != fb) throw DimensionError("utterance_loss: frame bin mismatch");
    if (t_count == 0) throw DomainError("utterance_loss: empty utterance");
    if (!frame_drop.empty() && frame_drop.size() != t_count)
        throw DimensionError("utterance_loss: frame_drop length mismatch");

    size_t e = hp.enc_out(), hx = hp.enc_hidden, ed = hp.embed_dim;
    size_t a1 = hp.ref_attn_dim, pv = hp.ref_value_dim;
    size_t a2 = hp.dec_attn_dim, h = hp.dec_hidden, pp = hp.prenet_dim, mdim = hp.mem_dim();

    // ---------- forward ----------
    std::vector<double> y = encode_tokens(utt.tokens);
    AlignResult align = align_reference(y, n, target);
    Posterior post = posterior(align.aligned, n);

    std::vector<double> z(n * d);
    for (size_t i = 0; i < n * d; ++i) z[i] = post.mu[i] + post.sigma[i] * noise[i];

    bool vq = hp.quantized();
    std::vector<size_t> assign_idx;
    std::vector<double> e_rows;  // assigned codebook rows (current params)
    std::vector<double> u(n * d);
    Codebook cb;
    if (vq) {
        cb = codebook();
        assign_idx.resize(n);
        e_rows.resize(n * d);
        if (frozen) {
            assign_idx = frozen->indices;
            for (size_t i = 0; i < n; ++i) {
                const double* row = cb.embeddings.data() + assign_idx[i] * d;
                std::copy(row, row + d, e_rows.begin() + i * d);
            }
            // surrogate decoder input: z(theta) + frozen residual
            for (size_t i = 0; i < n * d; ++i)
                u[i] = z[i] + (frozen->e0[i] - frozen->z0[i]);
        } else {
            for (size_t i = 0; i < n; ++i) {
                Assignment a = quantize(cb, {z.data() + i * d, d});
                assign_idx[i] = a.index;
                std::copy(a.quantized.begin(), a.quantized.end(), e_rows.begin() + i * d);
            }
            u = e_rows;
        }
    } else {
        u = z;
    }

    // memory and decoder keys
    std::vector<double> mem(n * mdim);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < e; ++j) mem[i * mdim + j] = kMemScale * y[i * e + j];
        for (size_t j = 0; j < d; ++j) mem[i * mdim + e + j] = kMemScale * u[i * d + j];
    }
    const ParamBlock& wm = params.at("dec.Wm");
    const ParamBlock& bm = params.at("dec.bm");
    std::vector<double> kappa(n * a2);
    for (size_t i = 0; i < n; ++i)
        linear_forward(wm, bm, {mem.data() + i * mdim, mdim}, {kappa.data() + i * a2, a2});

    const ParamBlock& wp = params.at("dec.Wp");
    const ParamBlock& bp = params.at("dec.bp");
    const ParamBlock& wa = params.at("dec.Wa");
    const ParamBlock& ba = params.at("dec.ba");
    const ParamBlock& wx = params.at("dec.Wx");
    const ParamBlock& wh = params.at("dec.Wh");
    const ParamBlock& bl = params.at("dec.b");
    const ParamBlock& wo = params.at("dec.Wo");
    const ParamBlock& bo = params.at("dec.bo");
    const ParamBlock& wskip = params.at("dec.Wskip");

    DecCache dc;
    dc.t_count = t_count;
    dc.xin_log.assign(t_count * fb, 0.0);
    dc.p.assign(t_count * pp, 0.0);
    dc.q.assign(t_count * a2, 0.0);
    dc.rho.assign(t_count, 0.0);
    dc.cent.assign(t_count, 0.0);
    dc.w.assign(t_count * n, 0.0);
    dc.ctx.assign(t_count * mdim, 0.0);
    dc.lstm.resize(t_count);
    dc.yhat.assign(t_count * fb, 0.0);
    dc.xhat.assign(t_count * fb, 0.0);

    double inv_sqrt2 = 1.0 / std::sqrt(static_cast<double>(a2));
    double adv = 1.0 / hp.frames_per_token;
    double inv2s2 = 1.0 / (2.0 * hp.attn_bias_sigma * hp.attn_bias_sigma);

    std::vector<double> hstate(h, 0.0), cstate(h, 0.0), xi(pp + mdim), yo(h + mdim);
    for (size_t t = 0; t < t_count; ++t) {
        double* xin_log = dc.xin_log.data() + t * fb;
        bool dropped = !frame_drop.empty() && frame_drop[t];
        if (t > 0 && !dropped)
            for (size_t j = 0; j < fb; ++j) xin_log[j] = std::log1p(target.at(t - 1, j));
        double* p = dc.p.data() + t * pp;
        linear_forward(wp, bp, {xin_log, fb}, {p, pp});
        for (size_t j = 0; j < pp; ++j) p[j] = std::tanh(p[j]);
        double* q = dc.q.data() + t * a2;
        linear_forward(wa, ba, hstate, {q, a2});
        double rho = t == 0 ? 0.0 : dc.cent[t - 1] + adv;
        dc.rho[t] = rho;
        double* w = dc.w.data() + t * n;
        for (size_t i = 0; i < n; ++i) {
            double s = 0.0;
            const double* k = kappa.data() + i * a2;
            for (size_t j = 0; j < a2; ++j) s += q[j] * k[j];
            double off = static_cast<double>(i) - rho;
            w[i] = s * inv_sqrt2 - off * off * inv2s2;
        }
        softmax_inplace({w, n});
        double cent = 0.0;
        double* ctx = dc.ctx.data() + t * mdim;
        std::fill(ctx, ctx + mdim, 0.0);
        for (size_t i = 0; i < n; ++i) {
            cent += w[i] * static_cast<double>(i);
            const double* m = mem.data() + i * mdim;
            for (size_t j = 0; j < mdim; ++j) ctx[j] += w[i] * m[j];
        }
        dc.cent[t] = cent;
        std::copy(p, p + pp, xi.begin());
        std::copy(ctx, ctx + mdim, xi.begin() + pp);
        lstm_step(wx, wh, bl, xi, hstate, cstate, dc.lstm[t]);
        std::copy(hstate.begin(), hstate.end(), yo.begin());
        std::copy(ctx, ctx + mdim, yo.begin() + h);
        double* yhat = dc.yhat.data() + t * fb;
        double* xhat = dc.xhat.data() + t * fb;
        linear_forward(wo, bo, yo, {yhat, fb});
        for (size_t j = 0; j < fb; ++j) {
            yhat[j] += wskip[j] * kSkipScale * xin_log[j];
            xhat[j] = std::expm1(std::clamp(yhat[j], kLogFrameLo, kLogFrameHi));
        }
    }

    // ---------- losses ----------
    UttLossParts parts;
    parts.assignments = assign_idx;
    double inv_t = 1.0 / static_cast<double>(t_count);
    for (size_t i = 0; i < t_count * fb; ++i) {
        double diff = dc.xhat[i] - target.v[i];
        parts.recon_mse += diff * diff * inv_t;
    }
    std::vector<double> kl = kl_standard(post);
    for (double v : kl) parts.kl += v;
    if (vq) {
        const std::vector<double>& zq = frozen ? frozen->z0 : z;      // sg[z]
        const std::vector<double>& ec = frozen ? frozen->e0 : e_rows;  // sg[e]
        for (size_t i = 0; i < n * d; ++i) {
            double rq = zq[i] - e_rows[i];
            parts.quantization += rq * rq;
            double rc = z[i] - ec[i];
            parts.commitment += hp.gamma * rc * rc;
        }
    }
    parts.total = parts.recon_mse + hp.beta * parts.kl + parts.quantization + parts.commitment;
    if (!grads) return parts;

    // ---------- backward ----------
    ParamStore& g = *grads;
    std::vector<double> dh(t_count * h, 0.0);
    std::vector<double> dctx(mdim);
    std::vector<double> dcent(t_count, 0.0);
    std::vector<double> dcell(h, 0.0);
    std::vector<double> dmem(n * mdim, 0.0);
    std::vector<double> dkappa(n * a2, 0.0);
    std::vector<double> dxi(pp + mdim), dw(n), ds(n), dq(a2), dyo(h + mdim), dxhat(fb),
        dp(pp), dpre(pp), dhprev(h);

    ParamBlock& gwo = g.at("dec.Wo");
    ParamBlock& gbo = g.at("dec.bo");
    ParamBlock& gwx = g.at("dec.Wx");
    ParamBlock& gwh = g.at("dec.Wh");
    ParamBlock& gbl = g.at("dec.b");
    ParamBlock& gwp = g.at("dec.Wp");
    ParamBlock& gbp = g.at("dec.bp");
    ParamBlock& gwa = g.at("dec.Wa");
    ParamBlock& gba = g.at("dec.ba");
    ParamBlock& gwm = g.at("dec.Wm");
    ParamBlock& gbm = g.at("dec.bm");
    ParamBlock& gskip = g.at("dec.Wskip");

    for (size_t t = t_count; t-- > 0;) {
        // output head: d(loss)/d(yhat) through the expm1 reparameterization
        for (size_t j = 0; j < fb; ++j) {
            double yhat = dc.yhat[t * fb + j];
            double slope = (yhat <= kLogFrameLo || yhat >= kLogFrameHi) ? 0.0 : std::exp(yhat);
            dxhat[j] = 2.0 * inv_t * (dc.xhat[t * fb + j] - target.at(t, j)) * weight * slope;
        }
        std::copy(dc.lstm[t].h.begin(), dc.lstm[t].h.end(), yo.begin());
        std::copy(dc.ctx.begin() + t * mdim, dc.ctx.begin() + (t + 1) * mdim, yo.begin() + h);
        std::fill(dyo.begin(), dyo.end(), 0.0);
        linear_backward(wo, yo, dxhat, gwo, gbo, dyo);
        const double* xin_t = dc.xin_log.data() + t * fb;
        for (size_t j = 0; j < fb; ++j) gskip[j] += dxhat[j] * kSkipScale * xin_t[j];
        for (size_t j = 0; j < h; ++j) dh[t * h + j] += dyo[j];
        std::copy(dyo.begin() + h, dyo.end(), dctx.begin());

        // LSTM
        std::fill(dxi.begin(), dxi.end(), 0.0);
        std::fill(dhprev.begin(), dhprev.end(), 0.0);
        lstm_step_backward(wx, wh, dc.lstm[t], {dh.data() + t * h, h}, dcell, gwx, gwh, gbl, dxi,
                           dhprev);
        if (t > 0)
            for (size_t j = 0; j < h; ++j) dh[(t - 1) * h + j] += dhprev[j];
        for (size_t j = 0; j < mdim; ++j) dctx[j] += dxi[pp + j];

        // prenet
        const double* p = dc.p.data() + t * pp;
        for (size_t j = 0; j < pp; ++j) dpre[j] = dxi[j] * (1.0 - p[j] * p[j]);
        linear_backward(wp, {dc.xin_log.data() + t * fb, fb}, dpre, gwp, gbp, {});

        // attention
        const double* w = dc.w.data() + t * n;
        for (size_t i = 0; i < n; ++i) {
            double acc = dcent[t] * static_cast<double>(i);
            const double* m = mem.data() + i * mdim;
            for (size_t j = 0; j < mdim; ++j) {
                acc += dctx[j] * m[j];
                dmem[i * mdim + j] += w[i] * dctx[j];
            }
            dw[i] = acc;
        }
        softmax_backward({w, n}, dw, ds);
        std::fill(dq.begin(), dq.end(), 0.0);
        double drho = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double* k = kappa.data() + i * a2;
            for (size_t j = 0; j < a2; ++j) {
                dq[j] += ds[i] * k[j] * inv_sqrt2;
                dkappa[i * a2 + j] += ds[i] * dc.q[t * a2 + j] * inv_sqrt2;
            }
            double off = static_cast<double>(i) - dc.rho[t];
            drho += ds[i] * 2.0 * off * inv2s2;
        }
        if (t > 0) dcent[t - 1] += drho;
        std::fill(dhprev.begin(), dhprev.end(), 0.0);
        linear_backward(wa, dc.lstm[t].h_prev, dq, gwa, gba, dhprev);
        if (t > 0)
            for (size_t j = 0; j < h; ++j) dh[(t - 1) * h + j] += dhprev[j];
    }

    // memory keys
    for (size_t i = 0; i < n; ++i) {
        std::span<double> dm{dmem.data() + i * mdim, mdim};
        linear_backward(wm, {mem.data() + i * mdim, mdim}, {dkappa.data() + i * a2, a2}, gwm, gbm,
                        dm);
    }

    // split memory gradient into encoding and latent parts
    std::vector<double> dy(n * e, 0.0), dz(n * d, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < e; ++j) dy[i * e + j] += kMemScale * dmem[i * mdim + j];
        // straight-through: the latent keeps the full memory-path gradient
        for (size_t j = 0; j < d; ++j) dz[i * d + j] += kMemScale * dmem[i * mdim + e + j];
    }

    if (vq) {
        ParamBlock& gcb = g.at("vq.codebook");
        const std::vector<double>& zq = frozen ? frozen->z0 : z;
        const std::vector<double>& ec = frozen ? frozen->e0 : e_rows;
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < d; ++j) {
                size_t idx = i * d + j;
                gcb[assign_idx[i] * d + j] += 2.0 * (e_rows[idx] - zq[idx]) * weight;
                dz[idx] += 2.0 * hp.gamma * (z[idx] - ec[idx]) * weight;
            }
        }
    }
    if (out_d_latents) *out_d_latents = dz;

    // KL + reparameterization
    std::vector<double> dmu(n * d, 0.0), dls(n * d, 0.0);
    for (size_t i = 0; i < n * d; ++i) {
        double sig = post.sigma[i];
        double dsig = dz[i] * noise[i] + hp.beta * weight * (sig - 1.0 / sig);
        dmu[i] = dz[i] + hp.beta * weight * post.mu[i];
        bool clamped = post.log_sigma[i] <= -kLogSigmaClamp || post.log_sigma[i] >= kLogSigmaClamp;
        dls[i] = clamped ? 0.0 : dsig * sig;
    }

    // posterior heads
    ParamBlock& gwmu = g.at("post.Wmu");
    ParamBlock& gbmu = g.at("post.bmu");
    ParamBlock& gwls = g.at("post.Wls");
    ParamBlock& gbls = g.at("post.bls");
    const ParamBlock& wmu = params.at("post.Wmu");
    const ParamBlock& wls = params.at("post.Wls");
    std::vector<double> dr(n * pv, 0.0);
    for (size_t i = 0; i < n; ++i) {
        std::span<const double> r{align.aligned.data() + i * pv, pv};
        std::span<double> dri{dr.data() + i * pv, pv};
        linear_backward(wmu, r, {dmu.data() + i * d, d}, gwmu, gbmu, dri);
        linear_backward(wls, r, {dls.data() + i * d, d}, gwls, gbls, dri);
    }

    // reference attention backward
    const ParamBlock& rwq = params.at("ref.Wq");
    const ParamBlock& rwk = params.at("ref.Wk");
    const ParamBlock& rwv = params.at("ref.Wv");
    ParamBlock& gwq = g.at("ref.Wq");
    ParamBlock& gbq = g.at("ref.bq");
    ParamBlock& gwk = g.at("ref.Wk");
    ParamBlock& gbk = g.at("ref.bk");
    ParamBlock& gwv = g.at("ref.Wv");
    ParamBlock& gbv = g.at("ref.bv");

    // rebuild keys/values/queries (cheap relative to storing them)
    std::vector<double> keys(t_count * a1), values(t_count * pv), fin(fb + 1);
    const ParamBlock& rbk = params.at("ref.bk");
    const ParamBlock& rbv = params.at("ref.bv");
    const ParamBlock& rbq = params.at("ref.bq");
    for (size_t t = 0; t < t_count; ++t) {
        std::copy(target.row(t).begin(), target.row(t).end(), fin.begin());
        fin[fb] = static_cast<double>(t) * kPosScale;
        linear_forward(rwk, rbk, fin, {keys.data() + t * a1, a1});
        linear_forward(rwv, rbv, fin, {values.data() + t * pv, pv});
    }
    double inv_sqrt1 = 1.0 / std::sqrt(static_cast<double>(a1));
    std::vector<double> dkeys(t_count * a1, 0.0), dvalues(t_count * pv, 0.0);
    std::vector<double> query(a1), dquery(a1), dwr(t_count), dsr(t_count);
    for (size_t i = 0; i < n; ++i) {
        linear_forward(rwq, rbq, {y.data() + i * e, e}, query);
        auto wrow = align.weights.row(i);
        std::span<const double> dri{dr.data() + i * pv, pv};
        for (size_t t = 0; t < t_count; ++t) {
            double acc = 0.0;
            const double* v = values.data() + t * pv;
            for (size_t j = 0; j < pv; ++j) {
                acc += dri[j] * v[j];
                dvalues[t * pv + j] += wrow[t] * dri[j];
            }
            dwr[t] = acc;
        }
        softmax_backward(wrow, {dwr.data(), t_count}, {dsr.data(), t_count});
        std::fill(dquery.begin(), dquery.end(), 0.0);
        for (size_t t = 0; t < t_count; ++t) {
            const double* k = keys.data() + t * a1;
            for (size_t j = 0; j < a1; ++j) {
                dquery[j] += dsr[t] * k[j] * inv_sqrt1;
                dkeys[t * a1 + j] += dsr[t] * query[j] * inv_sqrt1;
            }
        }
        linear_backward(rwq, {y.data() + i * e, e}, dquery, gwq, gbq, {dy.data() + i * e, e});
    }
    for (size_t t = 0; t < t_count; ++t) {
        std::copy(target.row(t).begin(), target.row(t).end(), fin.begin());
        fin[fb] = static_cast<double>(t) * kPosScale;
        linear_backward(rwk, fin, {dkeys.data() + t * a1, a1}, gwk, gbk, {});
        linear_backward(rwv, fin, {dvalues.data() + t * pv, pv}, gwv, gbv, {});
    }

    // encoder backward (bidirectional tanh RNN + embedding)
    const ParamBlock& embed = params.at("enc.embed");
    const ParamBlock& ewf = params.at("enc.fwd.W");
    const ParamBlock& euf = params.at("enc.fwd.U");
    const ParamBlock& ewb = params.at("enc.bwd.W");
    const ParamBlock& eub = params.at("enc.bwd.U");
    ParamBlock& gembed = g.at("enc.embed");
    ParamBlock& gwf = g.at("enc.fwd.W");
    ParamBlock& guf = g.at("enc.fwd.U");
    ParamBlock& gbf = g.at("enc.fwd.b");
    ParamBlock& gwb2 = g.at("enc.bwd.W");
    ParamBlock& gub = g.at("enc.bwd.U");
    ParamBlock& gbb = g.at("enc.bwd.b");

    std::vector<double> dx(n * ed, 0.0);
    {
        // forward direction: h_i depends on h_{i-1}
        std::vector<double> carry(hx, 0.0), dprev(hx, 0.0), pre(hx);
        for (size_t i = n; i-- > 0;) {
            const double* hf = y.data() + i * e;  // first half of Y row
            for (size_t r = 0; r < hx; ++r) {
                double total = dy[i * e + r] + carry[r];
                pre[r] = total * (1.0 - hf[r] * hf[r]);
            }
            const double* hprev = i > 0 ? y.data() + (i - 1) * e : nullptr;
            std::span<const double> x{embed.data() + utt.tokens[i] * ed, ed};
            std::fill(dprev.begin(), dprev.end(), 0.0);
            for (size_t r = 0; r < hx; ++r) {
                gbf[r] += pre[r];
                double* wrow = gwf.data() + r * ed;
                for (size_t j = 0; j < ed; ++j) wrow[j] += pre[r] * x[j];
                double* urow = guf.data() + r * hx;
                const double* uro = euf.data() + r * hx;
                for (size_t j = 0; j < hx; ++j) {
                    urow[j] += pre[r] * (hprev ? hprev[j] : 0.0);
                    dprev[j] += uro[j] * pre[r];
                }
                const double* wro = ewf.data() + r * ed;
                for (size_t j = 0; j < ed; ++j) dx[i * ed + j] += wro[j] * pre[r];
            }
            carry = dprev;
        }
        // backward direction: h_i depends on h_{i+1}
        std::fill(carry.begin(), carry.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            const double* hb = y.data() + i * e + hx;
            for (size_t r = 0; r < hx; ++r) {
                double total = dy[i * e + hx + r] + carry[r];
                pre[r] = total * (1.0 - hb[r] * hb[r]);
            }
            const double* hnext = i + 1 < n ? y.data() + (i + 1) * e + hx : nullptr;
            std::span<const double> x{embed.data() + utt.tokens[i] * ed, ed};
            std::fill(dprev.begin(), dprev.end(), 0.0);
            for (size_t r = 0; r < hx; ++r) {
                gbb[r] += pre[r];
                double* wrow = gwb2.data() + r * ed;
                for (size_t j = 0; j < ed; ++j) wrow[j] += pre[r] * x[j];
                double* urow = gub.data() + r * hx;
                const double* uro = eub.data() + r * hx;
                for (size_t j = 0; j < hx; ++j) {
                    urow[j] += pre[r] * (hnext ? hnext[j] : 0.0);
                    dprev[j] += uro[j] * pre[r];
                }
                const double* wro = ewb.data() + r * ed;
                for (size_t j = 0; j < ed; ++j) dx[i * ed + j] += wro[j] * pre[r];
            }
            carry = dprev;
        }
        for (size_t i = 0; i < n; ++i) {
            double* grow = gembed.data() + utt.tokens[i] * ed;
            for (size_t j = 0; j < ed; ++j) grow[j] += dx[i * ed + j];
        }
    }
    return parts;
}

TrainState init_stage1(const ExperimentConfig& cfg, const std::vector<Utterance>& corpus,
                       RngStream rng) {
    if (corpus.empty()) throw DomainError("init_stage1: empty corpus");
    ModelHyper hp = ModelHyper::from_config(cfg);
    TrainState state;
    state.model = QfvaeModel::create(hp, rng);
    state.steps_done = 0;
    if (hp.quantized()) {
        // sample-init the codebook from untrained posterior draws when the
        // corpus provides enough latents; fall back to the uniform init kept
        // from create() otherwise
        std::vector<std::vector<double>> samples;
        size_t want = 2 * hp.codebook_size;
        for (const auto& utt : corpus) {
            if (samples.size() >= want) break;
            auto an = state.model.analyze(utt);
            LatentSequence seq = state.model.reparam_sample(an.post, rng);
            for (size_t i = 0; i < seq.n; ++i)
                samples.emplace_back(seq.z.begin() + i * seq.d, seq.z.begin() + (i + 1) * seq.d);
        }
        if (samples.size() >= hp.codebook_size) {
            Codebook cb = init_codebook(hp.codebook_size, hp.latent_dim, rng, &samples);
            state.model.set_codebook(cb);
        }
    }
    state.rng = rng;
    return state;
}

std::vector<TrainLogEntry> train_stage1_steps(TrainState& state,
                                              const std::vector<Utterance>& corpus,
                                              const ExperimentConfig& cfg, size_t n_steps) {
    if (corpus.empty()) throw DomainError("train_stage1: empty corpus");
    QfvaeModel& model = state.model;
    size_t batch = cfg.train_batch;
    ParamStore grads = model.params.zeros_like();
    std::vector<TrainLogEntry> log;
    double beta_target = model.hp.beta;
    for (size_t s = 0; s < n_steps; ++s) {
        size_t global = state.steps_done;
        double lr = cfg.train_step_size *
                    std::pow(cfg.train_decay_factor,
                             static_cast<double>(global / cfg.train_decay_interval));
        // KL warm-up: ramp beta from 0 so the latents become informative
        // before the prior pull sets in
        model.hp.beta = cfg.train_beta_warmup_steps == 0
                            ? beta_target
                            : beta_target * std::min(1.0, static_cast<double>(global + 1) /
                                                              static_cast<double>(
                                                                  cfg.train_beta_warmup_steps));
        grads.zero();
        TrainLogEntry entry;
        entry.step = global;
        entry.lr = lr;
        std::vector<size_t> batch_assignments;
        for (size_t b = 0; b < batch; ++b) {
            size_t idx = static_cast<size_t>(state.rng.next_below(corpus.size()));
            const Utterance& utt = corpus[idx];
            size_t n = utt.tokens.size();
            std::vector<double> noise(n * model.hp.latent_dim);
            for (double& v : noise) v = state.rng.next_gaussian();
            std::vector<uint8_t> drop(utt.frames.t, 0);
            if (model.hp.input_drop > 0.0)
                for (auto& flag : drop)
                    flag = state.rng.next_double() < model.hp.input_drop ? 1 : 0;
            UttLossParts parts = model.utterance_loss(utt, noise, 1.0 / static_cast<double>(batch),
                                                      &grads, nullptr, nullptr, drop);
            entry.total += parts.total / static_cast<double>(batch);
            entry.recon_mse += parts.recon_mse / static_cast<double>(batch);
            entry.kl += parts.kl / static_cast<double>(batch);
            entry.quantization += parts.quantization / static_cast<double>(batch);
            entry.commitment += parts.commitment / static_cast<double>(batch);
            batch_assignments.insert(batch_assignments.end(), parts.assignments.begin(),
                                     parts.assignments.end());
        }
        if (!std::isfinite(entry.total))
            throw TrainingError("train_stage1: non-finite loss at step " + std::to_string(global));
        double norm = grads.l2_norm();
        entry.grad_norm = norm;
        if (norm > cfg.train_clip_norm && norm > 0.0)
            grads.scale(cfg.train_clip_norm / norm);
        model.params.axpy(-lr, grads);
        ++state.steps_done;
        if (global % cfg.train_log_interval == 0 || s + 1 == n_steps) {
            entry.perplexity = batch_assignments.empty()
                                   ? 0.0
                                   : codebook_perplexity(batch_assignments,
                                                         model.hp.codebook_size);
            log.push_back(entry);
        }
    }
    model.hp.beta = beta_target;
    return log;
}

TrainState train_stage1(const std::vector<Utterance>& corpus, const ExperimentConfig& cfg,
                        RngStream rng, std::vector<TrainLogEntry>* log) {
    TrainState state = init_stage1(cfg, corpus, rng);
    auto entries = train_stage1_steps(state, corpus, cfg, cfg.train_steps);
    if (log) *log = std::move(entries);
    return state;
}

}  // namespace qfv
