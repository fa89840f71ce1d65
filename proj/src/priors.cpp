#include "qfv/priors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qfv/errors.hpp"
#include "qfv/numerics.hpp"

namespace qfv {

namespace {
constexpr double kLogSigmaClamp = 10.0;
}

double kl_gaussians(std::span<const double> mu_q, std::span<const double> sigma_q,
                    std::span<const double> mu_p, std::span<const double> sigma_p) {
    size_t d = mu_q.size();
    if (sigma_q.size() != d || mu_p.size() != d || sigma_p.size() != d)
        throw DimensionError("kl_gaussians: dimension mismatch");
    double acc = 0.0;
    for (size_t j = 0; j < d; ++j) {
        if (!(sigma_q[j] > 0.0) || !(sigma_p[j] > 0.0))
            throw DomainError("kl_gaussians: non-positive sigma");
        double dm = mu_q[j] - mu_p[j];
        acc += std::log(sigma_p[j] / sigma_q[j]) +
               (sigma_q[j] * sigma_q[j] + dm * dm) / (2.0 * sigma_p[j] * sigma_p[j]) - 0.5;
    }
    return std::max(acc, 0.0);
}

LatentSequence sample_independent(size_t n_tokens, size_t dim, double scale, RngStream& rng,
                                  const Codebook* codebook) {
    if (scale < 0.0) throw DomainError("sample_independent: scale must be nonnegative");
    LatentSequence seq;
    seq.n = n_tokens;
    seq.d = dim;
    seq.z.resize(n_tokens * dim);
    for (double& v : seq.z) v = scale * rng.next_gaussian();
    if (codebook) {
        if (codebook->dim != dim) throw DimensionError("sample_independent: codebook dim mismatch");
        seq.indices.resize(n_tokens);
        for (size_t i = 0; i < n_tokens; ++i) {
            Assignment a = quantize(*codebook, {seq.z.data() + i * dim, dim});
            seq.indices[i] = a.index;
        }
    }
    return seq;
}

// ---- continuous AR prior ----

ContinuousARPrior ContinuousARPrior::create(const PriorHyper& hp, RngStream& rng) {
    ContinuousARPrior prior;
    prior.hp = hp;
    size_t in = hp.latent_dim + hp.enc_dim, h = hp.hidden;
    init_uniform_fanin(prior.params.add("pr.Wx", {4 * h, in}), in, rng);
    init_uniform_fanin(prior.params.add("pr.Wh", {4 * h, h}), h, rng);
    ParamBlock& b = prior.params.add("pr.b", {4 * h});
    for (size_t j = 0; j < h; ++j) b[h + j] = 1.0;  // forget-gate bias
    prior.params.add("pr.Wmu", {hp.latent_dim, h});
    prior.params.add("pr.bmu", {hp.latent_dim});
    prior.params.add("pr.Wls", {hp.latent_dim, h});
    prior.params.add("pr.bls", {hp.latent_dim});
    return prior;
}

ContinuousARPrior::Rollout ContinuousARPrior::teacher_rollout(std::span<const double> teacher_z,
                                                              std::span<const double> encodings,
                                                              size_t n_tokens) const {
    size_t d = hp.latent_dim, e = hp.enc_dim, h = hp.hidden;
    if (teacher_z.size() != n_tokens * d) throw DimensionError("teacher_rollout: z shape mismatch");
    if (encodings.size() != n_tokens * e)
        throw DimensionError("teacher_rollout: encoding shape mismatch");
    Rollout out;
    out.mu.assign(n_tokens * d, 0.0);
    out.sigma.assign(n_tokens * d, 0.0);
    std::vector<double> hs(h, 0.0), cs(h, 0.0), input(d + e);
    LstmCache cache;
    const ParamBlock& wx = params.at("pr.Wx");
    const ParamBlock& wh = params.at("pr.Wh");
    const ParamBlock& b = params.at("pr.b");
    const ParamBlock& wmu = params.at("pr.Wmu");
    const ParamBlock& bmu = params.at("pr.bmu");
    const ParamBlock& wls = params.at("pr.Wls");
    const ParamBlock& bls = params.at("pr.bls");
    std::vector<double> ls(d);
    for (size_t i = 0; i < n_tokens; ++i) {
        std::fill(input.begin(), input.begin() + d, 0.0);
        if (i > 0) std::copy(teacher_z.begin() + (i - 1) * d, teacher_z.begin() + i * d,
                             input.begin());
        std::copy(encodings.begin() + i * e, encodings.begin() + (i + 1) * e, input.begin() + d);
        lstm_step(wx, wh, b, input, hs, cs, cache);
        linear_forward(wmu, bmu, hs, {out.mu.data() + i * d, d});
        linear_forward(wls, bls, hs, ls);
        for (size_t j = 0; j < d; ++j)
            out.sigma[i * d + j] = std::exp(std::clamp(ls[j], -kLogSigmaClamp, kLogSigmaClamp));
    }
    return out;
}

double ContinuousARPrior::loss(const Posterior& q, std::span<const double> teacher_z,
                               std::span<const double> encodings, double weight,
                               ParamStore* grads) const {
    size_t n = q.n, d = hp.latent_dim, e = hp.enc_dim, h = hp.hidden;
    if (q.d != d) throw DimensionError("prior loss: latent dim mismatch");
    if (teacher_z.size() != n * d || encodings.size() != n * e)
        throw DimensionError("prior loss: teacher shape mismatch");

    const ParamBlock& wx = params.at("pr.Wx");
    const ParamBlock& wh = params.at("pr.Wh");
    const ParamBlock& b = params.at("pr.b");
    const ParamBlock& wmu = params.at("pr.Wmu");
    const ParamBlock& bmu = params.at("pr.bmu");
    const ParamBlock& wls = params.at("pr.Wls");
    const ParamBlock& bls = params.at("pr.bls");

    std::vector<LstmCache> caches(n);
    std::vector<double> mu_p(n * d), ls_p(n * d), sigma_p(n * d);
    std::vector<double> hs(h, 0.0), cs(h, 0.0), input(d + e);
    for (size_t i = 0; i < n; ++i) {
        std::fill(input.begin(), input.begin() + d, 0.0);
        if (i > 0) std::copy(teacher_z.begin() + (i - 1) * d, teacher_z.begin() + i * d,
                             input.begin());
        std::copy(encodings.begin() + i * e, encodings.begin() + (i + 1) * e, input.begin() + d);
        lstm_step(wx, wh, b, input, hs, cs, caches[i]);
        linear_forward(wmu, bmu, hs, {mu_p.data() + i * d, d});
        linear_forward(wls, bls, hs, {ls_p.data() + i * d, d});
        for (size_t j = 0; j < d; ++j) {
            double& ls = ls_p[i * d + j];
            ls = std::clamp(ls, -kLogSigmaClamp, kLogSigmaClamp);
            sigma_p[i * d + j] = std::exp(ls);
        }
    }

    double total = 0.0;
    for (size_t i = 0; i < n; ++i)
        total += kl_gaussians({q.mu.data() + i * d, d}, {q.sigma.data() + i * d, d},
                              {mu_p.data() + i * d, d}, {sigma_p.data() + i * d, d});
    if (!grads) return total;

    ParamStore& g = *grads;
    ParamBlock& gwx = g.at("pr.Wx");
    ParamBlock& gwh = g.at("pr.Wh");
    ParamBlock& gb = g.at("pr.b");
    ParamBlock& gwmu = g.at("pr.Wmu");
    ParamBlock& gbmu = g.at("pr.bmu");
    ParamBlock& gwls = g.at("pr.Wls");
    ParamBlock& gbls = g.at("pr.bls");

    std::vector<double> dh(n * h, 0.0), dc(h, 0.0), dmu(d), dls(d), dhprev(h);
    for (size_t i = 0; i < n; ++i) {
        std::span<double> dhi{dh.data() + i * h, h};
        for (size_t j = 0; j < d; ++j) {
            double sp = sigma_p[i * d + j], sq = q.sigma[i * d + j];
            double dm = mu_p[i * d + j] - q.mu[i * d + j];
            dmu[j] = weight * dm / (sp * sp);
            double dls_raw = weight * (1.0 - (sq * sq + dm * dm) / (sp * sp));
            bool clamped = ls_p[i * d + j] <= -kLogSigmaClamp || ls_p[i * d + j] >= kLogSigmaClamp;
            dls[j] = clamped ? 0.0 : dls_raw;
        }
        linear_backward(wmu, caches[i].h, dmu, gwmu, gbmu, dhi);
        linear_backward(wls, caches[i].h, dls, gwls, gbls, dhi);
    }
    std::fill(dc.begin(), dc.end(), 0.0);
    for (size_t i = n; i-- > 0;) {
        std::fill(dhprev.begin(), dhprev.end(), 0.0);
        lstm_step_backward(wx, wh, caches[i], {dh.data() + i * h, h}, dc, gwx, gwh, gb, {},
                           dhprev);
        if (i > 0)
            for (size_t j = 0; j < h; ++j) dh[(i - 1) * h + j] += dhprev[j];
    }
    return total;
}

LatentSequence ContinuousARPrior::sample(std::span<const double> encodings, size_t n_tokens,
                                         RngStream& rng, const Codebook* codebook,
                                         bool mean_only) const {
    size_t d = hp.latent_dim, e = hp.enc_dim, h = hp.hidden;
    if (encodings.size() != n_tokens * e) throw DimensionError("prior sample: encoding mismatch");
    LatentSequence seq;
    seq.n = n_tokens;
    seq.d = d;
    seq.z.assign(n_tokens * d, 0.0);
    std::vector<double> hs(h, 0.0), cs(h, 0.0), input(d + e), mu(d), ls(d);
    LstmCache cache;
    const ParamBlock& wx = params.at("pr.Wx");
    const ParamBlock& wh = params.at("pr.Wh");
    const ParamBlock& b = params.at("pr.b");
    const ParamBlock& wmu = params.at("pr.Wmu");
    const ParamBlock& bmu = params.at("pr.bmu");
    const ParamBlock& wls = params.at("pr.Wls");
    const ParamBlock& bls = params.at("pr.bls");
    for (size_t i = 0; i < n_tokens; ++i) {
        std::fill(input.begin(), input.begin() + d, 0.0);
        if (i > 0) std::copy(seq.z.begin() + (i - 1) * d, seq.z.begin() + i * d, input.begin());
        std::copy(encodings.begin() + i * e, encodings.begin() + (i + 1) * e, input.begin() + d);
        lstm_step(wx, wh, b, input, hs, cs, cache);
        linear_forward(wmu, bmu, hs, mu);
        linear_forward(wls, bls, hs, ls);
        for (size_t j = 0; j < d; ++j) {
            double sigma = mean_only
                               ? 0.0
                               : std::exp(std::clamp(ls[j], -kLogSigmaClamp, kLogSigmaClamp));
            seq.z[i * d + j] = mu[j] + sigma * rng.next_gaussian();
        }
    }
    if (codebook) {
        seq.indices.resize(n_tokens);
        for (size_t i = 0; i < n_tokens; ++i) {
            Assignment a = quantize(*codebook, {seq.z.data() + i * d, d});
            seq.indices[i] = a.index;
        }
    }
    return seq;
}

// ---- discrete AR prior ----

DiscreteARPrior DiscreteARPrior::create(const PriorHyper& hp, RngStream& rng) {
    if (hp.codebook_size == 0) throw DomainError("discrete prior: needs a codebook size");
    DiscreteARPrior prior;
    prior.hp = hp;
    size_t in = hp.latent_dim + hp.enc_dim, h = hp.hidden;
    init_uniform(prior.params.add("pr.embed", {hp.codebook_size, hp.latent_dim}), -0.1, 0.1, rng);
    init_uniform_fanin(prior.params.add("pr.Wx", {4 * h, in}), in, rng);
    init_uniform_fanin(prior.params.add("pr.Wh", {4 * h, h}), h, rng);
    ParamBlock& b = prior.params.add("pr.b", {4 * h});
    for (size_t j = 0; j < h; ++j) b[h + j] = 1.0;
    // zero logits head: the untrained prior is exactly uniform (loss = ln K)
    prior.params.add("pr.Wlog", {hp.codebook_size, h});
    prior.params.add("pr.blog", {hp.codebook_size});
    return prior;
}

double DiscreteARPrior::loss(std::span<const size_t> classes, std::span<const double> encodings,
                             size_t n_tokens, double weight, ParamStore* grads) const {
    size_t d = hp.latent_dim, e = hp.enc_dim, h = hp.hidden, k = hp.codebook_size;
    if (classes.size() != n_tokens || encodings.size() != n_tokens * e)
        throw DimensionError("discrete prior loss: shape mismatch");
    for (size_t c : classes)
        if (c >= k) throw DomainError("discrete prior loss: class index out of range");

    const ParamBlock& emb = params.at("pr.embed");
    const ParamBlock& wx = params.at("pr.Wx");
    const ParamBlock& wh = params.at("pr.Wh");
    const ParamBlock& b = params.at("pr.b");
    const ParamBlock& wlog = params.at("pr.Wlog");
    const ParamBlock& blog = params.at("pr.blog");

    std::vector<LstmCache> caches(n_tokens);
    std::vector<double> logits(n_tokens * k);
    std::vector<double> hs(h, 0.0), cs(h, 0.0), input(d + e);
    for (size_t i = 0; i < n_tokens; ++i) {
        std::fill(input.begin(), input.begin() + d, 0.0);
        if (i > 0) {
            const double* row = emb.data() + classes[i - 1] * d;
            std::copy(row, row + d, input.begin());
        }
        std::copy(encodings.begin() + i * e, encodings.begin() + (i + 1) * e, input.begin() + d);
        lstm_step(wx, wh, b, input, hs, cs, caches[i]);
        linear_forward(wlog, blog, hs, {logits.data() + i * k, k});
    }

    double total = 0.0;
    std::vector<std::vector<double>> logp(n_tokens);
    for (size_t i = 0; i < n_tokens; ++i) {
        logp[i] = log_softmax({logits.data() + i * k, k});
        total -= logp[i][classes[i]];
    }
    if (!grads) return total;

    ParamStore& g = *grads;
    ParamBlock& gem = g.at("pr.embed");
    ParamBlock& gwx = g.at("pr.Wx");
    ParamBlock& gwh = g.at("pr.Wh");
    ParamBlock& gb = g.at("pr.b");
    ParamBlock& gwl = g.at("pr.Wlog");
    ParamBlock& gbl = g.at("pr.blog");

    std::vector<double> dh(n_tokens * h, 0.0), dc(h, 0.0), dlogit(k), dinput(d + e), dhprev(h);
    for (size_t i = 0; i < n_tokens; ++i) {
        for (size_t j = 0; j < k; ++j)
            dlogit[j] = weight * (std::exp(logp[i][j]) - (j == classes[i] ? 1.0 : 0.0));
        linear_backward(wlog, caches[i].h, dlogit, gwl, gbl, {dh.data() + i * h, h});
    }
    for (size_t i = n_tokens; i-- > 0;) {
        std::fill(dinput.begin(), dinput.end(), 0.0);
        std::fill(dhprev.begin(), dhprev.end(), 0.0);
        lstm_step_backward(wx, wh, caches[i], {dh.data() + i * h, h}, dc, gwx, gwh, gb, dinput,
                           dhprev);
        if (i > 0) {
            for (size_t j = 0; j < h; ++j) dh[(i - 1) * h + j] += dhprev[j];
            double* grow = gem.data() + classes[i - 1] * d;
            for (size_t j = 0; j < d; ++j) grow[j] += dinput[j];
        }
    }
    return total;
}

LatentSequence DiscreteARPrior::sample(std::span<const double> encodings, size_t n_tokens,
                                       RngStream& rng, const Codebook& codebook,
                                       double temperature) const {
    size_t d = hp.latent_dim, e = hp.enc_dim, h = hp.hidden, k = hp.codebook_size;
    if (codebook.k != k || codebook.dim != d)
        throw DimensionError("discrete prior sample: codebook mismatch");
    if (encodings.size() != n_tokens * e)
        throw DimensionError("discrete prior sample: encoding mismatch");
    if (temperature < 0.0) throw DomainError("discrete prior sample: negative temperature");

    LatentSequence seq;
    seq.n = n_tokens;
    seq.d = d;
    seq.z.assign(n_tokens * d, 0.0);
    seq.indices.assign(n_tokens, 0);
    const ParamBlock& emb = params.at("pr.embed");
    const ParamBlock& wx = params.at("pr.Wx");
    const ParamBlock& wh = params.at("pr.Wh");
    const ParamBlock& b = params.at("pr.b");
    const ParamBlock& wlog = params.at("pr.Wlog");
    const ParamBlock& blog = params.at("pr.blog");
    std::vector<double> hs(h, 0.0), cs(h, 0.0), input(d + e), logits(k);
    LstmCache cache;
    for (size_t i = 0; i < n_tokens; ++i) {
        std::fill(input.begin(), input.begin() + d, 0.0);
        if (i > 0) {
            const double* row = emb.data() + seq.indices[i - 1] * d;
            std::copy(row, row + d, input.begin());
        }
        std::copy(encodings.begin() + i * e, encodings.begin() + (i + 1) * e, input.begin() + d);
        lstm_step(wx, wh, b, input, hs, cs, cache);
        linear_forward(wlog, blog, hs, logits);
        size_t pick;
        if (temperature == 0.0) {
            pick = 0;
            for (size_t j = 1; j < k; ++j)
                if (logits[j] > logits[pick]) pick = j;
        } else {
            std::vector<double> scaled(k);
            for (size_t j = 0; j < k; ++j) scaled[j] = logits[j] / temperature;
            auto lp = log_softmax(scaled);
            std::vector<double> probs(k);
            for (size_t j = 0; j < k; ++j) probs[j] = std::exp(lp[j]);
            double total = std::accumulate(probs.begin(), probs.end(), 0.0);
            for (double& p : probs) p /= total;
            pick = sample_categorical(rng, probs);
        }
        seq.indices[i] = pick;
        const double* row = codebook.embeddings.data() + pick * d;
        std::copy(row, row + d, seq.z.begin() + i * d);
    }
    return seq;
}

// ---- fitting loops ----

namespace {

struct SgdSchedule {
    double step_size;
    double decay_factor;
    size_t decay_interval;
    double clip_norm;
    size_t step = 0;

    double lr() const {
        return step_size * std::pow(decay_factor, static_cast<double>(step / decay_interval));
    }
};

template <typename LossFn, typename Params>
void sgd_epochs(Params& params, size_t n_items, size_t batch, size_t epochs, SgdSchedule& sched,
                RngStream& rng, const LossFn& item_loss, PriorTrainLog* log,
                size_t total_tokens) {
    ParamStore grads = params.zeros_like();
    std::vector<size_t> order(n_items);
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        // deterministic shuffle per epoch
        for (size_t i = 0; i + 1 < order.size(); ++i) {
            size_t j = i + static_cast<size_t>(rng.next_below(order.size() - i));
            std::swap(order[i], order[j]);
        }
        double epoch_total = 0.0;
        for (size_t start = 0; start < n_items; start += batch) {
            size_t count = std::min(batch, n_items - start);
            grads.zero();
            for (size_t bi = 0; bi < count; ++bi)
                epoch_total += item_loss(order[start + bi], 1.0 / static_cast<double>(count),
                                         &grads, epoch);
            double norm = grads.l2_norm();
            if (norm > sched.clip_norm && norm > 0.0) grads.scale(sched.clip_norm / norm);
            params.axpy(-sched.lr(), grads);
            ++sched.step;
        }
        if (!std::isfinite(epoch_total))
            throw TrainingError("prior fit: non-finite loss at epoch " + std::to_string(epoch));
        if (log) log->epoch_loss.push_back(epoch_total / static_cast<double>(total_tokens));
    }
}

}  // namespace

ContinuousARPrior fit_prior_continuous(std::span<const PriorTrainItem> items,
                                       const ExperimentConfig& cfg, RngStream& rng,
                                       PriorTrainLog* log) {
    if (items.empty()) throw DomainError("fit_prior_continuous: empty training set");
    PriorHyper hp;
    hp.latent_dim = items[0].post.d;
    hp.enc_dim = items[0].encodings.size() / items[0].post.n;
    hp.hidden = cfg.prior_hidden;
    ContinuousARPrior prior = ContinuousARPrior::create(hp, rng);

    size_t total_tokens = 0;
    for (const auto& item : items) total_tokens += item.post.n;

    // teacher z redrawn once per epoch per utterance
    std::vector<std::vector<double>> teacher(items.size());
    size_t last_epoch = static_cast<size_t>(-1);
    SgdSchedule sched{cfg.prior_step_size, cfg.train_decay_factor, cfg.train_decay_interval,
                      cfg.train_clip_norm};
    RngStream noise_rng = rng.split(0x7e11);
    auto item_loss = [&](size_t idx, double weight, ParamStore* grads, size_t epoch) {
        if (epoch != last_epoch) {
            for (size_t i = 0; i < items.size(); ++i) {
                const Posterior& q = items[i].post;
                teacher[i].resize(q.n * q.d);
                for (size_t j = 0; j < teacher[i].size(); ++j)
                    teacher[i][j] = q.mu[j] + q.sigma[j] * noise_rng.next_gaussian();
            }
            last_epoch = epoch;
        }
        const auto& item = items[idx];
        return prior.loss(item.post, teacher[idx], item.encodings, weight, grads);
    };
    sgd_epochs(prior.params, items.size(), cfg.prior_batch, cfg.prior_epochs, sched, rng,
               item_loss, log, total_tokens);
    return prior;
}

DiscreteARPrior fit_prior_discrete(std::span<const PriorTrainItem> items, const Codebook& codebook,
                                   const ExperimentConfig& cfg, RngStream& rng,
                                   PriorTrainLog* log) {
    if (items.empty()) throw DomainError("fit_prior_discrete: empty training set");
    PriorHyper hp;
    hp.latent_dim = items[0].post.d;
    hp.enc_dim = items[0].encodings.size() / items[0].post.n;
    hp.hidden = cfg.prior_hidden;
    hp.codebook_size = codebook.k;
    DiscreteARPrior prior = DiscreteARPrior::create(hp, rng);

    size_t total_tokens = 0;
    for (const auto& item : items) total_tokens += item.post.n;

    std::vector<std::vector<size_t>> classes(items.size());
    size_t last_epoch = static_cast<size_t>(-1);
    SgdSchedule sched{cfg.prior_step_size, cfg.train_decay_factor, cfg.train_decay_interval,
                      cfg.train_clip_norm};
    RngStream noise_rng = rng.split(0x7e12);
    auto item_loss = [&](size_t idx, double weight, ParamStore* grads, size_t epoch) {
        if (epoch != last_epoch) {
            // one posterior sample per utterance per epoch, quantized
            for (size_t i = 0; i < items.size(); ++i) {
                const Posterior& q = items[i].post;
                classes[i].resize(q.n);
                std::vector<double> z(q.d);
                for (size_t nn = 0; nn < q.n; ++nn) {
                    for (size_t j = 0; j < q.d; ++j)
                        z[j] = q.mu[nn * q.d + j] +
                               q.sigma[nn * q.d + j] * noise_rng.next_gaussian();
                    classes[i][nn] = quantize(codebook, z).index;
                }
            }
            last_epoch = epoch;
        }
        const auto& item = items[idx];
        return prior.loss(classes[idx], item.encodings, item.post.n, weight, grads);
    };
    sgd_epochs(prior.params, items.size(), cfg.prior_batch, cfg.prior_epochs, sched, rng,
               item_loss, log, total_tokens);
    return prior;
}

DiscreteARPrior fit_prior_discrete_fixed(std::span<const std::vector<size_t>> class_seqs,
                                         std::span<const std::vector<double>> encodings,
                                         size_t n_classes, const ExperimentConfig& cfg,
                                         RngStream& rng, PriorTrainLog* log) {
    if (class_seqs.empty() || class_seqs.size() != encodings.size())
        throw DomainError("fit_prior_discrete_fixed: empty or misaligned training set");
    PriorHyper hp;
    hp.latent_dim = 3;
    hp.enc_dim = encodings[0].size() / class_seqs[0].size();
    hp.hidden = cfg.prior_hidden;
    hp.codebook_size = n_classes;
    DiscreteARPrior prior = DiscreteARPrior::create(hp, rng);

    size_t total_tokens = 0;
    for (const auto& seq : class_seqs) total_tokens += seq.size();

    SgdSchedule sched{cfg.prior_step_size, cfg.train_decay_factor, cfg.train_decay_interval,
                      cfg.train_clip_norm};
    auto item_loss = [&](size_t idx, double weight, ParamStore* grads, size_t) {
        return prior.loss(class_seqs[idx], encodings[idx], class_seqs[idx].size(), weight, grads);
    };
    sgd_epochs(prior.params, class_seqs.size(), cfg.prior_batch, cfg.prior_epochs, sched, rng,
               item_loss, log, total_tokens);
    return prior;
}

}  // namespace qfv
