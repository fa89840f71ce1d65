#include <doctest.h>

#include <cmath>
#include <vector>

#include "qfv/errors.hpp"
#include "qfv/numerics.hpp"
#include "qfv/priors.hpp"

using namespace qfv;

namespace {

PriorHyper tiny_prior_hyper(size_t k = 0) {
    PriorHyper hp;
    hp.latent_dim = 2;
    hp.enc_dim = 4;
    hp.hidden = 6;
    hp.codebook_size = k;
    return hp;
}

Posterior make_posterior(size_t n, size_t d, RngStream& rng, double mu_scale = 1.0,
                         double sigma_lo = 0.5, double sigma_hi = 1.5) {
    Posterior q;
    q.n = n;
    q.d = d;
    q.mu.resize(n * d);
    q.log_sigma.resize(n * d);
    q.sigma.resize(n * d);
    for (size_t i = 0; i < n * d; ++i) {
        q.mu[i] = mu_scale * rng.next_gaussian();
        double s = sigma_lo + (sigma_hi - sigma_lo) * rng.next_double();
        q.sigma[i] = s;
        q.log_sigma[i] = std::log(s);
    }
    return q;
}

std::vector<double> random_vec(size_t n, RngStream& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.next_gaussian();
    return v;
}

ExperimentConfig prior_config(size_t epochs, double step_size = 1e-3) {
    ExperimentConfig cfg;
    cfg.prior_epochs = epochs;
    cfg.prior_step_size = step_size;
    cfg.prior_hidden = 16;
    cfg.prior_batch = 8;
    return cfg;
}

}  // namespace

TEST_CASE("kl_gaussians closed forms") {
    std::vector<double> mu{0.3}, sigma{0.8};
    CHECK(kl_gaussians(mu, sigma, mu, sigma) == 0.0);

    std::vector<double> zero{0.0}, one{1.0}, two{2.0};
    double expected = std::log(2.0) + 1.0 / 8.0 - 0.5;
    CHECK(kl_gaussians(zero, one, zero, two) == doctest::Approx(expected).epsilon(1e-14));

    CHECK(kl_gaussians(one, one, zero, one) == doctest::Approx(0.5).epsilon(1e-14));

    std::vector<double> neg{-1.0};
    CHECK_THROWS_AS(kl_gaussians(zero, neg, zero, one), DomainError);
}

TEST_CASE("kl_gaussians is nonnegative, zero only at equality, and matches MC") {
    RngStream rng(61);
    for (int trial = 0; trial < 100; ++trial) {
        size_t d = 1 + rng.next_below(4);
        std::vector<double> mq = random_vec(d, rng), mp = random_vec(d, rng);
        std::vector<double> sq(d), sp(d);
        for (size_t j = 0; j < d; ++j) {
            sq[j] = 0.3 + 1.5 * rng.next_double();
            sp[j] = 0.3 + 1.5 * rng.next_double();
        }
        double kl = kl_gaussians(mq, sq, mp, sp);
        CHECK(kl >= 0.0);
        CHECK(kl_gaussians(mq, sq, mq, sq) <= 1e-12);
    }

    // Monte-Carlo oracle on one fixed draw
    std::vector<double> mq{0.4, -0.2}, sq{0.7, 1.3}, mp{-0.1, 0.3}, sp{1.1, 0.6};
    double closed = kl_gaussians(mq, sq, mp, sp);
    RngStream mc(62);
    double sum = 0.0, sumsq = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < 2; ++j) {
            double eps = mc.next_gaussian();
            double z = mq[j] + sq[j] * eps;
            double lq = -0.5 * eps * eps - std::log(sq[j]);
            double dz = (z - mp[j]) / sp[j];
            double lp = -0.5 * dz * dz - std::log(sp[j]);
            acc += lq - lp;
        }
        sum += acc;
        sumsq += acc * acc;
    }
    double mean = sum / draws;
    double se = std::sqrt((sumsq / draws - mean * mean) / draws);
    CHECK(std::abs(closed - mean) < 3.0 * se);
}

TEST_CASE("sample_independent scaling and quantization") {
    RngStream rng(63);
    LatentSequence zero = sample_independent(5, 3, 0.0, rng);
    for (double v : zero.z) CHECK(v == 0.0);

    double sum = 0.0, sumsq = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        LatentSequence s = sample_independent(1, 1, 1.0, rng);
        sum += s.z[0];
        sumsq += s.z[0] * s.z[0];
    }
    double sd = std::sqrt(sumsq / draws - (sum / draws) * (sum / draws));
    CHECK(sd > 0.97);
    CHECK(sd < 1.03);

    double sum2 = 0.0, sumsq2 = 0.0;
    for (int i = 0; i < draws; ++i) {
        LatentSequence s = sample_independent(1, 1, 0.2, rng);
        sum2 += s.z[0];
        sumsq2 += s.z[0] * s.z[0];
    }
    double sd2 = std::sqrt(sumsq2 / draws - (sum2 / draws) * (sum2 / draws));
    CHECK(std::abs(sd2 - 0.2) < 0.01);

    // scale 0 with a codebook maps every token to the row nearest the origin
    Codebook cb;
    cb.k = 3;
    cb.dim = 2;
    cb.embeddings = {1.0, 1.0, 0.1, -0.1, -2.0, 0.5};
    LatentSequence q = sample_independent(4, 2, 0.0, rng, &cb);
    for (size_t idx : q.indices) CHECK(idx == 1);
}

TEST_CASE("continuous prior loss gradient check") {
    RngStream rng(64);
    ContinuousARPrior prior = ContinuousARPrior::create(tiny_prior_hyper(), rng);
    // randomize the zero heads so the check probes a generic point
    for (const char* name : {"pr.Wmu", "pr.bmu", "pr.Wls", "pr.bls"})
        for (double& v : prior.params.at(name).value) v = 0.3 * rng.next_gaussian();

    size_t n = 5;
    Posterior q = make_posterior(n, 2, rng);
    std::vector<double> teacher = random_vec(n * 2, rng);
    std::vector<double> y = random_vec(n * 4, rng, 0.5);

    ParamStore grads = prior.params.zeros_like();
    prior.loss(q, teacher, y, 1.0, &grads);
    auto flat = prior.params.flatten();
    auto analytic = grads.flatten();
    auto loss_fn = [&](std::span<const double> p) {
        ContinuousARPrior copy = prior;
        copy.params.unflatten(p);
        return copy.loss(q, teacher, y, 1.0, nullptr);
    };
    GradReport report = grad_check("prior-kl", loss_fn, flat, analytic, 1e-5);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("discrete prior loss gradient check and uniform init") {
    RngStream rng(65);
    DiscreteARPrior prior = DiscreteARPrior::create(tiny_prior_hyper(5), rng);
    size_t n = 6;
    std::vector<size_t> classes{0, 3, 1, 4, 2, 2};
    std::vector<double> y = random_vec(n * 4, rng, 0.5);

    // zero logits head: loss is exactly n * ln K
    CHECK(prior.loss(classes, y, n, 1.0, nullptr) ==
          doctest::Approx(static_cast<double>(n) * std::log(5.0)).epsilon(1e-12));

    for (double& v : prior.params.at("pr.Wlog").value) v = 0.2 * rng.next_gaussian();
    for (double& v : prior.params.at("pr.blog").value) v = 0.2 * rng.next_gaussian();
    ParamStore grads = prior.params.zeros_like();
    prior.loss(classes, y, n, 1.0, &grads);
    auto flat = prior.params.flatten();
    auto analytic = grads.flatten();
    auto loss_fn = [&](std::span<const double> p) {
        DiscreteARPrior copy = prior;
        copy.params.unflatten(p);
        return copy.loss(classes, y, n, 1.0, nullptr);
    };
    GradReport report = grad_check("prior-ce", loss_fn, flat, analytic, 1e-5);
    CHECK(report.max_rel_error < 1e-4);

    std::vector<size_t> bad{9, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(prior.loss(bad, y, n, 1.0, nullptr), DomainError);
}

TEST_CASE("continuous prior fit recovers the standard normal optimum") {
    RngStream rng(66);
    size_t n = 10, d = 2, e = 4;
    std::vector<double> y(n * e, 0.3);  // constant conditioning
    std::vector<PriorTrainItem> items;
    for (int i = 0; i < 24; ++i) {
        PriorTrainItem item;
        item.post.n = n;
        item.post.d = d;
        item.post.mu.assign(n * d, 0.0);
        item.post.log_sigma.assign(n * d, 0.0);
        item.post.sigma.assign(n * d, 1.0);
        item.encodings = y;
        items.push_back(item);
    }
    ExperimentConfig cfg = prior_config(400, 5e-3);
    PriorTrainLog log;
    ContinuousARPrior prior = fit_prior_continuous(items, cfg, rng, &log);
    CHECK(log.epoch_loss.back() < 1e-3);  // per-token KL -> 0
}

TEST_CASE("continuous prior learns linear latent dynamics") {
    RngStream rng(67);
    size_t n = 12, d = 2, e = 3;
    std::vector<PriorTrainItem> items;
    for (int u = 0; u < 32; ++u) {
        PriorTrainItem item;
        item.post.n = n;
        item.post.d = d;
        item.post.mu.resize(n * d);
        item.post.log_sigma.assign(n * d, std::log(1e-3));
        item.post.sigma.assign(n * d, 1e-3);
        std::vector<double> z(d);
        for (size_t j = 0; j < d; ++j) z[j] = rng.next_gaussian();
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < d; ++j) {
                item.post.mu[i * d + j] = z[j];
                z[j] = 0.5 * z[j];
            }
        }
        item.encodings.assign(n * e, 0.1);
        items.push_back(item);
    }
    ExperimentConfig cfg = prior_config(600, 5e-3);
    cfg.prior_hidden = 16;
    ContinuousARPrior prior = fit_prior_continuous(items, cfg, rng, nullptr);

    // held-out check: mu_p should track 0.5 * z_{n-1}
    double err = 0.0;
    size_t count = 0;
    for (int u = 0; u < 8; ++u) {
        std::vector<double> z(n * d);
        double cur0 = rng.next_gaussian(), cur1 = rng.next_gaussian();
        for (size_t i = 0; i < n; ++i) {
            z[i * d] = cur0;
            z[i * d + 1] = cur1;
            cur0 *= 0.5;
            cur1 *= 0.5;
        }
        std::vector<double> y(n * e, 0.1);
        auto roll = prior.teacher_rollout(z, y, n);
        for (size_t i = 1; i < n; ++i) {
            for (size_t j = 0; j < d; ++j) {
                err += std::abs(roll.mu[i * d + j] - 0.5 * z[(i - 1) * d + j]);
                ++count;
            }
        }
    }
    CHECK(err / static_cast<double>(count) < 0.05);
}

TEST_CASE("continuous prior training loss trends downward") {
    RngStream rng(68);
    size_t n = 8, d = 2, e = 3;
    std::vector<PriorTrainItem> items;
    for (int u = 0; u < 16; ++u) {
        PriorTrainItem item;
        item.post = make_posterior(n, d, rng, 0.8, 0.4, 0.9);
        item.encodings = random_vec(n * e, rng, 0.4);
        items.push_back(item);
    }
    ExperimentConfig cfg = prior_config(60);
    PriorTrainLog log;
    fit_prior_continuous(items, cfg, rng, &log);
    REQUIRE(log.epoch_loss.size() == 60);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += log.epoch_loss[i];
        tail += log.epoch_loss[log.epoch_loss.size() - 1 - i];
    }
    CHECK(tail < head);  // moving average decreases
}

TEST_CASE("continuous prior sampling determinism and mean rollout") {
    RngStream rng(69);
    ContinuousARPrior prior = ContinuousARPrior::create(tiny_prior_hyper(), rng);
    for (double& v : prior.params.at("pr.Wmu").value) v = 0.2 * rng.next_gaussian();
    size_t n = 7;
    std::vector<double> y = random_vec(n * 4, rng, 0.5);
    RngStream s1(5), s2(5);
    auto a = prior.sample(y, n, s1);
    auto b = prior.sample(y, n, s2);
    CHECK(a.z == b.z);
    RngStream s3(6), s4(7);
    auto m1 = prior.sample(y, n, s3, nullptr, /*mean_only=*/true);
    auto m2 = prior.sample(y, n, s4, nullptr, /*mean_only=*/true);
    CHECK(m1.z == m2.z);  // deterministic regardless of the stream
}

TEST_CASE("AR samples are smoother than independent ones after fitting smooth posteriors") {
    RngStream rng(70);
    size_t n = 15, d = 3, e = 4;
    std::vector<PriorTrainItem> items;
    for (int u = 0; u < 48; ++u) {
        PriorTrainItem item;
        item.post.n = n;
        item.post.d = d;
        item.post.mu.resize(n * d);
        item.post.log_sigma.assign(n * d, std::log(0.1));
        item.post.sigma.assign(n * d, 0.1);
        std::vector<double> state(d, 0.0);
        for (size_t j = 0; j < d; ++j) state[j] = 0.6 * rng.next_gaussian();
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < d; ++j) {
                item.post.mu[i * d + j] = state[j];
                state[j] = 0.85 * state[j] + 0.3 * rng.next_gaussian();
            }
        }
        item.encodings = random_vec(n * e, rng, 0.3);
        items.push_back(item);
    }
    ExperimentConfig cfg = prior_config(150, 3e-3);
    ContinuousARPrior prior = fit_prior_continuous(items, cfg, rng, nullptr);

    auto discontinuity = [&](const LatentSequence& seq) {
        double acc = 0.0;
        for (size_t i = 1; i < seq.n; ++i) {
            double ss = 0.0;
            for (size_t j = 0; j < seq.d; ++j) {
                double diff = seq.z[i * seq.d + j] - seq.z[(i - 1) * seq.d + j];
                ss += diff * diff;
            }
            acc += std::sqrt(ss);
        }
        return acc / static_cast<double>(seq.n - 1);
    };

    size_t wins = 0;
    const size_t pairs = 100;
    for (size_t p = 0; p < pairs; ++p) {
        std::vector<double> y = random_vec(n * e, rng, 0.3);
        RngStream ar_rng = rng.split(2 * p), ind_rng = rng.split(2 * p + 1);
        auto ar = prior.sample(y, n, ar_rng);
        auto ind = sample_independent(n, d, 1.0, ind_rng);
        if (discontinuity(ar) <= discontinuity(ind)) ++wins;
    }
    CHECK(wins >= 62);  // one-sided sign test at p < 0.05
}

TEST_CASE("discrete prior fit on constant and uniform class data") {
    RngStream rng(71);
    size_t n = 12, e = 4, k = 8;
    std::vector<std::vector<size_t>> constant(24, std::vector<size_t>(n, 5));
    std::vector<std::vector<double>> ys;
    for (int u = 0; u < 24; ++u) ys.push_back(random_vec(n * e, rng, 0.3));

    ExperimentConfig cfg = prior_config(300, 3e-2);
    PriorTrainLog clog;
    fit_prior_discrete_fixed(constant, ys, k, cfg, rng, &clog);
    CHECK(clog.epoch_loss.back() < 0.01);  // point mass reached

    std::vector<std::vector<size_t>> uniform(24, std::vector<size_t>(n));
    for (auto& seq : uniform)
        for (auto& c : seq) c = rng.next_below(k);
    ExperimentConfig ucfg = prior_config(80);
    PriorTrainLog ulog;
    DiscreteARPrior uprior = fit_prior_discrete_fixed(uniform, ys, k, ucfg, rng, &ulog);

    // held-out uniform data: cross-entropy stays at the ln K floor
    double total = 0.0;
    size_t count = 0;
    for (int u = 0; u < 16; ++u) {
        std::vector<size_t> seq(n);
        for (auto& c : seq) c = rng.next_below(k);
        std::vector<double> y = random_vec(n * e, rng, 0.3);
        total += uprior.loss(seq, y, n, 1.0, nullptr);
        count += n;
    }
    CHECK(std::abs(total / static_cast<double>(count) - std::log(8.0)) < 0.05);
}

TEST_CASE("discrete prior sampling: greedy mode, index ranges, marginals") {
    RngStream rng(72);
    size_t k = 6, d = 2, e = 3, n = 10;
    Codebook cb;
    cb.k = k;
    cb.dim = d;
    cb.embeddings = random_vec(k * d, rng);
    DiscreteARPrior prior = DiscreteARPrior::create(
        PriorHyper{.latent_dim = d, .enc_dim = e, .hidden = 8, .codebook_size = k}, rng);
    for (double& v : prior.params.at("pr.Wlog").value) v = 0.3 * rng.next_gaussian();
    std::vector<double> y = random_vec(n * e, rng, 0.3);

    RngStream g1(1), g2(2);
    auto greedy1 = prior.sample(y, n, g1, cb, 0.0);
    auto greedy2 = prior.sample(y, n, g2, cb, 0.0);
    CHECK(greedy1.indices == greedy2.indices);  // argmax path ignores the stream

    RngStream s(3);
    auto sampled = prior.sample(y, n, s, cb, 1.0);
    for (size_t idx : sampled.indices) CHECK(idx < k);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j)
            CHECK(sampled.z[i * d + j] == cb.embeddings[sampled.indices[i] * d + j]);
}

TEST_CASE("discrete prior fit on iid data reproduces the unigram marginal") {
    RngStream rng(73);
    size_t n = 10, e = 3, k = 4;
    std::vector<double> marginal{0.4, 0.3, 0.2, 0.1};
    std::vector<std::vector<size_t>> seqs;
    std::vector<std::vector<double>> ys;
    for (int u = 0; u < 40; ++u) {
        std::vector<size_t> seq(n);
        for (auto& c : seq) c = sample_categorical(rng, marginal);
        seqs.push_back(seq);
        ys.push_back(std::vector<double>(n * e, 0.2));
    }
    ExperimentConfig cfg = prior_config(150, 1e-2);
    DiscreteARPrior prior = fit_prior_discrete_fixed(seqs, ys, k, cfg, rng, nullptr);

    Codebook cb;
    cb.k = k;
    cb.dim = 3;
    cb.embeddings.assign(k * 3, 0.0);
    PriorHyper hp = prior.hp;
    (void)hp;
    std::vector<double> y(n * e, 0.2);
    std::vector<double> counts(k, 0.0);
    size_t total = 0;
    for (int s = 0; s < 1000 / 10; ++s) {
        RngStream sr = rng.split(9000 + s);
        // give the sampler codebook rows of the right dim
        Codebook cb2;
        cb2.k = k;
        cb2.dim = prior.hp.latent_dim;
        cb2.embeddings.assign(k * prior.hp.latent_dim, 0.0);
        auto sample = prior.sample(y, n, sr, cb2, 1.0);
        for (size_t idx : sample.indices) {
            counts[idx] += 1.0;
            ++total;
        }
    }
    double tv = 0.0;
    for (size_t j = 0; j < k; ++j)
        tv += 0.5 * std::abs(counts[j] / static_cast<double>(total) - marginal[j]);
    CHECK(tv < 0.1);
}
