#include <doctest.h>

#include <cmath>
#include <vector>

#include "qfv/errors.hpp"
#include "qfv/rng.hpp"
#include "qfv/vq.hpp"

using namespace qfv;

namespace {

Codebook make_codebook(std::vector<std::vector<double>> rows) {
    Codebook cb;
    cb.k = rows.size();
    cb.dim = rows[0].size();
    for (const auto& r : rows) cb.embeddings.insert(cb.embeddings.end(), r.begin(), r.end());
    return cb;
}

// independent oracle: scan all rows, exact comparison, first minimum wins
size_t brute_force_argmin(const Codebook& cb, std::span<const double> z) {
    size_t best = 0;
    double best_d = 0.0;
    for (size_t i = 0; i < cb.k; ++i) {
        double d = 0.0;
        for (size_t j = 0; j < cb.dim; ++j) {
            double diff = z[j] - cb.embeddings[i * cb.dim + j];
            d += diff * diff;
        }
        if (i == 0 || d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("quantize picks the nearest row") {
    Codebook cb = make_codebook({{0.0, 0.0}, {1.0, 1.0}});
    auto a = quantize(cb, std::vector<double>{0.2, 0.1});
    CHECK(a.index == 0);  // distances 0.05 vs 1.45
    CHECK(a.quantized[0] == 0.0);
}

TEST_CASE("quantize exact match and single-row cases") {
    Codebook cb = make_codebook({{1, 0}, {0, 1}, {2, 2}, {0.5, -0.5}});
    auto a = quantize(cb, std::vector<double>{0.5, -0.5});
    CHECK(a.index == 3);
    Codebook one = make_codebook({{9.0, 9.0}});
    CHECK(quantize(one, std::vector<double>{-100.0, 3.0}).index == 0);
}

TEST_CASE("quantize matches brute force on 1000 random instances with ties") {
    RngStream rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
        size_t k = 1 + rng.next_below(128);
        size_t d = 1 + rng.next_below(6);
        Codebook cb;
        cb.k = k;
        cb.dim = d;
        cb.embeddings.resize(k * d);
        for (double& v : cb.embeddings) v = rng.next_gaussian();
        // duplicate a row now and then to force exact ties
        if (k > 1 && trial % 3 == 0) {
            size_t src = rng.next_below(k), dst = rng.next_below(k);
            for (size_t j = 0; j < d; ++j) cb.embeddings[dst * d + j] = cb.embeddings[src * d + j];
        }
        std::vector<double> z(d);
        for (double& v : z) v = rng.next_gaussian();
        if (trial % 5 == 0) {
            // land exactly on a (possibly duplicated) row
            size_t row = rng.next_below(k);
            for (size_t j = 0; j < d; ++j) z[j] = cb.embeddings[row * d + j];
        }
        CHECK(quantize(cb, z).index == brute_force_argmin(cb, z));
    }
}

TEST_CASE("vq_loss hand-derived single-token case") {
    Codebook cb = make_codebook({{0.0, 0.0}});
    std::vector<double> z{1.0, 0.0};
    std::vector<Assignment> assigns{quantize(cb, z)};
    auto result = vq_loss(cb, z, 1, assigns, 0.25);
    CHECK(result.quantization_loss == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(result.commitment_loss == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(result.d_codebook[0] == doctest::Approx(-2.0).epsilon(1e-15));
    CHECK(result.d_codebook[1] == doctest::Approx(0.0));
    CHECK(result.d_latents[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(result.d_latents[1] == doctest::Approx(0.0));
}

TEST_CASE("vq_loss vanishes at zero residual and with gamma 0") {
    Codebook cb = make_codebook({{0.3, -0.7}, {2.0, 2.0}});
    std::vector<double> z{0.3, -0.7};
    std::vector<Assignment> assigns{quantize(cb, z)};
    auto zero = vq_loss(cb, z, 1, assigns, 0.25);
    CHECK(zero.quantization_loss == 0.0);
    CHECK(zero.commitment_loss == 0.0);
    for (double v : zero.d_codebook) CHECK(v == 0.0);
    for (double v : zero.d_latents) CHECK(v == 0.0);

    std::vector<double> z2{1.0, 1.0};
    std::vector<Assignment> assigns2{quantize(cb, z2)};
    auto nogamma = vq_loss(cb, z2, 1, assigns2, 0.0);
    CHECK(nogamma.commitment_loss == 0.0);
}

TEST_CASE("vq_loss gradients match finite differences with stop-gradient frozen") {
    RngStream rng(32);
    size_t k = 5, d = 3, n = 4;
    Codebook cb;
    cb.k = k;
    cb.dim = d;
    cb.embeddings.resize(k * d);
    for (double& v : cb.embeddings) v = rng.next_gaussian();
    std::vector<double> z(n * d);
    for (double& v : z) v = rng.next_gaussian();
    std::vector<Assignment> assigns;
    for (size_t i = 0; i < n; ++i)
        assigns.push_back(quantize(cb, {z.data() + i * d, d}));
    const double gamma = 0.25;
    auto base = vq_loss(cb, z, n, assigns, gamma);

    // quantization loss as a function of the codebook, z frozen
    std::vector<double> z_frozen = z;
    for (size_t i = 0; i < k * d; ++i) {
        double eps = 1e-6, saved = cb.embeddings[i];
        cb.embeddings[i] = saved + eps;
        double fp = vq_loss(cb, z_frozen, n, assigns, gamma).quantization_loss;
        cb.embeddings[i] = saved - eps;
        double fm = vq_loss(cb, z_frozen, n, assigns, gamma).quantization_loss;
        cb.embeddings[i] = saved;
        CHECK(base.d_codebook[i] == doctest::Approx((fp - fm) / (2 * eps)).epsilon(1e-6));
    }
    // commitment loss as a function of z, assigned rows frozen
    for (size_t i = 0; i < n * d; ++i) {
        double eps = 1e-6, saved = z[i];
        z[i] = saved + eps;
        double fp = vq_loss(cb, z, n, assigns, gamma).commitment_loss;
        z[i] = saved - eps;
        double fm = vq_loss(cb, z, n, assigns, gamma).commitment_loss;
        z[i] = saved;
        CHECK(base.d_latents[i] == doctest::Approx((fp - fm) / (2 * eps)).epsilon(1e-6));
    }
}

TEST_CASE("one gradient step moves the assigned embedding toward the latent") {
    RngStream rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        Codebook cb;
        cb.k = 3;
        cb.dim = 2;
        cb.embeddings.resize(6);
        for (double& v : cb.embeddings) v = rng.next_gaussian();
        std::vector<double> z{rng.next_gaussian(), rng.next_gaussian()};
        std::vector<Assignment> assigns{quantize(cb, z)};
        auto result = vq_loss(cb, z, 1, assigns, 0.25);
        size_t k = assigns[0].index;
        double resid0 = z[0] - cb.embeddings[k * 2];
        double resid1 = z[1] - cb.embeddings[k * 2 + 1];
        if (resid0 == 0.0 && resid1 == 0.0) continue;
        double lr = 1e-3;
        double step0 = -lr * result.d_codebook[k * 2];
        double step1 = -lr * result.d_codebook[k * 2 + 1];
        CHECK(step0 * resid0 + step1 * resid1 > 0.0);
    }
}

TEST_CASE("straight_through copies gradients unchanged") {
    std::vector<double> up{0.3, -1.2, 0.0};
    auto out = straight_through(up);
    CHECK(out == up);
    std::vector<double> zero{0.0, 0.0};
    CHECK(straight_through(zero) == zero);
}

TEST_CASE("codebook perplexity closed forms") {
    std::vector<size_t> uniform{0, 1, 2, 3};
    CHECK(codebook_perplexity(uniform, 4) == doctest::Approx(4.0).epsilon(1e-12));
    std::vector<size_t> collapsed{2, 2, 2, 2, 2};
    CHECK(codebook_perplexity(collapsed, 4) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<size_t> half{0, 1, 0, 1};
    CHECK(codebook_perplexity(half, 4) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(codebook_perplexity({}, 4), DomainError);
}

TEST_CASE("init_codebook draws samples without replacement") {
    RngStream rng(34);
    std::vector<std::vector<double>> samples{{1, 1}, {2, 2}, {3, 3}};
    Codebook cb = init_codebook(3, 2, rng, &samples);
    std::vector<double> firsts{cb.embeddings[0], cb.embeddings[2], cb.embeddings[4]};
    std::sort(firsts.begin(), firsts.end());
    CHECK(firsts == std::vector<double>{1.0, 2.0, 3.0});

    RngStream r1(7), r2(7);
    Codebook a = init_codebook(4, 3, r1), b = init_codebook(4, 3, r2);
    CHECK(a.embeddings == b.embeddings);
    for (double v : a.embeddings) {
        CHECK(v >= -0.05);
        CHECK(v <= 0.05);
    }
    RngStream r3(8);
    CHECK_THROWS_AS(init_codebook(5, 2, r3, &samples), DomainError);
}
