#include "qfv/vq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qfv/errors.hpp"

namespace qfv {

Assignment quantize(const Codebook& codebook, std::span<const double> z) {
    if (codebook.k == 0) throw DomainError("quantize: empty codebook");
    if (z.size() != codebook.dim) throw DimensionError("quantize: latent dimension mismatch");
    size_t best = 0;
    double best_dist = 0.0;
    for (size_t i = 0; i < codebook.k; ++i) {
        const double* e = codebook.embeddings.data() + i * codebook.dim;
        double d = 0.0;
        for (size_t j = 0; j < codebook.dim; ++j) {
            double diff = z[j] - e[j];
            d += diff * diff;
        }
        if (i == 0 || d < best_dist) {
            best_dist = d;
            best = i;
        }
    }
    Assignment a;
    a.index = best;
    a.quantized.assign(codebook.row(best).begin(), codebook.row(best).end());
    return a;
}

VqLossResult vq_loss(const Codebook& codebook, std::span<const double> latents, size_t n_tokens,
                     std::span<const Assignment> assignments, double gamma) {
    if (gamma < 0.0) throw DomainError("vq_loss: gamma must be nonnegative");
    size_t dim = codebook.dim;
    if (latents.size() != n_tokens * dim || assignments.size() != n_tokens)
        throw DimensionError("vq_loss: latents/assignments misaligned");

    VqLossResult result;
    result.d_codebook.assign(codebook.k * dim, 0.0);
    result.d_latents.assign(n_tokens * dim, 0.0);
    for (size_t n = 0; n < n_tokens; ++n) {
        size_t k = assignments[n].index;
        if (k >= codebook.k) throw DimensionError("vq_loss: assignment index out of range");
        const double* z = latents.data() + n * dim;
        const double* e = codebook.embeddings.data() + k * dim;
        for (size_t j = 0; j < dim; ++j) {
            double resid = z[j] - e[j];
            result.quantization_loss += resid * resid;
            result.commitment_loss += gamma * resid * resid;
            // stop-gradient: quantization term moves embeddings toward sg[z],
            // commitment term moves latents toward sg[e]
            result.d_codebook[k * dim + j] += 2.0 * (e[j] - z[j]);
            result.d_latents[n * dim + j] += 2.0 * gamma * resid;
        }
    }
    return result;
}

std::vector<double> straight_through(std::span<const double> upstream) {
    return std::vector<double>(upstream.begin(), upstream.end());
}

double codebook_perplexity(std::span<const size_t> assignments, size_t k) {
    if (assignments.empty()) throw DomainError("codebook_perplexity: empty assignment set");
    std::vector<double> counts(k, 0.0);
    for (size_t a : assignments) {
        if (a >= k) throw DomainError("codebook_perplexity: index out of range");
        counts[a] += 1.0;
    }
    double total = static_cast<double>(assignments.size());
    double entropy = 0.0;
    for (double c : counts) {
        if (c > 0.0) {
            double p = c / total;
            entropy -= p * std::log(p);
        }
    }
    return std::exp(entropy);
}

Codebook init_codebook(size_t k, size_t dim, RngStream& rng,
                       const std::vector<std::vector<double>>* samples) {
    if (k < 1 || dim < 1) throw DomainError("init_codebook: K and D must be >= 1");
    Codebook cb;
    cb.k = k;
    cb.dim = dim;
    cb.embeddings.assign(k * dim, 0.0);
    if (samples) {
        if (samples->size() < k)
            throw DomainError("init_codebook: fewer latent samples than codebook entries");
        // partial Fisher-Yates: pick K indices without replacement
        std::vector<size_t> idx(samples->size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        for (size_t i = 0; i < k; ++i) {
            size_t j = i + static_cast<size_t>(rng.next_below(idx.size() - i));
            std::swap(idx[i], idx[j]);
            const auto& s = (*samples)[idx[i]];
            if (s.size() != dim) throw DimensionError("init_codebook: sample dimension mismatch");
            std::copy(s.begin(), s.end(), cb.embeddings.begin() + i * dim);
        }
    } else {
        for (double& v : cb.embeddings) v = -0.05 + 0.1 * rng.next_double();
    }
    return cb;
}

}  // namespace qfv
