#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "qfv/rng.hpp"

namespace qfv {

/// K x D table of quantization embeddings.
struct Codebook {
    size_t k = 0;
    size_t dim = 0;
    std::vector<double> embeddings;  // row-major K x D

    std::span<const double> row(size_t i) const {
        return {embeddings.data() + i * dim, dim};
    }
    std::span<double> row(size_t i) {
        return {embeddings.data() + i * dim, dim};
    }
};

/// Per-token quantization result.
struct Assignment {
    size_t index = 0;
    std::vector<double> quantized;
};

/// Nearest codebook row by squared Euclidean distance; ties break to the
/// smallest index.
Assignment quantize(const Codebook& codebook, std::span<const double> z);

/// Quantization + commitment losses with stop-gradient routing:
/// quantization gradient flows only to codebook rows, commitment gradient
/// only to the latents.
struct VqLossResult {
    double quantization_loss = 0.0;
    double commitment_loss = 0.0;
    std::vector<double> d_codebook;  // K x D, from the quantization term
    std::vector<double> d_latents;   // N x D, from the commitment term
};

VqLossResult vq_loss(const Codebook& codebook, std::span<const double> latents, size_t n_tokens,
                     std::span<const Assignment> assignments, double gamma);

/// Straight-through estimator: the gradient at the quantized vector is copied
/// unchanged past the quantization boundary.
std::vector<double> straight_through(std::span<const double> upstream);

/// exp(entropy) of the empirical class usage; in [1, K].
double codebook_perplexity(std::span<const size_t> assignments, size_t k);

/// Draw K rows from `samples` without replacement when provided, otherwise
/// uniform on [-0.05, 0.05]^D.
Codebook init_codebook(size_t k, size_t dim, RngStream& rng,
                       const std::vector<std::vector<double>>* samples = nullptr);

}  // namespace qfv
