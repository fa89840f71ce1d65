#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qfv/config.hpp"
#include "qfv/model.hpp"
#include "qfv/nn.hpp"
#include "qfv/rng.hpp"
#include "qfv/vq.hpp"

namespace qfv {

/// Closed-form KL between diagonal Gaussians:
/// sum_d [ln(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2].
double kl_gaussians(std::span<const double> mu_q, std::span<const double> sigma_q,
                    std::span<const double> mu_p, std::span<const double> sigma_p);

/// z_n ~ N(0, scale^2 I) per token, quantized when a codebook is given.
LatentSequence sample_independent(size_t n_tokens, size_t dim, double scale, RngStream& rng,
                                  const Codebook* codebook = nullptr);

struct PriorHyper {
    size_t latent_dim = 3;
    size_t enc_dim = 32;  // phoneme-encoding width it conditions on
    size_t hidden = 64;
    size_t codebook_size = 0;  // discrete prior only
};

/// Training item: frozen stage-1 posterior + phoneme encodings per utterance.
struct PriorTrainItem {
    Posterior post;
    std::vector<double> encodings;  // n x enc_dim
};

struct PriorTrainLog {
    std::vector<double> epoch_loss;  // mean per-token loss per epoch
};

/// Single-layer LSTM over [z_{n-1}; Y_n] with Gaussian output heads.
class ContinuousARPrior {
public:
    PriorHyper hp;
    ParamStore params;

    static ContinuousARPrior create(const PriorHyper& hp, RngStream& rng);

    /// Per-step prior parameters for a teacher sequence (mu_p, sigma_p, each
    /// n x d). Step n conditions on teacher z_{<n} and Y_n, zero initial state.
    struct Rollout {
        std::vector<double> mu;
        std::vector<double> sigma;
    };
    Rollout teacher_rollout(std::span<const double> teacher_z, std::span<const double> encodings,
                            size_t n_tokens) const;

    /// Sum over tokens of KL(q_n || p_n); accumulates analytic gradients
    /// scaled by weight when grads is given.
    double loss(const Posterior& q, std::span<const double> teacher_z,
                std::span<const double> encodings, double weight, ParamStore* grads) const;

    /// Ancestral sampling; quantizes the finished sequence when a codebook is
    /// given. mean_only forces sigma_p = 0 (deterministic mean trajectory).
    LatentSequence sample(std::span<const double> encodings, size_t n_tokens, RngStream& rng,
                          const Codebook* codebook = nullptr, bool mean_only = false) const;
};

/// Single-layer LSTM over [embed(k_{n-1}); Y_n] with a K-way softmax head.
/// The logits head starts at zero, so an untrained prior is exactly uniform.
class DiscreteARPrior {
public:
    PriorHyper hp;
    ParamStore params;

    static DiscreteARPrior create(const PriorHyper& hp, RngStream& rng);

    /// Sum over tokens of -ln P(k_n | k_{<n}, Y).
    double loss(std::span<const size_t> classes, std::span<const double> encodings,
                size_t n_tokens, double weight, ParamStore* grads) const;

    /// Ancestral sampling at the given temperature (0 = greedy argmax);
    /// latents are the codebook rows of the sampled classes.
    LatentSequence sample(std::span<const double> encodings, size_t n_tokens, RngStream& rng,
                          const Codebook& codebook, double temperature = 1.0) const;
};

/// Teacher-forced prior fits. Teacher inputs are posterior samples redrawn
/// each epoch; optimizer settings follow the stage-1 defaults.
ContinuousARPrior fit_prior_continuous(std::span<const PriorTrainItem> items,
                                       const ExperimentConfig& cfg, RngStream& rng,
                                       PriorTrainLog* log = nullptr);

DiscreteARPrior fit_prior_discrete(std::span<const PriorTrainItem> items, const Codebook& codebook,
                                   const ExperimentConfig& cfg, RngStream& rng,
                                   PriorTrainLog* log = nullptr);

/// Variant with externally fixed class sequences (no per-epoch redraw).
DiscreteARPrior fit_prior_discrete_fixed(std::span<const std::vector<size_t>> class_seqs,
                                         std::span<const std::vector<double>> encodings,
                                         size_t n_classes, const ExperimentConfig& cfg,
                                         RngStream& rng, PriorTrainLog* log = nullptr);

}  // namespace qfv
