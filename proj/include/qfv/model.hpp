#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfv/config.hpp"
#include "qfv/corpus.hpp"
#include "qfv/metrics.hpp"
#include "qfv/nn.hpp"
#include "qfv/rng.hpp"
#include "qfv/vq.hpp"

namespace qfv {

/// Stage-1 architecture sizes and loss weights.
struct ModelHyper {
    size_t vocab = 24;
    size_t embed_dim = 32;
    size_t enc_hidden = 16;
    size_t latent_dim = 3;
    size_t ref_attn_dim = 16;
    size_t ref_value_dim = 32;
    size_t dec_hidden = 64;
    size_t dec_attn_dim = 16;
    size_t prenet_dim = 32;
    size_t frame_bins = 256;
    size_t codebook_size = 32;  // 0 disables quantization
    double beta = 0.01;
    double gamma = 0.25;
    double frames_per_token = 9.0;
    double attn_bias_sigma = 2.0;
    // fraction of decoder steps whose previous-frame input is zeroed during
    // training; forces the latent/context path to learn spectral rendering
    double input_drop = 0.3;

    size_t enc_out() const { return 2 * enc_hidden; }
    size_t mem_dim() const { return enc_out() + latent_dim; }
    bool quantized() const { return codebook_size > 0; }

    static ModelHyper from_config(const ExperimentConfig& cfg);
};

/// Per-token diagonal Gaussian posterior parameters.
struct Posterior {
    size_t n = 0;
    size_t d = 0;
    std::vector<double> mu;         // n x d
    std::vector<double> log_sigma;  // n x d, clamped to [-10, 10]
    std::vector<double> sigma;      // n x d
};

/// Continuous latents plus class indices when quantization is active.
struct LatentSequence {
    size_t n = 0;
    size_t d = 0;
    std::vector<double> z;        // n x d
    std::vector<size_t> indices;  // empty when not quantized
    bool quantized() const { return !indices.empty(); }
};

struct DecoderOutput {
    FrameMatrix frames;     // T x F
    FrameMatrix attention;  // T x N, rows sum to 1
};

/// Frozen stop-gradient state captured at a parameter point; makes the
/// straight-through training objective a smooth function so finite
/// differences match the routed analytic gradient.
struct FrozenVq {
    std::vector<size_t> indices;
    std::vector<double> z0;  // n x d latents at the capture point
    std::vector<double> e0;  // n x d assigned codebook rows at the capture point
};

struct UttLossParts {
    double total = 0.0;
    double recon_mse = 0.0;
    double kl = 0.0;
    double quantization = 0.0;
    double commitment = 0.0;
    std::vector<size_t> assignments;
};

struct TrainLogEntry {
    size_t step = 0;
    double lr = 0.0;
    double total = 0.0;
    double recon_mse = 0.0;
    double kl = 0.0;
    double quantization = 0.0;
    double commitment = 0.0;
    double perplexity = 0.0;
    double grad_norm = 0.0;  // pre-clip
};

class QfvaeModel {
public:
    ModelHyper hp;
    ParamStore params;

    static QfvaeModel create(const ModelHyper& hp, RngStream& rng);

    /// Embedding lookup + small bidirectional tanh RNN; returns N x enc_out().
    std::vector<double> encode_tokens(std::span<const uint32_t> tokens) const;

    /// Scaled dot-product attention from token queries onto frame keys with a
    /// frame-position feature; returns per-token aligned vectors (N x P) and
    /// the row-stochastic weights (N x T).
    struct AlignResult {
        std::vector<double> aligned;
        FrameMatrix weights;
    };
    AlignResult align_reference(std::span<const double> encodings, size_t n_tokens,
                                const FrameMatrix& frames) const;

    Posterior posterior(std::span<const double> aligned, size_t n_tokens) const;

    LatentSequence reparam_sample(const Posterior& post, RngStream& rng) const;

    /// Quantize continuous latents against the model codebook (requires VQ).
    LatentSequence quantize_latents(const LatentSequence& continuous) const;

    Codebook codebook() const;
    void set_codebook(const Codebook& cb);

    /// Teacher-forced decode when `teacher` is given, else free-running for
    /// `free_frames` steps feeding back its own (nonnegative-clamped) output.
    DecoderOutput decode(std::span<const double> encodings, const LatentSequence& latents,
                         const FrameMatrix* teacher, size_t free_frames = 0) const;

    /// Full posterior pipeline on a reference utterance (encode, align,
    /// posterior). Convenience for copy synthesis and prior fitting.
    struct Analysis {
        std::vector<double> encodings;
        Posterior post;
    };
    Analysis analyze(const Utterance& utt) const;

    /// Training/checking objective for one utterance. `noise` is the fixed
    /// reparameterization draw (n_tokens x latent_dim). When `grads` is given,
    /// accumulates analytic gradients scaled by `weight`. When `frozen` is
    /// given, evaluates the stop-gradient surrogate frozen at that state.
    /// `frame_drop`, when nonempty (one flag per frame), zeroes the dropped
    /// frames' previous-frame input, as during training.
    UttLossParts utterance_loss(const Utterance& utt, std::span<const double> noise,
                                double weight, ParamStore* grads,
                                const FrozenVq* frozen = nullptr,
                                std::vector<double>* out_d_latents = nullptr,
                                std::span<const uint8_t> frame_drop = {}) const;

    /// Captures stop-gradient state at the current parameters.
    FrozenVq capture_frozen(const Utterance& utt, std::span<const double> noise) const;
};

/// Per-token KL to the standard normal prior: 1/2 sum(mu^2 + sigma^2 - 1 - 2 ln sigma).
std::vector<double> kl_standard(const Posterior& post);

/// ELBO-style loss on precomputed pieces: mean over frames of the squared
/// frame error plus beta * sum(kl). Returns gradients w.r.t. the predicted
/// frames and the kl values.
struct ElboResult {
    double loss = 0.0;
    FrameMatrix d_predicted;
    std::vector<double> d_kl;
};
ElboResult elbo_loss(const FrameMatrix& predicted, const FrameMatrix& target,
                     std::span<const double> kl_values, double beta);

/// Mini-batch SGD state for stage 1.
struct TrainState {
    QfvaeModel model;
    RngStream rng;
    size_t steps_done = 0;
};

/// Fresh model + codebook sample-init prepass (draws posterior samples from
/// the untrained encoder when quantization is enabled).
TrainState init_stage1(const ExperimentConfig& cfg, const std::vector<Utterance>& corpus,
                       RngStream rng);

/// Runs `n_steps` of batch SGD with step-size decay and global-norm clipping;
/// appends to and returns the training log.
std::vector<TrainLogEntry> train_stage1_steps(TrainState& state,
                                              const std::vector<Utterance>& corpus,
                                              const ExperimentConfig& cfg, size_t n_steps);

/// Convenience wrapper: init + train for cfg.train_steps.
TrainState train_stage1(const std::vector<Utterance>& corpus, const ExperimentConfig& cfg,
                        RngStream rng, std::vector<TrainLogEntry>* log = nullptr);

}  // namespace qfv
