#pragma once

#include <cstdint>
#include <string>

#include "qfv/corpus.hpp"

namespace qfv {

enum class PriorKind { independent, ar_continuous, ar_discrete };

std::string prior_kind_name(PriorKind kind);
PriorKind prior_kind_from_name(const std::string& name);

/// Whole-experiment configuration, parsed from `key = value` text with dotted
/// sections. Unknown keys are rejected.
struct ExperimentConfig {
    uint64_t seed = 12345;

    size_t corpus_train_utterances = 64;
    size_t corpus_test_utterances = 16;
    size_t corpus_vocab = 24;
    size_t corpus_min_tokens = 8;
    size_t corpus_max_tokens = 20;
    double corpus_f0_min_hz = 120.0;
    double corpus_f0_max_hz = 300.0;
    size_t corpus_dur_min_frames = 4;
    size_t corpus_dur_max_frames = 14;
    double corpus_energy_min = 0.4;
    double corpus_energy_max = 1.6;
    double corpus_noise_level = 0.02;
    size_t corpus_sample_rate = 16000;
    size_t corpus_stft_window = 512;
    size_t corpus_stft_hop = 200;
    size_t corpus_frame_bins = 128;

    size_t model_latent_dim = 3;
    size_t model_embed_dim = 32;
    size_t model_enc_hidden = 16;
    size_t model_ref_attn_dim = 16;
    size_t model_ref_value_dim = 32;
    size_t model_dec_hidden = 48;
    size_t model_dec_attn_dim = 16;
    size_t model_prenet_dim = 32;
    size_t model_codebook_size = 32;  // 0 disables quantization (baseline)
    double model_beta = 0.01;
    double model_gamma = 0.25;
    double model_frames_per_token = 9.0;
    double model_input_drop = 0.3;
    double model_attn_bias_sigma = 2.0;

    size_t train_steps = 1500;
    size_t train_batch = 8;
    double train_step_size = 1e-3;
    double train_decay_factor = 0.5;
    size_t train_decay_interval = 2000;
    double train_clip_norm = 5.0;
    size_t train_log_interval = 50;
    size_t train_beta_warmup_steps = 1000;

    std::string prior_kind = "independent";
    size_t prior_hidden = 64;
    size_t prior_epochs = 200;
    size_t prior_batch = 8;
    double prior_step_size = 1e-3;

    double sampling_scale = 1.0;
    size_t sampling_samples_per_utterance = 100;
    size_t sampling_utterances = 3;
    double sampling_frames_per_token = 9.0;
    double sampling_temperature = 1.0;

    size_t eval_griffin_lim_iters = 32;
    double eval_yin_threshold = 0.15;
    size_t eval_yin_window = 512;
    bool eval_mcd_include_c0 = false;

    std::string paths_corpus_train = "corpus_train.qfvc";
    std::string paths_corpus_test = "corpus_test.qfvc";

    CorpusSpec corpus_spec() const;
    void validate() const;

    /// Canonical `key = value` rendering (deterministic bytes; used for the
    /// checkpoint config echo and provenance digests).
    std::string canonical_text() const;

    /// FNV-1a over the canonical text, hex-encoded.
    std::string digest() const;

    static ExperimentConfig from_text(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
};

}  // namespace qfv
