#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qfv/metrics.hpp"
#include "qfv/rng.hpp"

namespace qfv {

/// Per-token ground-truth prosody recorded at generation time.
struct TokenTruth {
    uint32_t duration_frames = 0;
    double mean_f0_hz = 0.0;
    double energy = 0.0;
};

/// Corpus unit: token ids, spectrogram frames, waveform, prosody truth.
struct Utterance {
    std::string id;
    std::vector<uint32_t> tokens;
    FrameMatrix frames;
    std::vector<double> waveform;
    std::vector<TokenTruth> truth;

    size_t total_frames() const { return frames.t; }
};

struct CorpusSpec {
    size_t utterance_count = 64;
    size_t vocab = 24;
    size_t min_tokens = 8;
    size_t max_tokens = 20;
    double f0_min_hz = 120.0;
    double f0_max_hz = 300.0;
    size_t dur_min_frames = 4;
    size_t dur_max_frames = 14;
    double energy_min = 0.4;
    double energy_max = 1.6;
    double noise_level = 0.02;
    double sample_rate = 16000.0;
    size_t stft_window = 512;
    size_t stft_hop = 200;
    // stored spectrogram band: the harmonic stack lives below ~1.5 kHz, so
    // frames keep only the lowest bins (128 of 256 = 0..4 kHz by default)
    size_t frame_bins = 128;
    uint64_t seed = 12345;

    double hop_ms() const { return static_cast<double>(stft_hop) / sample_rate * 1000.0; }
    void validate() const;
};

/// Fixed harmonic amplitude profile for a token id (fundamental + 4 partials).
/// Pure function of the id, independent of any corpus rng.
std::vector<double> token_timbre(uint32_t token_id);

/// Synthesize one utterance: per-token duration / F0 / energy draws, harmonic
/// stack with phase-continuous F0, short linear ramps across token boundaries,
/// a low noise floor, then STFT frames. Truth records the drawn values.
Utterance gen_utterance(RngStream& rng, const CorpusSpec& spec, const std::string& id);

/// Corpus container format `QFVC`: bit-exact round trip, little-endian 64-bit
/// floats, length-prefixed records.
void write_corpus(const std::string& path, const std::vector<Utterance>& utterances);
std::vector<Utterance> read_corpus(const std::string& path);

/// Deterministic disjoint split; train gets round(fraction * n) utterances.
std::pair<std::vector<Utterance>, std::vector<Utterance>> split_corpus(
    const std::vector<Utterance>& utterances, double train_fraction, uint64_t seed);

}  // namespace qfv
