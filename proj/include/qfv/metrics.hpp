#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "qfv/rng.hpp"

namespace qfv {

/// Row-major T x F matrix of spectrogram-like frames.
struct FrameMatrix {
    size_t t = 0;
    size_t f = 0;
    std::vector<double> v;

    FrameMatrix() = default;
    FrameMatrix(size_t t_, size_t f_) : t(t_), f(f_), v(t_ * f_, 0.0) {}
    double& at(size_t ti, size_t fi) { return v[ti * f + fi]; }
    double at(size_t ti, size_t fi) const { return v[ti * f + fi]; }
    std::span<const double> row(size_t ti) const { return {v.data() + ti * f, f}; }
    std::span<double> row(size_t ti) { return {v.data() + ti * f, f}; }
};

struct PitchTrack {
    std::vector<double> f0_hz;       // 0 when unvoiced
    std::vector<uint8_t> voiced;
    size_t size() const { return f0_hz.size(); }
};

/// Per-token prosody attributes. `defined[n]` is false for tokens that
/// received no frames (their attribute values are reported as 0).
struct ProsodyMeasurements {
    std::vector<double> relative_energy;
    std::vector<double> mean_f0_hz;
    std::vector<double> duration_ms;
    std::vector<uint8_t> defined;
    size_t tokens() const { return duration_ms.size(); }
};

/// Mean per-token standard deviation of each prosody attribute.
struct DiversityStats {
    double energy = 0.0;
    double f0_hz = 0.0;
    double duration_ms = 0.0;
};

/// In-place complex FFT; radix-2 when n is a power of two, otherwise a direct
/// DFT. `inverse` applies the 1/n scale.
void fft(std::vector<std::complex<double>>& a, bool inverse);

/// Hann-windowed magnitude STFT, F = window/2 bins. Magnitudes are scaled by
/// 2/sum(w) so a unit-amplitude in-band sinusoid peaks near 1. Window must be
/// even and >= hop; the waveform must cover at least one window.
FrameMatrix stft_mag(std::span<const double> waveform, size_t window, size_t hop);

/// Phase reconstruction by alternating magnitude substitution and
/// least-squares inversion. frames must be nonnegative with f == window/2.
std::vector<double> griffin_lim(const FrameMatrix& frames, size_t window, size_t hop,
                                size_t iterations, RngStream& rng);

/// Relative magnitude error ||,|STFT(x)| - frames,|| / ||frames|| used by the
/// Griffin-Lim convergence tests.
double spectral_error(std::span<const double> waveform, const FrameMatrix& frames,
                      size_t window, size_t hop);

/// YIN pitch tracker: difference function, cumulative mean normalized
/// difference, absolute threshold, parabolic interpolation. Frames start at
/// t*hop like stft_mag so tracks align with spectrogram frames when the same
/// frame/hop is used.
PitchTrack yin_f0(std::span<const double> waveform, size_t frame, size_t hop, double sample_rate,
                  double f0_min, double f0_max, double threshold = 0.15);

/// F0 frame error: voicing mismatch, or >20% pitch deviation when both voiced.
double ffe(const PitchTrack& reference, const PitchTrack& estimate);

/// 26-band triangular mel filterbank on magnitudes, log with floor 1e-10,
/// orthonormal DCT-II, first `n_coef` coefficients.
FrameMatrix mfcc(const FrameMatrix& frames, size_t n_coef = 13, double sample_rate = 16000.0,
                 size_t n_mel = 26);

/// Mel-cepstral distortion in dB, frame average of (10/ln10)*sqrt(2*sum d^2)
/// over coefficients 1..12 (0..12 when include_c0).
double mcd(const FrameMatrix& reference, const FrameMatrix& estimate, bool include_c0 = false);

/// Per-token prosody from frames + decoder attention + a pitch track of equal
/// frame count. Duration counts argmax-attention frames, energy is the mean
/// frame magnitude ratio, f0 averages voiced frames.
ProsodyMeasurements phoneme_prosody(const FrameMatrix& frames, const FrameMatrix& attention,
                                    const PitchTrack& pitch, double hop_ms);

/// Population stddev per token across samples, averaged over tokens.
DiversityStats diversity_stats(std::span<const ProsodyMeasurements> samples);

}  // namespace qfv
