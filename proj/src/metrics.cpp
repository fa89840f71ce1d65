#include "qfv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qfv/errors.hpp"

namespace qfv {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
    size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= static_cast<double>(n);
}

void dft_direct(std::vector<std::complex<double>>& a, bool inverse) {
    size_t n = a.size();
    std::vector<std::complex<double>> out(n);
    double sign = inverse ? 1.0 : -1.0;
    for (size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (size_t j = 0; j < n; ++j) {
            double ang = sign * 2.0 * kPi * static_cast<double>(k * j) / static_cast<double>(n);
            acc += a[j] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = inverse ? acc / static_cast<double>(n) : acc;
    }
    a = std::move(out);
}

std::vector<double> hann_window(size_t n) {
    std::vector<double> w(n);
    for (size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

size_t frame_count(size_t samples, size_t window, size_t hop) {
    return (samples - window) / hop + 1;
}

/// Complex STFT without magnitude normalization.
std::vector<std::vector<std::complex<double>>> stft_complex(std::span<const double> x,
                                                            const std::vector<double>& w,
                                                            size_t hop) {
    size_t window = w.size();
    size_t t_count = frame_count(x.size(), window, hop);
    std::vector<std::vector<std::complex<double>>> frames(t_count);
    std::vector<std::complex<double>> buf(window);
    for (size_t t = 0; t < t_count; ++t) {
        const double* seg = x.data() + t * hop;
        for (size_t j = 0; j < window; ++j) buf[j] = {seg[j] * w[j], 0.0};
        fft(buf, false);
        frames[t] = buf;
    }
    return frames;
}

/// Least-squares inverse of half-spectra (bins 0..window/2-1, Nyquist = 0).
std::vector<double> istft_lse(const std::vector<std::vector<std::complex<double>>>& spectra,
                              const std::vector<double>& w, size_t hop) {
    size_t window = w.size();
    size_t half = window / 2;
    size_t t_count = spectra.size();
    size_t length = (t_count - 1) * hop + window;
    std::vector<double> num(length, 0.0), den(length, 0.0);
    std::vector<std::complex<double>> buf(window);
    for (size_t t = 0; t < t_count; ++t) {
        for (size_t kk = 0; kk < half; ++kk) buf[kk] = spectra[t][kk];
        buf[half] = {0.0, 0.0};
        for (size_t kk = half + 1; kk < window; ++kk) buf[kk] = std::conj(spectra[t][window - kk]);
        fft(buf, true);
        size_t off = t * hop;
        for (size_t j = 0; j < window; ++j) {
            num[off + j] += w[j] * buf[j].real();
            den[off + j] += w[j] * w[j];
        }
    }
    for (size_t i = 0; i < length; ++i) num[i] = den[i] > 1e-12 ? num[i] / den[i] : 0.0;
    return num;
}

}  // namespace

void fft(std::vector<std::complex<double>>& a, bool inverse) {
    if (a.empty()) return;
    if (is_pow2(a.size()))
        fft_radix2(a, inverse);
    else
        dft_direct(a, inverse);
}

FrameMatrix stft_mag(std::span<const double> waveform, size_t window, size_t hop) {
    if (hop == 0 || window < hop) throw DomainError("stft_mag: require window >= hop > 0");
    if (window % 2 != 0) throw DomainError("stft_mag: window must be even");
    if (waveform.size() < window) throw DomainError("stft_mag: waveform shorter than one window");
    auto w = hann_window(window);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    double norm = 2.0 / wsum;
    auto spectra = stft_complex(waveform, w, hop);
    FrameMatrix out(spectra.size(), window / 2);
    for (size_t t = 0; t < out.t; ++t)
        for (size_t k = 0; k < out.f; ++k) out.at(t, k) = std::abs(spectra[t][k]) * norm;
    return out;
}

std::vector<double> griffin_lim(const FrameMatrix& frames, size_t window, size_t hop,
                                size_t iterations, RngStream& rng) {
    if (frames.f > window / 2 || frames.f == 0)
        throw DimensionError("griffin_lim: frames must have at most window/2 bins");
    if (hop == 0 || window < hop || window % 2 != 0)
        throw DomainError("griffin_lim: bad window/hop");
    for (double v : frames.v)
        if (v < 0.0) throw DomainError("griffin_lim: negative magnitude");

    auto w = hann_window(window);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    double denorm = wsum / 2.0;  // invert the stft_mag scaling

    size_t half = window / 2;
    // bins beyond frames.f are clamped to zero magnitude (band-limited input)
    std::vector<std::vector<std::complex<double>>> spectra(
        frames.t, std::vector<std::complex<double>>(half, {0.0, 0.0}));
    for (size_t t = 0; t < frames.t; ++t) {
        for (size_t k = 0; k < frames.f; ++k) {
            double mag = frames.at(t, k) * denorm;
            double phase = (k == 0) ? 0.0 : rng.next_double() * 2.0 * kPi;
            spectra[t][k] = std::polar(mag, phase);
        }
    }
    std::vector<double> x;
    for (size_t it = 0; it < iterations; ++it) {
        x = istft_lse(spectra, w, hop);
        auto est = stft_complex(x, w, hop);
        for (size_t t = 0; t < frames.t; ++t) {
            for (size_t k = 0; k < half; ++k) {
                double mag = k < frames.f ? frames.at(t, k) * denorm : 0.0;
                double a = std::abs(est[t][k]);
                spectra[t][k] = a > 1e-300 ? est[t][k] * (mag / a) : std::complex<double>(mag, 0.0);
            }
        }
    }
    return istft_lse(spectra, w, hop);
}

double spectral_error(std::span<const double> waveform, const FrameMatrix& frames,
                      size_t window, size_t hop) {
    FrameMatrix est = stft_mag(waveform, window, hop);
    if (est.t != frames.t || est.f < frames.f)
        throw DimensionError("spectral_error: frame count mismatch");
    double num = 0.0, den = 0.0;
    for (size_t t = 0; t < frames.t; ++t) {
        for (size_t k = 0; k < frames.f; ++k) {
            double d = est.at(t, k) - frames.at(t, k);
            num += d * d;
            den += frames.at(t, k) * frames.at(t, k);
        }
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

PitchTrack yin_f0(std::span<const double> waveform, size_t frame, size_t hop, double sample_rate,
                  double f0_min, double f0_max, double threshold) {
    if (f0_min <= 0.0 || f0_max <= f0_min || f0_max >= sample_rate / 2.0)
        throw DomainError("yin_f0: invalid f0 search range");
    if (hop == 0) throw DomainError("yin_f0: hop must be positive");
    if (frame > waveform.size()) throw DomainError("yin_f0: frame longer than waveform");
    size_t tau_min = std::max<size_t>(1, static_cast<size_t>(sample_rate / f0_max));
    size_t tau_max = static_cast<size_t>(std::ceil(sample_rate / f0_min));
    size_t integration = frame / 2;
    if (tau_max > frame - integration)
        throw DomainError("yin_f0: frame too short for the requested f0 range");

    size_t t_count = frame_count(waveform.size(), frame, hop);
    PitchTrack track;
    track.f0_hz.assign(t_count, 0.0);
    track.voiced.assign(t_count, 0);

    std::vector<double> d(tau_max + 1, 0.0), cmnd(tau_max + 1, 1.0);
    for (size_t t = 0; t < t_count; ++t) {
        const double* x = waveform.data() + t * hop;
        double running = 0.0;
        for (size_t tau = 1; tau <= tau_max; ++tau) {
            double acc = 0.0;
            for (size_t j = 0; j < integration; ++j) {
                double diff = x[j] - x[j + tau];
                acc += diff * diff;
            }
            d[tau] = acc;
            running += acc;
            cmnd[tau] = running > 0.0 ? d[tau] * static_cast<double>(tau) / running : 1.0;
        }
        size_t pick = 0;
        for (size_t tau = tau_min; tau <= tau_max; ++tau) {
            if (cmnd[tau] < threshold) {
                pick = tau;
                while (pick + 1 <= tau_max && cmnd[pick + 1] < cmnd[pick]) ++pick;
                break;
            }
        }
        if (pick == 0) continue;  // unvoiced
        double tau_star = static_cast<double>(pick);
        if (pick > 1 && pick < tau_max) {
            double c0 = cmnd[pick - 1], c1 = cmnd[pick], c2 = cmnd[pick + 1];
            double denom = c0 - 2.0 * c1 + c2;
            if (std::abs(denom) > 1e-12) {
                double delta = 0.5 * (c0 - c2) / denom;
                tau_star += std::clamp(delta, -1.0, 1.0);
            }
        }
        double f0 = std::clamp(sample_rate / tau_star, f0_min, f0_max);
        track.f0_hz[t] = f0;
        track.voiced[t] = 1;
    }
    return track;
}

double ffe(const PitchTrack& reference, const PitchTrack& estimate) {
    if (reference.size() != estimate.size()) throw DimensionError("ffe: track length mismatch");
    if (reference.size() == 0) throw DomainError("ffe: empty pitch tracks");
    size_t errors = 0;
    for (size_t t = 0; t < reference.size(); ++t) {
        bool rv = reference.voiced[t] != 0, ev = estimate.voiced[t] != 0;
        if (rv != ev) {
            ++errors;
        } else if (rv && ev) {
            if (std::abs(estimate.f0_hz[t] - reference.f0_hz[t]) > 0.2 * reference.f0_hz[t])
                ++errors;
        }
    }
    return static_cast<double>(errors) / static_cast<double>(reference.size());
}

FrameMatrix mfcc(const FrameMatrix& frames, size_t n_coef, double sample_rate, size_t n_mel) {
    constexpr double kLogFloor = 1e-10;
    auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    double nyquist = sample_rate / 2.0;
    double mel_max = hz_to_mel(nyquist);

    // triangle corner positions in fractional bins
    std::vector<double> corners(n_mel + 2);
    for (size_t i = 0; i < corners.size(); ++i) {
        double mel = mel_max * static_cast<double>(i) / static_cast<double>(n_mel + 1);
        double hz = 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
        corners[i] = hz / nyquist * static_cast<double>(frames.f);
    }

    FrameMatrix out(frames.t, n_coef);
    std::vector<double> band(n_mel), logband(n_mel);
    for (size_t t = 0; t < frames.t; ++t) {
        for (size_t m = 0; m < n_mel; ++m) {
            double lo = corners[m], mid = corners[m + 1], hi = corners[m + 2];
            double acc = 0.0;
            size_t k0 = static_cast<size_t>(std::max(0.0, std::floor(lo)));
            size_t k1 = std::min(frames.f, static_cast<size_t>(std::ceil(hi)) + 1);
            for (size_t k = k0; k < k1; ++k) {
                double kk = static_cast<double>(k);
                double weight = 0.0;
                if (kk >= lo && kk <= mid && mid > lo)
                    weight = (kk - lo) / (mid - lo);
                else if (kk > mid && kk <= hi && hi > mid)
                    weight = (hi - kk) / (hi - mid);
                acc += weight * frames.at(t, k);
            }
            band[m] = acc;
            logband[m] = std::log(std::max(acc, kLogFloor));
        }
        for (size_t d = 0; d < n_coef; ++d) {
            double alpha = d == 0 ? std::sqrt(1.0 / static_cast<double>(n_mel))
                                  : std::sqrt(2.0 / static_cast<double>(n_mel));
            double acc = 0.0;
            for (size_t m = 0; m < n_mel; ++m)
                acc += std::cos(kPi * static_cast<double>(d) * (static_cast<double>(m) + 0.5) /
                                static_cast<double>(n_mel)) *
                       logband[m];
            out.at(t, d) = alpha * acc;
        }
    }
    return out;
}

double mcd(const FrameMatrix& reference, const FrameMatrix& estimate, bool include_c0) {
    if (reference.t != estimate.t || reference.f != estimate.f)
        throw DimensionError("mcd: cepstra shape mismatch");
    if (reference.t == 0) throw DomainError("mcd: empty cepstra");
    size_t start = include_c0 ? 0 : 1;
    double factor = 10.0 / std::log(10.0);
    double total = 0.0;
    for (size_t t = 0; t < reference.t; ++t) {
        double ss = 0.0;
        for (size_t d = start; d < reference.f; ++d) {
            double diff = reference.at(t, d) - estimate.at(t, d);
            ss += diff * diff;
        }
        total += factor * std::sqrt(2.0 * ss);
    }
    return total / static_cast<double>(reference.t);
}

ProsodyMeasurements phoneme_prosody(const FrameMatrix& frames, const FrameMatrix& attention,
                                    const PitchTrack& pitch, double hop_ms) {
    if (attention.t != frames.t) throw DimensionError("phoneme_prosody: attention/frames mismatch");
    if (pitch.size() != frames.t) throw DimensionError("phoneme_prosody: pitch length mismatch");
    size_t n_tokens = attention.f;
    for (size_t t = 0; t < attention.t; ++t) {
        double sum = 0.0;
        for (size_t n = 0; n < n_tokens; ++n) sum += attention.at(t, n);
        if (std::abs(sum - 1.0) > 1e-6)
            throw DomainError("phoneme_prosody: attention row not stochastic");
    }

    std::vector<double> frame_mag(frames.t, 0.0);
    double utt_mag = 0.0;
    for (size_t t = 0; t < frames.t; ++t) {
        double acc = 0.0;
        for (size_t k = 0; k < frames.f; ++k) acc += frames.at(t, k);
        frame_mag[t] = acc / static_cast<double>(frames.f);
        utt_mag += frame_mag[t];
    }
    utt_mag /= static_cast<double>(frames.t);

    std::vector<size_t> count(n_tokens, 0);
    std::vector<double> mag_sum(n_tokens, 0.0), f0_sum(n_tokens, 0.0);
    std::vector<size_t> voiced_count(n_tokens, 0);
    for (size_t t = 0; t < frames.t; ++t) {
        size_t best = 0;
        for (size_t n = 1; n < n_tokens; ++n)
            if (attention.at(t, n) > attention.at(t, best)) best = n;
        ++count[best];
        mag_sum[best] += frame_mag[t];
        if (pitch.voiced[t]) {
            f0_sum[best] += pitch.f0_hz[t];
            ++voiced_count[best];
        }
    }

    ProsodyMeasurements out;
    out.relative_energy.assign(n_tokens, 0.0);
    out.mean_f0_hz.assign(n_tokens, 0.0);
    out.duration_ms.assign(n_tokens, 0.0);
    out.defined.assign(n_tokens, 0);
    for (size_t n = 0; n < n_tokens; ++n) {
        out.duration_ms[n] = static_cast<double>(count[n]) * hop_ms;
        if (count[n] == 0) continue;
        out.defined[n] = 1;
        double token_mag = mag_sum[n] / static_cast<double>(count[n]);
        out.relative_energy[n] = utt_mag > 0.0 ? token_mag / utt_mag : 0.0;
        out.mean_f0_hz[n] =
            voiced_count[n] > 0 ? f0_sum[n] / static_cast<double>(voiced_count[n]) : 0.0;
    }
    return out;
}

DiversityStats diversity_stats(std::span<const ProsodyMeasurements> samples) {
    if (samples.size() < 2) throw DomainError("diversity_stats: need at least two samples");
    size_t n_tokens = samples[0].tokens();
    for (const auto& s : samples)
        if (s.tokens() != n_tokens) throw DimensionError("diversity_stats: token count mismatch");
    if (n_tokens == 0) throw DomainError("diversity_stats: zero tokens");

    auto token_std = [&](auto getter) {
        double total = 0.0;
        for (size_t n = 0; n < n_tokens; ++n) {
            double mean = 0.0;
            for (const auto& s : samples) mean += getter(s, n);
            mean /= static_cast<double>(samples.size());
            double var = 0.0;
            for (const auto& s : samples) {
                double d = getter(s, n) - mean;
                var += d * d;
            }
            var /= static_cast<double>(samples.size());
            total += std::sqrt(var);
        }
        return total / static_cast<double>(n_tokens);
    };

    DiversityStats stats;
    stats.energy = token_std(
        [](const ProsodyMeasurements& s, size_t n) { return s.relative_energy[n]; });
    stats.f0_hz = token_std([](const ProsodyMeasurements& s, size_t n) { return s.mean_f0_hz[n]; });
    stats.duration_ms = token_std(
        [](const ProsodyMeasurements& s, size_t n) { return s.duration_ms[n]; });
    return stats;
}

}  // namespace qfv
