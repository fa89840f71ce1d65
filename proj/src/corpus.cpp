#include "qfv/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "qfv/errors.hpp"
#include "qfv/io.hpp"

namespace qfv {

namespace {

constexpr uint32_t kCorpusMagic = 0x43564651;  // "QFVC"
constexpr uint32_t kCorpusVersion = 1;
constexpr size_t kPartials = 5;
constexpr size_t kBoundaryRamp = 16;  // samples; keeps token-mean F0 close to the drawn value

uint64_t mix(uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

}  // namespace

void CorpusSpec::validate() const {
    if (utterance_count == 0) throw DomainError("corpus spec: utterance count must be positive");
    if (vocab == 0) throw DomainError("corpus spec: empty vocabulary");
    if (min_tokens == 0 || min_tokens > max_tokens)
        throw DomainError("corpus spec: empty token-length range");
    if (!(f0_min_hz > 0.0) || f0_min_hz > f0_max_hz)
        throw DomainError("corpus spec: empty F0 range");
    if (f0_max_hz >= sample_rate / 4.0)
        throw DomainError("corpus spec: F0 max must stay below Nyquist/4");
    if (dur_min_frames == 0 || dur_min_frames > dur_max_frames)
        throw DomainError("corpus spec: empty duration range");
    if (energy_min <= 0.0 || energy_min > energy_max)
        throw DomainError("corpus spec: empty energy range");
    if (noise_level < 0.0) throw DomainError("corpus spec: negative noise level");
    if (stft_hop == 0 || stft_window < stft_hop || stft_window % 2 != 0)
        throw DomainError("corpus spec: require even stft window >= hop > 0");
    if (frame_bins < 8 || frame_bins > stft_window / 2)
        throw DomainError("corpus spec: frame_bins must lie in [8, window/2]");
}

std::vector<double> token_timbre(uint32_t token_id) {
    std::vector<double> amps(kPartials);
    for (size_t h = 0; h < kPartials; ++h) {
        double u = static_cast<double>(mix(0x51D5ull * (token_id + 1) + h) >> 11) * 0x1.0p-53;
        amps[h] = (0.25 + 0.75 * u) / std::pow(static_cast<double>(h + 1), 0.7);
    }
    // normalize so the summed partial amplitude is 1
    double sum = std::accumulate(amps.begin(), amps.end(), 0.0);
    for (double& a : amps) a /= sum;
    return amps;
}

Utterance gen_utterance(RngStream& rng, const CorpusSpec& spec, const std::string& id) {
    spec.validate();
    Utterance utt;
    utt.id = id;

    size_t n_tokens = spec.min_tokens + rng.next_below(spec.max_tokens - spec.min_tokens + 1);
    utt.tokens.resize(n_tokens);
    utt.truth.resize(n_tokens);
    for (size_t n = 0; n < n_tokens; ++n) {
        utt.tokens[n] = static_cast<uint32_t>(rng.next_below(spec.vocab));
        auto& tr = utt.truth[n];
        tr.duration_frames = static_cast<uint32_t>(
            spec.dur_min_frames + rng.next_below(spec.dur_max_frames - spec.dur_min_frames + 1));
        tr.mean_f0_hz = spec.f0_min_hz + (spec.f0_max_hz - spec.f0_min_hz) * rng.next_double();
        tr.energy = spec.energy_min + (spec.energy_max - spec.energy_min) * rng.next_double();
    }

    size_t total_frames = 0;
    for (const auto& tr : utt.truth) total_frames += tr.duration_frames;
    size_t hop = spec.stft_hop;
    size_t n_samples = (total_frames - 1) * hop + spec.stft_window;  // exactly total_frames frames

    // per-sample piecewise-constant F0/energy/timbre with short linear ramps
    // across token boundaries; the tail past the last boundary keeps the last
    // token's settings
    std::vector<size_t> boundary(n_tokens + 1, 0);
    for (size_t n = 0; n < n_tokens; ++n)
        boundary[n + 1] = boundary[n] + utt.truth[n].duration_frames * hop;

    std::vector<std::vector<double>> timbres(n_tokens);
    for (size_t n = 0; n < n_tokens; ++n) timbres[n] = token_timbre(utt.tokens[n]);

    utt.waveform.assign(n_samples, 0.0);
    double phase = 0.0;
    const double two_pi = 2.0 * std::numbers::pi;
    size_t cur = 0;
    for (size_t i = 0; i < n_samples; ++i) {
        while (cur + 1 < n_tokens && i >= boundary[cur + 1]) ++cur;
        double f0 = utt.truth[cur].mean_f0_hz;
        double energy = utt.truth[cur].energy;
        const std::vector<double>* amps = &timbres[cur];
        double blend = 0.0;
        if (cur + 1 < n_tokens) {
            size_t to_boundary = boundary[cur + 1] - i;
            if (to_boundary <= kBoundaryRamp)
                blend = 0.5 * (1.0 - static_cast<double>(to_boundary) /
                                         static_cast<double>(kBoundaryRamp));
        }
        if (cur > 0 && i - boundary[cur] < kBoundaryRamp) {
            double into = static_cast<double>(i - boundary[cur]) /
                          static_cast<double>(kBoundaryRamp);
            f0 = utt.truth[cur - 1].mean_f0_hz +
                 (f0 - utt.truth[cur - 1].mean_f0_hz) * (0.5 + 0.5 * into);
            energy = utt.truth[cur - 1].energy +
                     (energy - utt.truth[cur - 1].energy) * (0.5 + 0.5 * into);
        } else if (blend > 0.0) {
            f0 += (utt.truth[cur + 1].mean_f0_hz - f0) * blend;
            energy += (utt.truth[cur + 1].energy - energy) * blend;
        }
        phase += two_pi * f0 / spec.sample_rate;
        if (phase > two_pi) phase -= two_pi;
        double s = 0.0;
        for (size_t h = 0; h < kPartials; ++h)
            s += (*amps)[h] * std::sin(static_cast<double>(h + 1) * phase);
        s += spec.noise_level * (2.0 * rng.next_double() - 1.0);
        utt.waveform[i] = energy * s;
    }

    FrameMatrix full = stft_mag(utt.waveform, spec.stft_window, hop);
    if (full.t != total_frames)
        throw DomainError("gen_utterance: frame count mismatch (internal)");
    utt.frames = FrameMatrix(full.t, spec.frame_bins);
    for (size_t t = 0; t < full.t; ++t)
        for (size_t k = 0; k < spec.frame_bins; ++k) utt.frames.at(t, k) = full.at(t, k);
    return utt;
}

void write_corpus(const std::string& path, const std::vector<Utterance>& utterances) {
    BinaryWriter out;
    out.u32(kCorpusMagic);
    out.u32(kCorpusVersion);
    out.u64(utterances.size());
    for (const auto& utt : utterances) {
        BinaryWriter rec;
        rec.str(utt.id);
        rec.u64(utt.tokens.size());
        for (uint32_t t : utt.tokens) rec.u32(t);
        rec.u64(utt.frames.t);
        rec.u64(utt.frames.f);
        rec.f64_array(utt.frames.v);
        rec.u64(utt.waveform.size());
        rec.f64_array(utt.waveform);
        rec.u64(utt.truth.size());
        for (const auto& tr : utt.truth) {
            rec.u32(tr.duration_frames);
            rec.f64(tr.mean_f0_hz);
            rec.f64(tr.energy);
        }
        out.u64(rec.buffer().size());
        out.raw(rec.buffer().data(), rec.buffer().size());
    }
    out.save(path);
}

std::vector<Utterance> read_corpus(const std::string& path) {
    BinaryReader in = BinaryReader::from_file(path);
    uint32_t magic, version;
    try {
        magic = in.u32();
        version = in.u32();
    } catch (const FormatError&) {
        throw FormatError("corpus file too short for header: " + path);
    }
    if (magic != kCorpusMagic) throw FormatError("bad corpus magic in " + path);
    if (version != kCorpusVersion)
        throw FormatError("unsupported corpus version " + std::to_string(version) + " in " + path);
    uint64_t count = in.u64();
    std::vector<Utterance> utterances;
    utterances.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        try {
            uint64_t rec_len = in.u64();
            if (rec_len > in.remaining())
                throw FormatError("record length exceeds file size");
            Utterance utt;
            utt.id = in.str();
            uint64_t n_tokens = in.u64();
            utt.tokens.resize(n_tokens);
            for (auto& t : utt.tokens) t = in.u32();
            uint64_t ft = in.u64(), ff = in.u64();
            utt.frames = FrameMatrix(ft, ff);
            in.f64_array(utt.frames.v);
            uint64_t wl = in.u64();
            utt.waveform.resize(wl);
            in.f64_array(utt.waveform);
            uint64_t nt = in.u64();
            utt.truth.resize(nt);
            for (auto& tr : utt.truth) {
                tr.duration_frames = in.u32();
                tr.mean_f0_hz = in.f64();
                tr.energy = in.f64();
            }
            utterances.push_back(std::move(utt));
        } catch (const FormatError& e) {
            throw FormatError("corpus record " + std::to_string(i) + " of " + path + ": " +
                              e.what());
        }
    }
    return utterances;
}

std::pair<std::vector<Utterance>, std::vector<Utterance>> split_corpus(
    const std::vector<Utterance>& utterances, double train_fraction, uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw DomainError("split_corpus: fraction must lie strictly between 0 and 1");
    std::vector<size_t> order(utterances.size());
    std::iota(order.begin(), order.end(), size_t{0});
    RngStream rng(seed);
    for (size_t i = 0; i + 1 < order.size(); ++i) {
        size_t j = i + static_cast<size_t>(rng.next_below(order.size() - i));
        std::swap(order[i], order[j]);
    }
    size_t n_train = static_cast<size_t>(
        std::llround(train_fraction * static_cast<double>(utterances.size())));
    n_train = std::min(n_train, utterances.size());
    std::pair<std::vector<Utterance>, std::vector<Utterance>> result;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i < n_train)
            result.first.push_back(utterances[order[i]]);
        else
            result.second.push_back(utterances[order[i]]);
    }
    return result;
}

}  // namespace qfv
