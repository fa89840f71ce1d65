#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "qfv/corpus.hpp"
#include "qfv/errors.hpp"
#include "qfv/metrics.hpp"

using namespace qfv;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

bool utterances_equal(const Utterance& a, const Utterance& b) {
    return a.id == b.id && a.tokens == b.tokens && a.frames.t == b.frames.t &&
           a.frames.f == b.frames.f && a.frames.v == b.frames.v && a.waveform == b.waveform &&
           a.truth.size() == b.truth.size() &&
           std::equal(a.truth.begin(), a.truth.end(), b.truth.begin(),
                      [](const TokenTruth& x, const TokenTruth& y) {
                          return x.duration_frames == y.duration_frames &&
                                 x.mean_f0_hz == y.mean_f0_hz && x.energy == y.energy;
                      });
}

}  // namespace

TEST_CASE("gen_utterance is deterministic and shape-consistent") {
    CorpusSpec spec;
    RngStream r1(404), r2(404);
    Utterance a = gen_utterance(r1, spec, "u0");
    Utterance b = gen_utterance(r2, spec, "u0");
    CHECK(utterances_equal(a, b));

    size_t total = 0;
    for (const auto& t : a.truth) total += t.duration_frames;
    CHECK(total == a.frames.t);
    CHECK(a.waveform.size() == (a.frames.t - 1) * spec.stft_hop + spec.stft_window);
    for (double v : a.frames.v) CHECK(v >= 0.0);
}

TEST_CASE("single-token utterance has the requested pitch and frame count") {
    CorpusSpec spec;
    spec.min_tokens = 1;
    spec.max_tokens = 1;
    spec.dur_min_frames = 8;
    spec.dur_max_frames = 8;
    spec.f0_min_hz = 200.0;
    spec.f0_max_hz = 200.0;
    spec.energy_min = 1.0;
    spec.energy_max = 1.0;
    RngStream rng(405);
    Utterance utt = gen_utterance(rng, spec, "single");
    CHECK(utt.frames.t == 8);
    PitchTrack track = yin_f0(utt.waveform, 512, 200, 16000.0, 120.0, 300.0);
    size_t voiced = 0;
    double err = 0.0;
    for (size_t t = 0; t < track.size(); ++t)
        if (track.voiced[t]) {
            ++voiced;
            err = std::max(err, std::abs(track.f0_hz[t] - 200.0));
        }
    CHECK(voiced == track.size());
    CHECK(err < 2.0);
}

TEST_CASE("doubling token energy doubles interior frame magnitudes") {
    // identical timbre and F0, energies 1 and 2: interior frame magnitudes
    // scale linearly with the energy value
    CorpusSpec one;
    one.dur_min_frames = 12;
    one.dur_max_frames = 12;
    one.f0_min_hz = 180.0;
    one.f0_max_hz = 180.0;
    one.noise_level = 0.0;
    one.min_tokens = 1;
    one.max_tokens = 1;
    one.energy_min = one.energy_max = 1.0;
    RngStream ra(407);
    Utterance low = gen_utterance(ra, one, "low");
    one.energy_min = one.energy_max = 2.0;
    RngStream rb(407);
    Utterance high = gen_utterance(rb, one, "high");
    REQUIRE(low.tokens[0] == high.tokens[0]);
    // interior frames: window fully inside the token span
    double mean_low = 0.0, mean_high = 0.0;
    size_t count = 0;
    for (size_t t = 0; t + 3 < low.frames.t; ++t) {
        for (size_t k = 0; k < low.frames.f; ++k) {
            mean_low += low.frames.at(t, k);
            mean_high += high.frames.at(t, k);
        }
        ++count;
    }
    REQUIRE(count > 0);
    CHECK(mean_high / mean_low == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("corpus file round trip is bit exact") {
    CorpusSpec spec;
    spec.min_tokens = 3;
    spec.max_tokens = 6;
    RngStream rng(408);
    std::vector<Utterance> utts;
    for (int i = 0; i < 10; ++i)
        utts.push_back(gen_utterance(rng, spec, "u" + std::to_string(i)));
    std::string path = temp_path("qfv_corpus_roundtrip.qfvc");
    write_corpus(path, utts);
    auto back = read_corpus(path);
    REQUIRE(back.size() == utts.size());
    for (size_t i = 0; i < utts.size(); ++i) CHECK(utterances_equal(utts[i], back[i]));
    std::filesystem::remove(path);
}

TEST_CASE("corpus reader rejects corrupted magic and truncation") {
    CorpusSpec spec;
    spec.min_tokens = 2;
    spec.max_tokens = 3;
    RngStream rng(409);
    std::vector<Utterance> utts{gen_utterance(rng, spec, "u")};
    std::string path = temp_path("qfv_corpus_corrupt.qfvc");
    write_corpus(path, utts);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("ZZZZ", 4);
    }
    CHECK_THROWS_AS(read_corpus(path), FormatError);

    write_corpus(path, utts);
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 16);
    CHECK_THROWS_AS(read_corpus(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("empty corpus round trips") {
    std::string path = temp_path("qfv_corpus_empty.qfvc");
    write_corpus(path, {});
    CHECK(read_corpus(path).empty());
    std::filesystem::remove(path);
}

TEST_CASE("split_corpus partitions deterministically") {
    CorpusSpec spec;
    spec.min_tokens = 1;
    spec.max_tokens = 2;
    spec.dur_min_frames = 4;
    spec.dur_max_frames = 5;
    RngStream rng(410);
    std::vector<Utterance> utts;
    for (int i = 0; i < 100; ++i)
        utts.push_back(gen_utterance(rng, spec, "u" + std::to_string(i)));
    auto [train, test] = split_corpus(utts, 0.9, 7);
    CHECK(train.size() == 90);
    CHECK(test.size() == 10);
    auto [train2, test2] = split_corpus(utts, 0.9, 7);
    for (size_t i = 0; i < train.size(); ++i) CHECK(train[i].id == train2[i].id);

    std::set<std::string> seen;
    for (const auto& u : train) seen.insert(u.id);
    for (const auto& u : test) seen.insert(u.id);
    CHECK(seen.size() == 100);  // disjoint and exhaustive

    CHECK_THROWS_AS(split_corpus(utts, 0.0, 1), DomainError);
    CHECK_THROWS_AS(split_corpus(utts, 1.0, 1), DomainError);
}

TEST_CASE("corpus spec validation") {
    CorpusSpec spec;
    spec.f0_max_hz = 5000.0;  // above Nyquist/4
    CHECK_THROWS_AS(spec.validate(), DomainError);
    spec = CorpusSpec{};
    spec.min_tokens = 5;
    spec.max_tokens = 4;
    CHECK_THROWS_AS(spec.validate(), DomainError);
    RngStream rng(1);
    CHECK_THROWS_AS(gen_utterance(rng, spec, "x"), DomainError);
}

TEST_CASE("yin recovers per-token F0 truth on generated corpora") {
    CorpusSpec spec;
    RngStream rng(411);
    size_t ok = 0, total = 0;
    for (int i = 0; i < 12; ++i) {
        Utterance utt = gen_utterance(rng, spec, "u" + std::to_string(i));
        PitchTrack track = yin_f0(utt.waveform, 512, 200, 16000.0, spec.f0_min_hz * 0.9,
                                  spec.f0_max_hz * 1.1);
        size_t frame0 = 0;
        for (size_t n = 0; n < utt.tokens.size(); ++n) {
            size_t dur = utt.truth[n].duration_frames;
            // interior frames: analysis window fully inside the token span
            size_t lo = frame0, hi = frame0 + dur;  // [lo, hi)
            double sum = 0.0;
            size_t count = 0;
            for (size_t t = lo; t + 3 <= hi && t < track.size(); ++t) {
                if (track.voiced[t]) {
                    sum += track.f0_hz[t];
                    ++count;
                }
            }
            if (count > 0) {
                ++total;
                if (std::abs(sum / static_cast<double>(count) - utt.truth[n].mean_f0_hz) < 3.0)
                    ++ok;
            }
            frame0 += dur;
        }
    }
    REQUIRE(total > 50);
    CHECK(static_cast<double>(ok) >= 0.95 * static_cast<double>(total));
}

TEST_CASE("token boundaries from truth durations partition the frame axis") {
    CorpusSpec spec;
    RngStream rng(412);
    for (int i = 0; i < 5; ++i) {
        Utterance utt = gen_utterance(rng, spec, "u");
        size_t acc = 0;
        for (const auto& t : utt.truth) acc += t.duration_frames;
        CHECK(acc == utt.frames.t);
    }
}
