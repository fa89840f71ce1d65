#include "qfv/rng.hpp"

#include <cmath>
#include <numbers>

#include "qfv/errors.hpp"

namespace qfv {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

uint64_t mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

}  // namespace

RngStream RngStream::split(uint64_t index) const {
    // Child seed from (seed, index); disjoint from the parent's output space
    // because the parent never feeds its own seed through two mix rounds.
    uint64_t child = mix64(mix64(seed_ ^ kGolden) + index * kGolden + 1);
    return RngStream(child);
}

uint64_t RngStream::next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * kGolden);
}

double RngStream::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_double_open() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

uint64_t RngStream::next_below(uint64_t n) {
    if (n == 0) throw DomainError("next_below: n must be positive");
    // Rejection-free modulo is biased for huge n; fine here since n << 2^64,
    // but keep the widening multiply trick for uniformity anyway.
    return static_cast<uint64_t>(next_double() * static_cast<double>(n)) % n;
}

double RngStream::next_gaussian() {
    double u1 = next_double_open();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> sample_gaussian(RngStream& rng, std::span<const double> mean,
                                    std::span<const double> stddev) {
    if (mean.size() != stddev.size())
        throw DimensionError("sample_gaussian: mean and stddev length mismatch");
    std::vector<double> out(mean.size());
    for (size_t i = 0; i < mean.size(); ++i) {
        if (stddev[i] < 0.0) throw DomainError("sample_gaussian: negative stddev");
        out[i] = mean[i] + stddev[i] * rng.next_gaussian();
    }
    return out;
}

size_t sample_categorical(RngStream& rng, std::span<const double> probs) {
    if (probs.empty()) throw DomainError("sample_categorical: empty probability vector");
    double total = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw DomainError("sample_categorical: negative probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw DomainError("sample_categorical: probabilities do not sum to 1");
    double u = rng.next_double();
    double cum = 0.0;
    size_t last_positive = 0;
    bool seen_positive = false;
    for (size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) {
            last_positive = i;
            seen_positive = true;
        }
        cum += probs[i];
        if (u < cum) return i;
    }
    // u landed in the rounding slack past the last positive mass.
    return seen_positive ? last_positive : probs.size() - 1;
}

}  // namespace qfv
