#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace qfv {

/// Deterministic counter-based random stream (splitmix64 over seed + counter).
/// The full state is (seed, counter), so a stream can be serialized, resumed,
/// and replayed bit-identically on any platform. Not shareable across threads;
/// derive one child stream per worker with split().
class RngStream {
public:
    RngStream() : seed_(0), counter_(0) {}
    explicit RngStream(uint64_t seed) : seed_(seed), counter_(0) {}
    RngStream(uint64_t seed, uint64_t counter) : seed_(seed), counter_(counter) {}

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

    /// Child stream for worker `index`; statistically independent of the parent.
    RngStream split(uint64_t index) const;

    uint64_t next_u64();

    /// Uniform in [0, 1).
    double next_double();

    /// Uniform in (0, 1]; safe as a log() argument.
    double next_double_open();

    /// Uniform integer in [0, n).
    uint64_t next_below(uint64_t n);

    /// Standard normal via Box-Muller (one value per call, stateless cache-free).
    double next_gaussian();

private:
    uint64_t seed_;
    uint64_t counter_;
};

/// mean + stddev .* eps with eps ~ N(0, I). stddev must be elementwise >= 0.
std::vector<double> sample_gaussian(RngStream& rng, std::span<const double> mean,
                                    std::span<const double> stddev);

/// Draw an index with the given probabilities. probs must be nonnegative and
/// sum to 1 within 1e-9.
size_t sample_categorical(RngStream& rng, std::span<const double> probs);

}  // namespace qfv
