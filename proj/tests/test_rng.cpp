#include <doctest.h>

#include <cmath>
#include <vector>

#include "qfv/errors.hpp"
#include "qfv/rng.hpp"

using namespace qfv;

TEST_CASE("rng streams with equal seeds replay identically") {
    RngStream a(42), b(42);
    for (int i = 0; i < 10000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng state round trips through (seed, counter)") {
    RngStream a(7);
    for (int i = 0; i < 100; ++i) a.next_double();
    RngStream b(a.seed(), a.counter());
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("split streams differ from parent and from each other") {
    RngStream parent(99);
    RngStream c0 = parent.split(0), c1 = parent.split(1);
    CHECK(c0.next_u64() != c1.next_u64());
    CHECK(parent.split(0).next_u64() == RngStream(99).split(0).next_u64());
}

TEST_CASE("sample_gaussian degenerate cases") {
    RngStream rng(1);
    std::vector<double> mean{0.0, 0.0}, sd{0.0, 0.0};
    auto out = sample_gaussian(rng, mean, sd);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);

    std::vector<double> m5{5.0}, s0{0.0};
    CHECK(sample_gaussian(rng, m5, s0)[0] == 5.0);
}

TEST_CASE("sample_gaussian moments over 1e5 draws") {
    RngStream rng(2024);
    std::vector<double> mean{0.0}, sd{1.0};
    double sum = 0.0, sumsq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        double v = sample_gaussian(rng, mean, sd)[0];
        sum += v;
        sumsq += v * v;
    }
    double m = sum / n;
    double s = std::sqrt(sumsq / n - m * m);
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(s - 1.0) < 0.02);
}

TEST_CASE("sample_gaussian validates inputs") {
    RngStream rng(3);
    std::vector<double> mean{0.0, 0.0}, sd{1.0};
    CHECK_THROWS_AS(sample_gaussian(rng, mean, sd), DimensionError);
    std::vector<double> bad{-1.0, 1.0};
    std::vector<double> mean2{0.0, 0.0};
    CHECK_THROWS_AS(sample_gaussian(rng, mean2, bad), DomainError);
}

TEST_CASE("sample_categorical point masses") {
    RngStream rng(4);
    std::vector<double> p100{1.0, 0.0, 0.0};
    std::vector<double> p001{0.0, 0.0, 1.0};
    for (int i = 0; i < 50; ++i) {
        CHECK(sample_categorical(rng, p100) == 0);
        CHECK(sample_categorical(rng, p001) == 2);
    }
}

TEST_CASE("sample_categorical empirical frequency") {
    RngStream rng(5);
    std::vector<double> p{0.5, 0.5};
    int count0 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        if (sample_categorical(rng, p) == 0) ++count0;
    double freq = static_cast<double>(count0) / n;
    CHECK(freq > 0.49);
    CHECK(freq < 0.51);
}

TEST_CASE("sample_categorical validates distribution") {
    RngStream rng(6);
    std::vector<double> neg{-0.1, 1.1};
    CHECK_THROWS_AS(sample_categorical(rng, neg), DomainError);
    std::vector<double> unnorm{0.5, 0.4};
    CHECK_THROWS_AS(sample_categorical(rng, unnorm), DomainError);
}
