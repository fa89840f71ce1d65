#include "qfv/nn.hpp"

#include <algorithm>
#include <cmath>

#include "qfv/errors.hpp"

namespace qfv {

ParamBlock& ParamStore::add(const std::string& name, std::vector<size_t> shape) {
    if (index_.count(name)) throw DomainError("ParamStore: duplicate block " + name);
    size_t total = 1;
    for (size_t d : shape) total *= d;
    ParamBlock block;
    block.name = name;
    block.shape = std::move(shape);
    block.value.assign(total, 0.0);
    index_[name] = blocks_.size();
    blocks_.push_back(std::move(block));
    return blocks_.back();
}

ParamBlock& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("ParamStore: no block " + name);
    return blocks_[it->second];
}

const ParamBlock& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("ParamStore: no block " + name);
    return blocks_[it->second];
}

size_t ParamStore::total_size() const {
    size_t n = 0;
    for (const auto& b : blocks_) n += b.size();
    return n;
}

std::vector<double> ParamStore::flatten() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& b : blocks_) out.insert(out.end(), b.value.begin(), b.value.end());
    return out;
}

void ParamStore::unflatten(std::span<const double> flat) {
    if (flat.size() != total_size()) throw DimensionError("ParamStore::unflatten: size mismatch");
    size_t off = 0;
    for (auto& b : blocks_) {
        std::copy(flat.begin() + off, flat.begin() + off + b.size(), b.value.begin());
        off += b.size();
    }
}

ParamStore ParamStore::zeros_like() const {
    ParamStore out;
    for (const auto& b : blocks_) out.add(b.name, b.shape);
    return out;
}

void ParamStore::zero() {
    for (auto& b : blocks_) std::fill(b.value.begin(), b.value.end(), 0.0);
}

double ParamStore::l2_norm() const {
    double ss = 0.0;
    for (const auto& b : blocks_)
        for (double v : b.value) ss += v * v;
    return std::sqrt(ss);
}

void ParamStore::axpy(double alpha, const ParamStore& other) {
    if (other.blocks_.size() != blocks_.size()) throw DimensionError("ParamStore::axpy: store mismatch");
    for (size_t i = 0; i < blocks_.size(); ++i) {
        auto& dst = blocks_[i].value;
        const auto& src = other.blocks_[i].value;
        if (src.size() != dst.size()) throw DimensionError("ParamStore::axpy: block mismatch");
        for (size_t j = 0; j < dst.size(); ++j) dst[j] += alpha * src[j];
    }
}

void ParamStore::scale(double s) {
    for (auto& b : blocks_)
        for (double& v : b.value) v *= s;
}

void linear_forward(const ParamBlock& W, const ParamBlock& b, std::span<const double> x,
                    std::span<double> y) {
    size_t out = W.rows(), in = W.cols();
    if (x.size() != in || y.size() != out || b.size() != out)
        throw DimensionError("linear_forward: shape mismatch for " + W.name);
    const double* w = W.data();
    for (size_t i = 0; i < out; ++i) {
        double acc = b[i];
        const double* row = w + i * in;
        for (size_t j = 0; j < in; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

void linear_backward(const ParamBlock& W, std::span<const double> x, std::span<const double> dy,
                     ParamBlock& dW, ParamBlock& db, std::span<double> dx) {
    size_t out = W.rows(), in = W.cols();
    double* dw = dW.data();
    for (size_t i = 0; i < out; ++i) {
        double g = dy[i];
        db[i] += g;
        double* drow = dw + i * in;
        for (size_t j = 0; j < in; ++j) drow[j] += g * x[j];
    }
    if (!dx.empty()) {
        const double* w = W.data();
        for (size_t i = 0; i < out; ++i) {
            double g = dy[i];
            const double* row = w + i * in;
            for (size_t j = 0; j < in; ++j) dx[j] += row[j] * g;
        }
    }
}

void softmax_inplace(std::span<double> v) {
    double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

void softmax_backward(std::span<const double> y, std::span<const double> dy,
                      std::span<double> ds) {
    double dot = 0.0;
    for (size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
    for (size_t i = 0; i < y.size(); ++i) ds[i] = y[i] * (dy[i] - dot);
}

namespace {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

void lstm_step(const ParamBlock& Wx, const ParamBlock& Wh, const ParamBlock& b,
               std::span<const double> input, std::span<double> h, std::span<double> c,
               LstmCache& cache) {
    size_t hidden = h.size();
    size_t in = input.size();
    cache.input.assign(input.begin(), input.end());
    cache.h_prev.assign(h.begin(), h.end());
    cache.c_prev.assign(c.begin(), c.end());
    cache.gates.assign(4 * hidden, 0.0);

    const double* wx = Wx.data();
    const double* wh = Wh.data();
    for (size_t i = 0; i < 4 * hidden; ++i) {
        double acc = b[i];
        const double* rx = wx + i * in;
        for (size_t j = 0; j < in; ++j) acc += rx[j] * input[j];
        const double* rh = wh + i * hidden;
        for (size_t j = 0; j < hidden; ++j) acc += rh[j] * h[j];
        cache.gates[i] = acc;
    }
    cache.c.assign(hidden, 0.0);
    cache.h.assign(hidden, 0.0);
    cache.tanh_c.assign(hidden, 0.0);
    for (size_t j = 0; j < hidden; ++j) {
        double gi = sigmoid(cache.gates[j]);
        double gf = sigmoid(cache.gates[hidden + j]);
        double gg = std::tanh(cache.gates[2 * hidden + j]);
        double go = sigmoid(cache.gates[3 * hidden + j]);
        cache.gates[j] = gi;
        cache.gates[hidden + j] = gf;
        cache.gates[2 * hidden + j] = gg;
        cache.gates[3 * hidden + j] = go;
        double cn = gf * cache.c_prev[j] + gi * gg;
        cache.c[j] = cn;
        cache.tanh_c[j] = std::tanh(cn);
        cache.h[j] = go * cache.tanh_c[j];
    }
    std::copy(cache.c.begin(), cache.c.end(), c.begin());
    std::copy(cache.h.begin(), cache.h.end(), h.begin());
}

void lstm_step_backward(const ParamBlock& Wx, const ParamBlock& Wh, const LstmCache& cache,
                        std::span<const double> dh, std::span<double> dc,
                        ParamBlock& dWx, ParamBlock& dWh, ParamBlock& db,
                        std::span<double> dinput, std::span<double> dh_prev) {
    size_t hidden = dh.size();
    size_t in = cache.input.size();
    std::vector<double> dgate(4 * hidden);
    for (size_t j = 0; j < hidden; ++j) {
        double gi = cache.gates[j];
        double gf = cache.gates[hidden + j];
        double gg = cache.gates[2 * hidden + j];
        double go = cache.gates[3 * hidden + j];
        double dct = dc[j] + dh[j] * go * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
        double dgo = dh[j] * cache.tanh_c[j];
        double dgi = dct * gg;
        double dgg = dct * gi;
        double dgf = dct * cache.c_prev[j];
        dc[j] = dct * gf;  // becomes dc_{t-1}
        dgate[j] = dgi * gi * (1.0 - gi);
        dgate[hidden + j] = dgf * gf * (1.0 - gf);
        dgate[2 * hidden + j] = dgg * (1.0 - gg * gg);
        dgate[3 * hidden + j] = dgo * go * (1.0 - go);
    }
    double* dwx = dWx.data();
    double* dwh = dWh.data();
    const double* wx = Wx.data();
    const double* wh = Wh.data();
    for (size_t i = 0; i < 4 * hidden; ++i) {
        double g = dgate[i];
        db[i] += g;
        double* rx = dwx + i * in;
        for (size_t j = 0; j < in; ++j) rx[j] += g * cache.input[j];
        double* rh = dwh + i * hidden;
        for (size_t j = 0; j < hidden; ++j) rh[j] += g * cache.h_prev[j];
        if (!dinput.empty()) {
            const double* wxr = wx + i * in;
            for (size_t j = 0; j < in; ++j) dinput[j] += wxr[j] * g;
        }
        const double* whr = wh + i * hidden;
        for (size_t j = 0; j < hidden; ++j) dh_prev[j] += whr[j] * g;
    }
}

void init_uniform_fanin(ParamBlock& W, size_t fan_in, RngStream& rng) {
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : W.value) v = (rng.next_double() * 2.0 - 1.0) * s;
}

void init_uniform(ParamBlock& W, double lo, double hi, RngStream& rng) {
    for (double& v : W.value) v = lo + (hi - lo) * rng.next_double();
}

}  // namespace qfv
