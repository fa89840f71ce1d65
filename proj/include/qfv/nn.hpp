#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qfv/rng.hpp"

namespace qfv {

/// One named parameter tensor, stored flat row-major.
struct ParamBlock {
    std::string name;
    std::vector<size_t> shape;
    std::vector<double> value;

    size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    size_t cols() const { return shape.size() > 1 ? shape[1] : 1; }
    double* data() { return value.data(); }
    const double* data() const { return value.data(); }
    size_t size() const { return value.size(); }
    double& operator[](size_t i) { return value[i]; }
    double operator[](size_t i) const { return value[i]; }
};

/// Ordered collection of named parameter blocks. Order is the serialization
/// and flattening order, so it must be identical between a store and its
/// gradient counterpart.
class ParamStore {
public:
    ParamBlock& add(const std::string& name, std::vector<size_t> shape);
    ParamBlock& at(const std::string& name);
    const ParamBlock& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    size_t block_count() const { return blocks_.size(); }
    ParamBlock& block(size_t i) { return blocks_[i]; }
    const ParamBlock& block(size_t i) const { return blocks_[i]; }

    size_t total_size() const;
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);

    /// Same block names/shapes, all values zero.
    ParamStore zeros_like() const;
    void zero();

    /// Global L2 norm of all values (used for gradient clipping).
    double l2_norm() const;

    /// this += alpha * other (shapes must match).
    void axpy(double alpha, const ParamStore& other);
    void scale(double s);

private:
    std::vector<ParamBlock> blocks_;
    std::map<std::string, size_t> index_;
};

// ---- dense kernels (row-major W: out_dim x in_dim) ----

/// y = W x + b
void linear_forward(const ParamBlock& W, const ParamBlock& b, std::span<const double> x,
                    std::span<double> y);

/// Accumulates dW += dy x^T, db += dy, dx += W^T dy (dx may be empty to skip).
void linear_backward(const ParamBlock& W, std::span<const double> x, std::span<const double> dy,
                     ParamBlock& dW, ParamBlock& db, std::span<double> dx);

void softmax_inplace(std::span<double> v);

/// Given y = softmax(s) and dL/dy, computes dL/ds into ds.
void softmax_backward(std::span<const double> y, std::span<const double> dy,
                      std::span<double> ds);

// ---- LSTM cell, gate order [i f g o], each `hidden` wide ----

struct LstmCache {
    std::vector<double> input;   // concatenated cell input
    std::vector<double> gates;   // post-activation i f g o
    std::vector<double> h_prev;
    std::vector<double> c_prev;
    std::vector<double> c;
    std::vector<double> h;
    std::vector<double> tanh_c;
};

/// One step. Wx: 4H x in, Wh: 4H x H, b: 4H. h/c spans are updated in place.
void lstm_step(const ParamBlock& Wx, const ParamBlock& Wh, const ParamBlock& b,
               std::span<const double> input, std::span<double> h, std::span<double> c,
               LstmCache& cache);

/// Backward for one step. dh is the total gradient arriving at h_t; dc carries
/// the running cell-state gradient and is updated to dc_{t-1}. Emits gradient
/// w.r.t. the step input into dinput and accumulates dh_prev.
void lstm_step_backward(const ParamBlock& Wx, const ParamBlock& Wh, const LstmCache& cache,
                        std::span<const double> dh, std::span<double> dc,
                        ParamBlock& dWx, ParamBlock& dWh, ParamBlock& db,
                        std::span<double> dinput, std::span<double> dh_prev);

// ---- init helpers ----

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
void init_uniform_fanin(ParamBlock& W, size_t fan_in, RngStream& rng);
void init_uniform(ParamBlock& W, double lo, double hi, RngStream& rng);

}  // namespace qfv
