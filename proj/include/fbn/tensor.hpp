#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fbn/rng.hpp"

namespace fbn {

// Dense row-major float64 tensor. `grad` is allocated lazily and always
// matches `data` in length when present. Image tensors use NCHW layout.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);

    int64_t numel() const;
    int64_t dim(size_t i) const { return shape[i]; }
    size_t ndim() const { return shape.size(); }

    void ensure_grad();           // allocate zero grad buffer if absent
    void zero_grad();             // zero in place (no-op if absent)
    bool all_finite() const;      // data only
    void check_finite(const char* what) const; // throws on NaN/Inf
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(Tensor t, bool requires_grad = false);

// Reverse-mode tape. Ops executed under a tape append a backward closure;
// Tape::backward replays them newest-first, which is a valid topological
// order because closures are appended only after their inputs exist.
//
// A tape (and every graph hanging off it) is single-writer: build, run and
// backpropagate on one thread. Independent tapes may run concurrently.
class Tape {
public:
    void record(std::function<void()> fn, std::initializer_list<TensorPtr> nodes);

    // Scalar loss entry point: seeds d(loss)/d(loss) = 1.
    void backward(const TensorPtr& loss);
    // Vector-output entry point: seeds out->grad with `seed`.
    void backward(const TensorPtr& out, std::span<const double> seed);

    // Zero grads of every tensor this tape has touched. Needed when the same
    // graph is backpropagated repeatedly (Jacobian rows).
    void zero_all_grads();

    size_t size() const { return entries_.size(); }

private:
    std::vector<std::function<void()>> entries_;
    std::vector<TensorPtr> touched_;
};

// Named, optionally trainable tensor. `trainable` and requires_grad are kept
// in sync; a non-trainable parameter never accumulates gradient and is never
// moved by the optimizer.
struct Parameter {
    TensorPtr tensor;
    bool trainable = true;
    std::string name;

    Parameter() = default;
    Parameter(Tensor t, bool trainable_, std::string name_);

    void set_trainable(bool t);
};

// --- initialization ---------------------------------------------------------

// I.i.d. N(mean, std^2) entries from the counter-based stream.
// std must be > 0 and shape non-empty.
Tensor gaussian_init(const std::vector<int64_t>& shape, double mean, double std,
                     RngState& rng);

// --- differentiable ops -----------------------------------------------------
// All ops run eagerly; when `tape` is non-null and an input requires grad,
// the output requires grad and a backward closure is recorded.

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);

// Cross-correlation, zero same-padding (pad = k/2), kernel k in {1,3},
// stride in {1,2}. x: [N,C,H,W], w: [F,C,k,k] -> [N,F,H',W'] with
// H' = ceil(H/stride).
TensorPtr conv2d(Tape* tape, const TensorPtr& x, const TensorPtr& w, int stride = 1);

// 3x3 mean pooling, stride 1, zero padding, divisor fixed at 9.
TensorPtr avg_pool3x3(Tape* tape, const TensorPtr& x);

TensorPtr relu(Tape* tape, const TensorPtr& x);
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape* tape, const TensorPtr& x, double c);
// [m,n] + [n] row broadcast.
TensorPtr add_bias_row(Tape* tape, const TensorPtr& x, const TensorPtr& b);
// [N,C,H,W] or [N,C] -> same shape; y = x * gamma[c] + beta[c].
TensorPtr channel_affine(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                         const TensorPtr& beta);
// [N,C,...] -> [N, C*...]
TensorPtr flatten(Tape* tape, const TensorPtr& x);
// [N,C,H,W] -> [N,C]
TensorPtr global_avg_pool(Tape* tape, const TensorPtr& x);
// x: [m,k], w: [k,n], b: [n]
TensorPtr linear_layer(Tape* tape, const TensorPtr& x, const TensorPtr& w,
                       const TensorPtr& b);

// Mean cross-entropy over the batch; labels must lie in [0, num_classes).
TensorPtr softmax_cross_entropy(Tape* tape, const TensorPtr& logits,
                                std::span<const int> labels);

// Mean squared error over all elements: mean((pred - target)^2).
TensorPtr mse_loss(Tape* tape, const TensorPtr& pred, const Tensor& target);

// Row-wise softmax, forward only (no grad path).
Tensor softmax_rows(const Tensor& logits);

// --- optimizer --------------------------------------------------------------

// SGD with classical momentum: v = mu*v + g; p -= lr*v.
// Velocity is keyed per tensor and survives across steps. step() updates only
// trainable parameters, throws if a trainable parameter has no gradient, and
// zeroes the gradients it consumed.
class Sgd {
public:
    Sgd(double lr, double momentum);

    void step(std::span<Parameter> params);
    void step(std::span<Parameter* const> params);
    // Single-path variant: parameters without an allocated gradient did not
    // participate in this step and are skipped rather than rejected.
    void step_touched(std::span<Parameter* const> params);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    void step_one(Parameter& p);

    double lr_;
    double momentum_;
    std::unordered_map<Tensor*, std::vector<double>> velocity_;
};

} // namespace fbn
