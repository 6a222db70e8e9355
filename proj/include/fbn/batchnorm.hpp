#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "fbn/tensor.hpp"

namespace fbn {

enum class BnMode { train, eval, stochastic, calibrate };

// One recorded pair of per-channel batch statistics.
struct BnStats {
    std::vector<double> mean;
    std::vector<double> var;
};

// Per-channel batch normalization over dim 1 of [N,C] or [N,C,H,W] input.
//
// Modes:
//   train      - normalize by batch statistics (differentiable through them),
//                update running stats, append the batch stats to the log.
//   eval       - normalize by running statistics; requires >= 1 train pass.
//   stochastic - normalize by one log entry drawn uniformly at random;
//                the Monte-Carlo sampler behind the uncertainty indicator.
//   calibrate  - normalize by this batch's statistics without mutating any
//                layer state; optionally reports the stats to a probe.
//
// Single-writer while training; eval/stochastic/calibrate forwards and
// lipschitz_scale are safe to run concurrently once training is done.
class BatchNormLayer {
public:
    BatchNormLayer() = default;
    BatchNormLayer(int64_t channels, std::string name, double eps = 1e-5,
                   double momentum = 0.1, size_t log_capacity = 64);

    TensorPtr forward(Tape* tape, const TensorPtr& x) {
        return forward(tape, x, mode_, nullptr, nullptr);
    }
    TensorPtr forward(Tape* tape, const TensorPtr& x, BnMode mode,
                      RngState* rng = nullptr, BnStats* probe = nullptr);

    // Per-channel |gamma| / sqrt(var + eps); var from the most recent log
    // entry unless explicit stats are given. Channels with (near-)zero
    // variance hit the eps floor and come out large.
    std::vector<double> lipschitz_scale() const;
    std::vector<double> lipschitz_scale(const BnStats& stats) const;

    Parameter& gamma() { return gamma_; }
    Parameter& beta() { return beta_; }
    const Parameter& gamma() const { return gamma_; }
    const Parameter& beta() const { return beta_; }

    std::vector<double>& running_mean() { return running_mean_; }
    std::vector<double>& running_var() { return running_var_; }
    const std::deque<BnStats>& stats_log() const { return stats_log_; }
    std::deque<BnStats>& stats_log() { return stats_log_; }

    int64_t channels() const { return channels_; }
    double eps() const { return eps_; }
    double momentum() const { return momentum_; }
    size_t log_capacity() const { return log_capacity_; }
    BnMode mode() const { return mode_; }
    void set_mode(BnMode m) { mode_ = m; }
    bool ever_trained() const { return ever_trained_; }
    void set_ever_trained(bool t) { ever_trained_ = t; }
    const std::string& name() const { return name_; }

    void set_trainable(bool t) {
        gamma_.set_trainable(t);
        beta_.set_trainable(t);
    }

private:
    int64_t channels_ = 0;
    std::string name_;
    double eps_ = 1e-5;
    double momentum_ = 0.1; // weight of the new batch in the running average
    size_t log_capacity_ = 64;
    BnMode mode_ = BnMode::train;
    bool ever_trained_ = false;

    Parameter gamma_;
    Parameter beta_;
    std::vector<double> running_mean_;
    std::vector<double> running_var_; // biased (1/m) batch variances
    std::deque<BnStats> stats_log_;
};

// Normalize by the batch's own per-channel statistics, differentiable through
// mean and variance. Returns xhat; reports the stats when `stats` is non-null.
// Requires batch size >= 2 when `require_batch` is true.
TensorPtr batchnorm_raw(Tape* tape, const TensorPtr& x, double eps,
                        BnStats* stats = nullptr, bool require_batch = true);

// Normalize by fixed per-channel statistics (constants, no grad through them).
TensorPtr normalize_with_stats(Tape* tape, const TensorPtr& x,
                               const std::vector<double>& mean,
                               const std::vector<double>& var, double eps);

// --- loss-gradient bound check ------------------------------------------------

// Right-hand side of the BN Lipschitz bound for one channel:
//   (gamma^2 / (var + eps)) *
//     (||g||^2 - (1/m) <1,g>^2 - inner_scale * <g, yhat>^2)
// where g is the per-channel loss gradient of the BN-free counterpart at the
// pre-BN activations, yhat the normalized activations, and m the batch size.
// The published form uses inner_scale = 1/sqrt(m); the mean-normalized
// variant (logged for comparison) uses 1/m.
double lipschitz_bound_rhs(double gamma, double var, double eps,
                           std::span<const double> g,
                           std::span<const double> yhat, double inner_scale);

struct LipschitzBoundResult {
    double lhs = 0.0;            // ||grad of BN-net loss wrt BN output||^2
    double rhs = 0.0;            // published 1/sqrt(m) inner scale
    double rhs_mean_normalized = 0.0; // 1/m inner scale, logged for comparison
    bool holds = false;
    bool holds_mean_normalized = false;
    std::vector<double> lhs_channel;
    std::vector<double> rhs_channel;
};

// Two-layer probe: x -> W1 -> y -> [BN -> relu -> W2] vs [relu -> W2], both
// ending in the same loss. check() runs both paths on one batch and evaluates
// the bound channel by channel, summing over channels: lhs is the BN path's
// loss gradient at the BN output, the right-hand side is built from the
// BN-free path's gradient at y together with the BN batch variance and the
// normalized activations.
//
// The published inequality only has room for its 1/sqrt(m) term when the
// pre-BN variance is well below 1 (the gamma^2/sigma^2 factor then amplifies
// the right-hand side); keep input scales modest when sampling trials.
class LipschitzBoundProbe {
public:
    LipschitzBoundProbe(int64_t in_dim, int64_t hidden, int64_t out_dim,
                        double weight_scale, RngState& rng);

    // MSE against targets [N, out_dim]; batch x: [N, in_dim] with N >= 2.
    LipschitzBoundResult check(const Tensor& x, const Tensor& targets);
    // Cross-entropy against integer labels.
    LipschitzBoundResult check(const Tensor& x, std::span<const int> labels);

    BatchNormLayer& bn() { return bn_; }

private:
    LipschitzBoundResult check_impl(const Tensor& x, const Tensor* targets,
                                    std::span<const int> labels);

    Parameter w1_, w2_;
    BatchNormLayer bn_;
};

} // namespace fbn
