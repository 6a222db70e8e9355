#include "fbn/batchnorm.hpp"

#include <cmath>
#include <stdexcept>

namespace fbn {

namespace {

struct ChannelLayout {
    int64_t n, c, spatial;
};

ChannelLayout channel_layout(const TensorPtr& x) {
    if (x->ndim() < 2)
        throw std::invalid_argument("batchnorm: input must have a channel dimension");
    ChannelLayout l{x->dim(0), x->dim(1), 1};
    for (size_t i = 2; i < x->ndim(); ++i) l.spatial *= x->dim(i);
    return l;
}

} // namespace

TensorPtr batchnorm_raw(Tape* tape, const TensorPtr& x, double eps, BnStats* stats,
                        bool require_batch) {
    const ChannelLayout L = channel_layout(x);
    if (require_batch && L.n < 2)
        throw std::invalid_argument("batchnorm: batch size must be >= 2 in train mode");

    const int64_t m = L.n * L.spatial;
    const double inv_m = 1.0 / static_cast<double>(m);

    std::vector<double> mean(static_cast<size_t>(L.c), 0.0);
    std::vector<double> var(static_cast<size_t>(L.c), 0.0);
    for (int64_t n = 0; n < L.n; ++n)
        for (int64_t c = 0; c < L.c; ++c) {
            const int64_t base = (n * L.c + c) * L.spatial;
            double acc = 0.0;
            for (int64_t s = 0; s < L.spatial; ++s)
                acc += x->data[static_cast<size_t>(base + s)];
            mean[static_cast<size_t>(c)] += acc;
        }
    for (double& v : mean) v *= inv_m;
    for (int64_t n = 0; n < L.n; ++n)
        for (int64_t c = 0; c < L.c; ++c) {
            const int64_t base = (n * L.c + c) * L.spatial;
            const double mu = mean[static_cast<size_t>(c)];
            double acc = 0.0;
            for (int64_t s = 0; s < L.spatial; ++s) {
                const double d = x->data[static_cast<size_t>(base + s)] - mu;
                acc += d * d;
            }
            var[static_cast<size_t>(c)] += acc;
        }
    for (double& v : var) v *= inv_m;

    if (stats) {
        stats->mean = mean;
        stats->var = var;
    }

    const bool rg = tape && x->requires_grad;
    auto out = make_tensor(Tensor::zeros(x->shape), rg);
    std::vector<double> inv_std(static_cast<size_t>(L.c));
    for (int64_t c = 0; c < L.c; ++c)
        inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);
    for (int64_t n = 0; n < L.n; ++n)
        for (int64_t c = 0; c < L.c; ++c) {
            const int64_t base = (n * L.c + c) * L.spatial;
            const double mu = mean[static_cast<size_t>(c)];
            const double is = inv_std[static_cast<size_t>(c)];
            for (int64_t s = 0; s < L.spatial; ++s) {
                const size_t u = static_cast<size_t>(base + s);
                out->data[u] = (x->data[u] - mu) * is;
            }
        }

    if (rg) {
        auto istd = std::make_shared<std::vector<double>>(inv_std);
        tape->record(
            [x, out, istd, L, inv_m]() {
                if (out->grad.empty()) return;
                x->ensure_grad();
                // dx = inv_std * (dy - mean(dy) - xhat * mean(dy * xhat)),
                // means taken per channel over batch and spatial positions.
                for (int64_t c = 0; c < L.c; ++c) {
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (int64_t n = 0; n < L.n; ++n) {
                        const int64_t base = (n * L.c + c) * L.spatial;
                        for (int64_t s = 0; s < L.spatial; ++s) {
                            const size_t u = static_cast<size_t>(base + s);
                            sum_dy += out->grad[u];
                            sum_dy_xhat += out->grad[u] * out->data[u];
                        }
                    }
                    const double mean_dy = sum_dy * inv_m;
                    const double mean_dy_xhat = sum_dy_xhat * inv_m;
                    const double is = (*istd)[static_cast<size_t>(c)];
                    for (int64_t n = 0; n < L.n; ++n) {
                        const int64_t base = (n * L.c + c) * L.spatial;
                        for (int64_t s = 0; s < L.spatial; ++s) {
                            const size_t u = static_cast<size_t>(base + s);
                            x->grad[u] += is * (out->grad[u] - mean_dy -
                                                out->data[u] * mean_dy_xhat);
                        }
                    }
                }
            },
            {x, out});
    }
    return out;
}

TensorPtr normalize_with_stats(Tape* tape, const TensorPtr& x,
                               const std::vector<double>& mean,
                               const std::vector<double>& var, double eps) {
    const ChannelLayout L = channel_layout(x);
    if (static_cast<int64_t>(mean.size()) != L.c || static_cast<int64_t>(var.size()) != L.c)
        throw std::invalid_argument("normalize_with_stats: stat length mismatch");

    const bool rg = tape && x->requires_grad;
    auto out = make_tensor(Tensor::zeros(x->shape), rg);
    std::vector<double> inv_std(static_cast<size_t>(L.c));
    for (int64_t c = 0; c < L.c; ++c)
        inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);
    for (int64_t n = 0; n < L.n; ++n)
        for (int64_t c = 0; c < L.c; ++c) {
            const int64_t base = (n * L.c + c) * L.spatial;
            const double mu = mean[static_cast<size_t>(c)];
            const double is = inv_std[static_cast<size_t>(c)];
            for (int64_t s = 0; s < L.spatial; ++s) {
                const size_t u = static_cast<size_t>(base + s);
                out->data[u] = (x->data[u] - mu) * is;
            }
        }
    if (rg) {
        auto istd = std::make_shared<std::vector<double>>(inv_std);
        tape->record(
            [x, out, istd, L]() {
                if (out->grad.empty()) return;
                x->ensure_grad();
                for (int64_t n = 0; n < L.n; ++n)
                    for (int64_t c = 0; c < L.c; ++c) {
                        const int64_t base = (n * L.c + c) * L.spatial;
                        const double is = (*istd)[static_cast<size_t>(c)];
                        for (int64_t s = 0; s < L.spatial; ++s) {
                            const size_t u = static_cast<size_t>(base + s);
                            x->grad[u] += is * out->grad[u];
                        }
                    }
            },
            {x, out});
    }
    return out;
}

BatchNormLayer::BatchNormLayer(int64_t channels, std::string name, double eps,
                               double momentum, size_t log_capacity)
    : channels_(channels),
      name_(std::move(name)),
      eps_(eps),
      momentum_(momentum),
      log_capacity_(log_capacity) {
    if (channels < 1) throw std::invalid_argument("BatchNormLayer: channels must be >= 1");
    if (!(eps > 0.0)) throw std::invalid_argument("BatchNormLayer: eps must be > 0");
    gamma_ = Parameter(Tensor::full({channels}, 1.0), true, name_ + ".gamma");
    beta_ = Parameter(Tensor::full({channels}, 0.0), true, name_ + ".beta");
    running_mean_.assign(static_cast<size_t>(channels), 0.0);
    running_var_.assign(static_cast<size_t>(channels), 1.0);
}

TensorPtr BatchNormLayer::forward(Tape* tape, const TensorPtr& x, BnMode mode,
                                  RngState* rng, BnStats* probe) {
    const ChannelLayout L = channel_layout(x);
    if (L.c != channels_)
        throw std::invalid_argument("BatchNormLayer '" + name_ + "': channel mismatch");

    TensorPtr xhat;
    switch (mode) {
        case BnMode::train: {
            BnStats stats;
            xhat = batchnorm_raw(tape, x, eps_, &stats, /*require_batch=*/true);
            for (int64_t c = 0; c < channels_; ++c) {
                const size_t u = static_cast<size_t>(c);
                running_mean_[u] =
                    (1.0 - momentum_) * running_mean_[u] + momentum_ * stats.mean[u];
                running_var_[u] =
                    (1.0 - momentum_) * running_var_[u] + momentum_ * stats.var[u];
            }
            stats_log_.push_back(stats);
            while (stats_log_.size() > log_capacity_) stats_log_.pop_front();
            ever_trained_ = true;
            if (probe) *probe = std::move(stats);
            break;
        }
        case BnMode::eval: {
            if (!ever_trained_)
                throw std::runtime_error("BatchNormLayer '" + name_ +
                                         "': eval before any train pass");
            xhat = normalize_with_stats(tape, x, running_mean_, running_var_, eps_);
            break;
        }
        case BnMode::stochastic: {
            if (stats_log_.empty())
                throw std::runtime_error("BatchNormLayer '" + name_ +
                                         "': stochastic forward with empty stats log");
            if (!rng)
                throw std::invalid_argument("BatchNormLayer: stochastic mode needs rng");
            const size_t idx = static_cast<size_t>(rng->next_below(stats_log_.size()));
            const BnStats& s = stats_log_[idx];
            xhat = normalize_with_stats(tape, x, s.mean, s.var, eps_);
            if (probe) *probe = s;
            break;
        }
        case BnMode::calibrate: {
            BnStats stats;
            xhat = batchnorm_raw(tape, x, eps_, &stats, /*require_batch=*/true);
            if (probe) *probe = std::move(stats);
            break;
        }
    }
    return channel_affine(tape, xhat, gamma_.tensor, beta_.tensor);
}

std::vector<double> BatchNormLayer::lipschitz_scale() const {
    if (stats_log_.empty())
        throw std::runtime_error("BatchNormLayer '" + name_ +
                                 "': lipschitz_scale with empty stats log");
    return lipschitz_scale(stats_log_.back());
}

std::vector<double> BatchNormLayer::lipschitz_scale(const BnStats& stats) const {
    std::vector<double> out(static_cast<size_t>(channels_));
    for (int64_t c = 0; c < channels_; ++c) {
        const size_t u = static_cast<size_t>(c);
        out[u] = std::abs(gamma_.tensor->data[u]) / std::sqrt(stats.var[u] + eps_);
    }
    return out;
}

// --- loss-gradient bound check --------------------------------------------------

double lipschitz_bound_rhs(double gamma, double var, double eps,
                           std::span<const double> g, std::span<const double> yhat,
                           double inner_scale) {
    const size_t m = g.size();
    double norm2 = 0.0, dot_ones = 0.0, dot_yhat = 0.0;
    for (size_t i = 0; i < m; ++i) {
        norm2 += g[i] * g[i];
        dot_ones += g[i];
        dot_yhat += g[i] * yhat[i];
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    return gamma * gamma / (var + eps) *
           (norm2 - inv_m * dot_ones * dot_ones - inner_scale * dot_yhat * dot_yhat);
}

LipschitzBoundProbe::LipschitzBoundProbe(int64_t in_dim, int64_t hidden, int64_t out_dim,
                                         double weight_scale, RngState& rng)
    : bn_(hidden, "probe.bn") {
    const double s1 = weight_scale * std::sqrt(2.0 / static_cast<double>(in_dim));
    const double s2 = weight_scale * std::sqrt(2.0 / static_cast<double>(hidden));
    w1_ = Parameter(gaussian_init({in_dim, hidden}, 0.0, s1, rng), false, "probe.w1");
    w2_ = Parameter(gaussian_init({hidden, out_dim}, 0.0, s2, rng), false, "probe.w2");
}

LipschitzBoundResult LipschitzBoundProbe::check(const Tensor& x, const Tensor& targets) {
    return check_impl(x, &targets, {});
}

LipschitzBoundResult LipschitzBoundProbe::check(const Tensor& x,
                                                std::span<const int> labels) {
    return check_impl(x, nullptr, labels);
}

LipschitzBoundResult LipschitzBoundProbe::check_impl(const Tensor& x,
                                                     const Tensor* targets,
                                                     std::span<const int> labels) {
    const int64_t N = x.dim(0);
    if (N < 2) throw std::invalid_argument("LipschitzBoundProbe: batch size must be >= 2");
    const int64_t C = bn_.channels();

    auto attach_loss = [&](Tape* tape, const TensorPtr& out) {
        return targets ? mse_loss(tape, out, *targets)
                       : softmax_cross_entropy(tape, out, labels);
    };

    // BN path; the BN output z is a grad sink, so backward deposits the loss
    // gradient with respect to the BN output there.
    BnStats stats;
    std::vector<double> yhat;
    std::vector<double> lhs_channel(static_cast<size_t>(C), 0.0);
    {
        Tape tape;
        auto xin = make_tensor(x, false);
        auto y = matmul(&tape, xin, w1_.tensor);
        y->requires_grad = true;
        auto z = bn_.forward(&tape, y, BnMode::calibrate, nullptr, &stats);
        z->requires_grad = true;
        auto out = matmul(&tape, relu(&tape, z), w2_.tensor);
        tape.backward(attach_loss(&tape, out));

        yhat.resize(static_cast<size_t>(N * C));
        z->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                const size_t u = static_cast<size_t>(n * C + c);
                yhat[u] = (y->data[u] - stats.mean[static_cast<size_t>(c)]) /
                          std::sqrt(stats.var[static_cast<size_t>(c)] + bn_.eps());
                lhs_channel[static_cast<size_t>(c)] += z->grad[u] * z->grad[u];
            }
    }

    // BN-free counterpart: identical weights, BN replaced by identity; the
    // gradient lands at the pre-BN activations feeding the shared downstream.
    std::vector<double> g(static_cast<size_t>(N * C), 0.0);
    {
        Tape tape;
        auto xin = make_tensor(x, false);
        auto y = matmul(&tape, xin, w1_.tensor);
        y->requires_grad = true;
        auto out = matmul(&tape, relu(&tape, y), w2_.tensor);
        tape.backward(attach_loss(&tape, out));
        y->ensure_grad();
        g = y->grad;
    }

    LipschitzBoundResult r;
    r.lhs_channel = lhs_channel;
    r.rhs_channel.resize(static_cast<size_t>(C));
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(N));
    const double inv_m = 1.0 / static_cast<double>(N);
    std::vector<double> gc(static_cast<size_t>(N)), yc(static_cast<size_t>(N));
    double rhs_alt = 0.0;
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t n = 0; n < N; ++n) {
            gc[static_cast<size_t>(n)] = g[static_cast<size_t>(n * C + c)];
            yc[static_cast<size_t>(n)] = yhat[static_cast<size_t>(n * C + c)];
        }
        const double gamma = bn_.gamma().tensor->data[static_cast<size_t>(c)];
        const double var = stats.var[static_cast<size_t>(c)];
        r.rhs_channel[static_cast<size_t>(c)] =
            lipschitz_bound_rhs(gamma, var, bn_.eps(), gc, yc, inv_sqrt_m);
        rhs_alt += lipschitz_bound_rhs(gamma, var, bn_.eps(), gc, yc, inv_m);
        r.lhs += r.lhs_channel[static_cast<size_t>(c)];
        r.rhs += r.rhs_channel[static_cast<size_t>(c)];
    }
    r.rhs_mean_normalized = rhs_alt;
    const double tol = 1e-12 * std::max(1.0, std::abs(r.rhs));
    r.holds = r.lhs <= r.rhs + tol;
    r.holds_mean_normalized = r.lhs <= r.rhs_mean_normalized + tol;
    return r;
}

} // namespace fbn
