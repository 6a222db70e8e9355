#include "fbn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace fbn {

namespace {

int64_t product(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream ss;
    ss << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) ss << ',';
        ss << s[i];
    }
    ss << ']';
    return ss.str();
}

bool wants_grad(Tape* tape, std::initializer_list<const TensorPtr*> ins) {
    if (!tape) return false;
    for (const TensorPtr* p : ins)
        if ((*p)->requires_grad) return true;
    return false;
}

TensorPtr out_like(std::vector<int64_t> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>(Tensor::zeros(std::move(shape)));
    t->requires_grad = requires_grad;
    return t;
}

} // namespace

// --- Tensor ------------------------------------------------------------------

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (product(shape) != static_cast<int64_t>(data.size()))
        fail("Tensor: shape " + shape_str(shape) + " does not match data length");
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    if (shape.empty()) fail("Tensor: empty shape");
    for (int64_t d : shape)
        if (d <= 0) fail("Tensor: non-positive dimension in " + shape_str(shape));
    int64_t n = product(shape);
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

void Tensor::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::check_finite(const char* what) const {
    if (!all_finite())
        throw std::runtime_error(std::string("non-finite values in ") + what);
}

TensorPtr make_tensor(Tensor t, bool requires_grad) {
    auto p = std::make_shared<Tensor>(std::move(t));
    p->requires_grad = requires_grad;
    return p;
}

// --- Tape ---------------------------------------------------------------------

void Tape::record(std::function<void()> fn, std::initializer_list<TensorPtr> nodes) {
    entries_.push_back(std::move(fn));
    for (const auto& n : nodes) touched_.push_back(n);
}

void Tape::backward(const TensorPtr& loss) {
    if (loss->numel() != 1)
        throw std::invalid_argument("Tape::backward: loss must be scalar");
    double one = 1.0;
    backward(loss, std::span<const double>(&one, 1));
}

void Tape::backward(const TensorPtr& out, std::span<const double> seed) {
    if (static_cast<int64_t>(seed.size()) != out->numel())
        throw std::invalid_argument("Tape::backward: seed length mismatch");
    out->ensure_grad();
    for (size_t i = 0; i < seed.size(); ++i) out->grad[i] += seed[i];
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

void Tape::zero_all_grads() {
    for (auto& t : touched_) t->zero_grad();
}

// --- Parameter ----------------------------------------------------------------

Parameter::Parameter(Tensor t, bool trainable_, std::string name_)
    : tensor(make_tensor(std::move(t), trainable_)),
      trainable(trainable_),
      name(std::move(name_)) {}

void Parameter::set_trainable(bool t) {
    trainable = t;
    tensor->requires_grad = t;
    if (!t) tensor->grad.clear();
}

// --- initialization -------------------------------------------------------------

Tensor gaussian_init(const std::vector<int64_t>& shape, double mean, double std,
                     RngState& rng) {
    if (shape.empty()) fail("gaussian_init: empty shape");
    if (!(std > 0.0)) fail("gaussian_init: std must be > 0");
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) v = mean + std * rng.next_gaussian();
    return t;
}

// --- matmul ---------------------------------------------------------------------

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->ndim() != 2 || b->ndim() != 2)
        fail("matmul: both operands must be 2-D");
    const int64_t m = a->dim(0), k = a->dim(1), k2 = b->dim(0), n = b->dim(1);
    if (k != k2)
        fail("matmul: inner dimensions mismatch " + shape_str(a->shape) + " x " +
             shape_str(b->shape));

    bool rg = wants_grad(tape, {&a, &b});
    TensorPtr out = out_like({m, n}, rg);

    const double* A = a->data.data();
    const double* B = b->data.data();
    double* O = out->data.data();
    for (int64_t i = 0; i < m; ++i) {
        double* orow = O + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }

    if (rg) {
        tape->record(
            [a, b, out, m, k, n]() {
                if (out->grad.empty()) return;
                const double* G = out->grad.data();
                if (a->requires_grad) {
                    a->ensure_grad();
                    double* GA = a->grad.data();
                    const double* B = b->data.data();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t p = 0; p < k; ++p) {
                            const double* brow = B + p * n;
                            const double* grow = G + i * n;
                            double acc = 0.0;
                            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            GA[i * k + p] += acc;
                        }
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    double* GB = b->grad.data();
                    const double* A = a->data.data();
                    for (int64_t i = 0; i < m; ++i) {
                        const double* grow = G + i * n;
                        for (int64_t p = 0; p < k; ++p) {
                            const double av = A[i * k + p];
                            double* gbrow = GB + p * n;
                            for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
            },
            {a, b, out});
    }
    return out;
}

// --- conv2d ----------------------------------------------------------------------

TensorPtr conv2d(Tape* tape, const TensorPtr& x, const TensorPtr& w, int stride) {
    if (x->ndim() != 4 || w->ndim() != 4) fail("conv2d: x and w must be 4-D");
    const int64_t N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    const int64_t F = w->dim(0), Cw = w->dim(1), kh = w->dim(2), kw = w->dim(3);
    if (kh != kw || (kh != 1 && kh != 3))
        fail("conv2d: kernel size must be 1 or 3, got " + shape_str(w->shape));
    if (Cw != C) fail("conv2d: channel mismatch");
    if (stride != 1 && stride != 2) fail("conv2d: stride must be 1 or 2");

    const int64_t k = kh;
    const int64_t pad = k / 2;
    const int64_t Ho = (H + 2 * pad - k) / stride + 1;
    const int64_t Wo = (W + 2 * pad - k) / stride + 1;

    bool rg = wants_grad(tape, {&x, &w});
    TensorPtr out = out_like({N, F, Ho, Wo}, rg);

    const double* X = x->data.data();
    const double* Wt = w->data.data();
    double* O = out->data.data();

    for (int64_t n = 0; n < N; ++n) {
        const double* xn = X + n * C * H * W;
        double* on = O + n * F * Ho * Wo;
        for (int64_t f = 0; f < F; ++f) {
            const double* wf = Wt + f * C * k * k;
            double* of = on + f * Ho * Wo;
            for (int64_t c = 0; c < C; ++c) {
                const double* xc = xn + c * H * W;
                const double* wc = wf + c * k * k;
                for (int64_t ky = 0; ky < k; ++ky) {
                    for (int64_t kx = 0; kx < k; ++kx) {
                        const double wv = wc[ky * k + kx];
                        if (wv == 0.0) continue;
                        for (int64_t oy = 0; oy < Ho; ++oy) {
                            const int64_t y = oy * stride + ky - pad;
                            if (y < 0 || y >= H) continue;
                            const double* xrow = xc + y * W;
                            double* orow = of + oy * Wo;
                            for (int64_t ox = 0; ox < Wo; ++ox) {
                                const int64_t xx = ox * stride + kx - pad;
                                if (xx < 0 || xx >= W) continue;
                                orow[ox] += wv * xrow[xx];
                            }
                        }
                    }
                }
            }
        }
    }

    if (rg) {
        const int64_t s = stride;
        tape->record(
            [x, w, out, N, C, H, W, F, k, pad, Ho, Wo, s]() {
                if (out->grad.empty()) return;
                const double* G = out->grad.data();
                const bool gx = x->requires_grad;
                const bool gw = w->requires_grad;
                if (gx) x->ensure_grad();
                if (gw) w->ensure_grad();
                for (int64_t n = 0; n < N; ++n) {
                    const double* xn = x->data.data() + n * C * H * W;
                    double* gxn = gx ? x->grad.data() + n * C * H * W : nullptr;
                    const double* gn = G + n * F * Ho * Wo;
                    for (int64_t f = 0; f < F; ++f) {
                        const double* gf = gn + f * Ho * Wo;
                        const double* wf = w->data.data() + f * C * k * k;
                        double* gwf = gw ? w->grad.data() + f * C * k * k : nullptr;
                        for (int64_t c = 0; c < C; ++c) {
                            const double* xc = xn + c * H * W;
                            double* gxc = gx ? gxn + c * H * W : nullptr;
                            const double* wc = wf + c * k * k;
                            double* gwc = gw ? gwf + c * k * k : nullptr;
                            for (int64_t ky = 0; ky < k; ++ky) {
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    const double wv = wc[ky * k + kx];
                                    double acc = 0.0;
                                    for (int64_t oy = 0; oy < Ho; ++oy) {
                                        const int64_t y = oy * s + ky - pad;
                                        if (y < 0 || y >= H) continue;
                                        const double* grow = gf + oy * Wo;
                                        const double* xrow = xc + y * W;
                                        double* gxrow = gx ? gxc + y * W : nullptr;
                                        for (int64_t ox = 0; ox < Wo; ++ox) {
                                            const int64_t xx = ox * s + kx - pad;
                                            if (xx < 0 || xx >= W) continue;
                                            const double g = grow[ox];
                                            if (gx) gxrow[xx] += wv * g;
                                            if (gw) acc += xrow[xx] * g;
                                        }
                                    }
                                    if (gw) gwc[ky * k + kx] += acc;
                                }
                            }
                        }
                    }
                }
            },
            {x, w, out});
    }
    return out;
}

// --- avg_pool3x3 -------------------------------------------------------------------

TensorPtr avg_pool3x3(Tape* tape, const TensorPtr& x) {
    if (x->ndim() != 4) fail("avg_pool3x3: x must be 4-D");
    const int64_t N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);

    bool rg = wants_grad(tape, {&x});
    TensorPtr out = out_like(x->shape, rg);

    const double inv9 = 1.0 / 9.0;
    const double* X = x->data.data();
    double* O = out->data.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* xc = X + nc * H * W;
        double* oc = O + nc * H * W;
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t xx = 0; xx < W; ++xx) {
                double acc = 0.0;
                for (int64_t dy = -1; dy <= 1; ++dy) {
                    const int64_t yy = y + dy;
                    if (yy < 0 || yy >= H) continue;
                    for (int64_t dx = -1; dx <= 1; ++dx) {
                        const int64_t xxx = xx + dx;
                        if (xxx < 0 || xxx >= W) continue;
                        acc += xc[yy * W + xxx];
                    }
                }
                oc[y * W + xx] = acc * inv9;
            }
        }
    }

    if (rg) {
        tape->record(
            [x, out, N, C, H, W, inv9]() {
                if (out->grad.empty()) return;
                x->ensure_grad();
                const double* G = out->grad.data();
                double* GX = x->grad.data();
                for (int64_t nc = 0; nc < N * C; ++nc) {
                    const double* gc = G + nc * H * W;
                    double* gxc = GX + nc * H * W;
                    for (int64_t y = 0; y < H; ++y) {
                        for (int64_t xx = 0; xx < W; ++xx) {
                            const double g = gc[y * W + xx] * inv9;
                            for (int64_t dy = -1; dy <= 1; ++dy) {
                                const int64_t yy = y + dy;
                                if (yy < 0 || yy >= H) continue;
                                for (int64_t dx = -1; dx <= 1; ++dx) {
                                    const int64_t xxx = xx + dx;
                                    if (xxx < 0 || xxx >= W) continue;
                                    gxc[yy * W + xxx] += g;
                                }
                            }
                        }
                    }
                }
            },
            {x, out});
    }
    return out;
}

// --- elementwise / shape ops ----------------------------------------------------------

TensorPtr relu(Tape* tape, const TensorPtr& x) {
    bool rg = wants_grad(tape, {&x});
    TensorPtr out = out_like(x->shape, rg);
    const int64_t n = x->numel();
    for (int64_t i = 0; i < n; ++i)
        out->data[static_cast<size_t>(i)] = std::max(0.0, x->data[static_cast<size_t>(i)]);
    if (rg) {
        tape->record(
            [x, out, n]() {
                if (out->grad.empty()) return;
                x->ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    size_t u = static_cast<size_t>(i);
                    if (x->data[u] > 0.0) x->grad[u] += out->grad[u];
                }
            },
            {x, out});
    }
    return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) fail("add: shape mismatch");
    bool rg = wants_grad(tape, {&a, &b});
    TensorPtr out = out_like(a->shape, rg);
    const int64_t n = a->numel();
    for (int64_t i = 0; i < n; ++i) {
        size_t u = static_cast<size_t>(i);
        out->data[u] = a->data[u] + b->data[u];
    }
    if (rg) {
        tape->record(
            [a, b, out, n]() {
                if (out->grad.empty()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (int64_t i = 0; i < n; ++i)
                        a->grad[static_cast<size_t>(i)] += out->grad[static_cast<size_t>(i)];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (int64_t i = 0; i < n; ++i)
                        b->grad[static_cast<size_t>(i)] += out->grad[static_cast<size_t>(i)];
                }
            },
            {a, b, out});
    }
    return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& x, double c) {
    bool rg = wants_grad(tape, {&x});
    TensorPtr out = out_like(x->shape, rg);
    const int64_t n = x->numel();
    for (int64_t i = 0; i < n; ++i)
        out->data[static_cast<size_t>(i)] = c * x->data[static_cast<size_t>(i)];
    if (rg) {
        tape->record(
            [x, out, c, n]() {
                if (out->grad.empty()) return;
                x->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    x->grad[static_cast<size_t>(i)] += c * out->grad[static_cast<size_t>(i)];
            },
            {x, out});
    }
    return out;
}

TensorPtr add_bias_row(Tape* tape, const TensorPtr& x, const TensorPtr& b) {
    if (x->ndim() != 2 || b->ndim() != 1 || x->dim(1) != b->dim(0))
        fail("add_bias_row: expected [m,n] + [n]");
    const int64_t m = x->dim(0), n = x->dim(1);
    bool rg = wants_grad(tape, {&x, &b});
    TensorPtr out = out_like(x->shape, rg);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out->data[static_cast<size_t>(i * n + j)] =
                x->data[static_cast<size_t>(i * n + j)] + b->data[static_cast<size_t>(j)];
    if (rg) {
        tape->record(
            [x, b, out, m, n]() {
                if (out->grad.empty()) return;
                if (x->requires_grad) {
                    x->ensure_grad();
                    for (int64_t i = 0; i < m * n; ++i)
                        x->grad[static_cast<size_t>(i)] += out->grad[static_cast<size_t>(i)];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < n; ++j)
                            b->grad[static_cast<size_t>(j)] +=
                                out->grad[static_cast<size_t>(i * n + j)];
                }
            },
            {x, b, out});
    }
    return out;
}

TensorPtr channel_affine(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                         const TensorPtr& beta) {
    if (x->ndim() < 2) fail("channel_affine: x must have a channel dimension");
    const int64_t N = x->dim(0), C = x->dim(1);
    int64_t spatial = 1;
    for (size_t i = 2; i < x->ndim(); ++i) spatial *= x->dim(i);
    if (gamma->numel() != C || beta->numel() != C)
        fail("channel_affine: gamma/beta length must equal channel count");

    bool rg = wants_grad(tape, {&x, &gamma, &beta});
    TensorPtr out = out_like(x->shape, rg);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const double g = gamma->data[static_cast<size_t>(c)];
            const double b = beta->data[static_cast<size_t>(c)];
            const int64_t base = (n * C + c) * spatial;
            for (int64_t s = 0; s < spatial; ++s)
                out->data[static_cast<size_t>(base + s)] =
                    g * x->data[static_cast<size_t>(base + s)] + b;
        }
    if (rg) {
        tape->record(
            [x, gamma, beta, out, N, C, spatial]() {
                if (out->grad.empty()) return;
                if (x->requires_grad) x->ensure_grad();
                if (gamma->requires_grad) gamma->ensure_grad();
                if (beta->requires_grad) beta->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < C; ++c) {
                        const size_t cc = static_cast<size_t>(c);
                        const int64_t base = (n * C + c) * spatial;
                        double dg = 0.0, db = 0.0;
                        for (int64_t s = 0; s < spatial; ++s) {
                            const size_t u = static_cast<size_t>(base + s);
                            const double g = out->grad[u];
                            if (x->requires_grad) x->grad[u] += g * gamma->data[cc];
                            dg += g * x->data[u];
                            db += g;
                        }
                        if (gamma->requires_grad) gamma->grad[cc] += dg;
                        if (beta->requires_grad) beta->grad[cc] += db;
                    }
            },
            {x, gamma, beta, out});
    }
    return out;
}

TensorPtr flatten(Tape* tape, const TensorPtr& x) {
    const int64_t N = x->dim(0);
    const int64_t rest = x->numel() / N;
    bool rg = wants_grad(tape, {&x});
    TensorPtr out = out_like({N, rest}, rg);
    out->data = x->data;
    if (rg) {
        tape->record(
            [x, out]() {
                if (out->grad.empty()) return;
                x->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
            },
            {x, out});
    }
    return out;
}

TensorPtr global_avg_pool(Tape* tape, const TensorPtr& x) {
    if (x->ndim() != 4) fail("global_avg_pool: x must be 4-D");
    const int64_t N = x->dim(0), C = x->dim(1), HW = x->dim(2) * x->dim(3);
    bool rg = wants_grad(tape, {&x});
    TensorPtr out = out_like({N, C}, rg);
    const double inv = 1.0 / static_cast<double>(HW);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (n * C + c) * HW;
            double acc = 0.0;
            for (int64_t s = 0; s < HW; ++s) acc += x->data[static_cast<size_t>(base + s)];
            out->data[static_cast<size_t>(n * C + c)] = acc * inv;
        }
    if (rg) {
        tape->record(
            [x, out, N, C, HW, inv]() {
                if (out->grad.empty()) return;
                x->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < C; ++c) {
                        const double g = out->grad[static_cast<size_t>(n * C + c)] * inv;
                        const int64_t base = (n * C + c) * HW;
                        for (int64_t s = 0; s < HW; ++s)
                            x->grad[static_cast<size_t>(base + s)] += g;
                    }
            },
            {x, out});
    }
    return out;
}

TensorPtr linear_layer(Tape* tape, const TensorPtr& x, const TensorPtr& w,
                       const TensorPtr& b) {
    return add_bias_row(tape, matmul(tape, x, w), b);
}

// --- losses -----------------------------------------------------------------------------

TensorPtr softmax_cross_entropy(Tape* tape, const TensorPtr& logits,
                                std::span<const int> labels) {
    if (logits->ndim() != 2) fail("softmax_cross_entropy: logits must be [N,K]");
    const int64_t N = logits->dim(0), K = logits->dim(1);
    if (static_cast<int64_t>(labels.size()) != N)
        fail("softmax_cross_entropy: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= K)
            fail("softmax_cross_entropy: label out of range [0, num_classes)");

    // Cache probabilities for the backward closure.
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N * K));
    double total = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        const double* row = logits->data.data() + i * K;
        double mx = row[0];
        for (int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < K; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        total += lse - row[labels[static_cast<size_t>(i)]];
        for (int64_t j = 0; j < K; ++j)
            (*probs)[static_cast<size_t>(i * K + j)] = std::exp(row[j] - lse);
    }

    bool rg = wants_grad(tape, {&logits});
    TensorPtr out = out_like({1}, rg);
    out->data[0] = total / static_cast<double>(N);

    if (rg) {
        std::vector<int> lab(labels.begin(), labels.end());
        tape->record(
            [logits, out, probs, lab, N, K]() {
                if (out->grad.empty()) return;
                logits->ensure_grad();
                const double g = out->grad[0] / static_cast<double>(N);
                for (int64_t i = 0; i < N; ++i) {
                    for (int64_t j = 0; j < K; ++j) {
                        double p = (*probs)[static_cast<size_t>(i * K + j)];
                        if (j == lab[static_cast<size_t>(i)]) p -= 1.0;
                        logits->grad[static_cast<size_t>(i * K + j)] += g * p;
                    }
                }
            },
            {logits, out});
    }
    return out;
}

TensorPtr mse_loss(Tape* tape, const TensorPtr& pred, const Tensor& target) {
    if (pred->shape != target.shape) fail("mse_loss: shape mismatch");
    const int64_t n = pred->numel();
    bool rg = wants_grad(tape, {&pred});
    TensorPtr out = out_like({1}, rg);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = pred->data[static_cast<size_t>(i)] - target.data[static_cast<size_t>(i)];
        acc += d * d;
    }
    out->data[0] = acc / static_cast<double>(n);
    if (rg) {
        auto tgt = std::make_shared<std::vector<double>>(target.data);
        tape->record(
            [pred, out, tgt, n]() {
                if (out->grad.empty()) return;
                pred->ensure_grad();
                const double g = out->grad[0] * 2.0 / static_cast<double>(n);
                for (int64_t i = 0; i < n; ++i) {
                    size_t u = static_cast<size_t>(i);
                    pred->grad[u] += g * (pred->data[u] - (*tgt)[u]);
                }
            },
            {pred, out});
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2) fail("softmax_rows: logits must be [N,K]");
    const int64_t N = logits.dim(0), K = logits.dim(1);
    Tensor out = Tensor::zeros(logits.shape);
    for (int64_t i = 0; i < N; ++i) {
        const double* row = logits.data.data() + i * K;
        double* orow = out.data.data() + i * K;
        double mx = row[0];
        for (int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < K; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int64_t j = 0; j < K; ++j) orow[j] /= sum;
    }
    return out;
}

// --- Sgd -----------------------------------------------------------------------------------

Sgd::Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0.0)) fail("Sgd: lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) fail("Sgd: momentum must be in [0,1)");
}

void Sgd::step_one(Parameter& p) {
    Tensor& t = *p.tensor;
    if (t.grad.empty())
        throw std::runtime_error("Sgd::step: trainable parameter '" + p.name +
                                 "' has no gradient");
    auto& v = velocity_[&t];
    if (v.empty()) v.assign(t.data.size(), 0.0);
    if (momentum_ > 0.0) {
        for (size_t i = 0; i < t.data.size(); ++i) {
            v[i] = momentum_ * v[i] + t.grad[i];
            t.data[i] -= lr_ * v[i];
        }
    } else {
        for (size_t i = 0; i < t.data.size(); ++i) t.data[i] -= lr_ * t.grad[i];
    }
}

void Sgd::step(std::span<Parameter> params) {
    for (Parameter& p : params)
        if (p.trainable) step_one(p);
    for (Parameter& p : params) p.tensor->zero_grad();
}

void Sgd::step(std::span<Parameter* const> params) {
    for (Parameter* p : params)
        if (p->trainable) step_one(*p);
    for (Parameter* p : params) p->tensor->zero_grad();
}

void Sgd::step_touched(std::span<Parameter* const> params) {
    for (Parameter* p : params)
        if (p->trainable && !p->tensor->grad.empty()) step_one(*p);
    for (Parameter* p : params) p->tensor->zero_grad();
}

} // namespace fbn
