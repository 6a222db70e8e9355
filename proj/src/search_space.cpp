#include "fbn/search_space.hpp"

#include <cmath>
#include <stdexcept>

#include "fbn/util.hpp"

namespace fbn {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::conv3x3: return "conv3x3";
        case OpKind::conv1x1: return "conv1x1";
        case OpKind::avgpool3x3: return "avgpool3x3";
        case OpKind::identity: return "identity";
        case OpKind::zero: return "zero";
    }
    return "?";
}

// --- ArchEncoding ---------------------------------------------------------------

ArchEncoding ArchEncoding::from_digits(const std::array<uint8_t, kNumEdges>& d) {
    for (uint8_t v : d)
        if (v >= kNumOpKinds)
            throw std::invalid_argument("ArchEncoding: digit must be in [0,5)");
    ArchEncoding e;
    e.digits = d;
    return e;
}

ArchEncoding ArchEncoding::from_string(const std::string& s) {
    if (s.size() != kNumEdges)
        throw std::invalid_argument("ArchEncoding: expected 6 digits, got '" + s + "'");
    std::array<uint8_t, kNumEdges> d{};
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '4')
            throw std::invalid_argument("ArchEncoding: bad digit in '" + s + "'");
        d[i] = static_cast<uint8_t>(s[i] - '0');
    }
    return from_digits(d);
}

ArchEncoding ArchEncoding::from_index(uint32_t index) {
    if (index >= kSpaceSize)
        throw std::invalid_argument("ArchEncoding: index out of range");
    std::array<uint8_t, kNumEdges> d{};
    for (int i = kNumEdges - 1; i >= 0; --i) {
        d[static_cast<size_t>(i)] = static_cast<uint8_t>(index % kNumOpKinds);
        index /= kNumOpKinds;
    }
    return from_digits(d);
}

std::string ArchEncoding::to_string() const {
    std::string s(kNumEdges, '0');
    for (size_t i = 0; i < kNumEdges; ++i)
        s[i] = static_cast<char>('0' + digits[i]);
    return s;
}

uint32_t ArchEncoding::index() const {
    uint32_t v = 0;
    for (size_t i = 0; i < kNumEdges; ++i)
        v = v * kNumOpKinds + digits[i];
    return v;
}

ArchEncoding encode(const std::array<OpKind, kNumEdges>& ops) {
    std::array<uint8_t, kNumEdges> d{};
    for (size_t i = 0; i < kNumEdges; ++i)
        d[i] = static_cast<uint8_t>(ops[i]);
    return ArchEncoding::from_digits(d);
}

std::array<OpKind, kNumEdges> decode(const ArchEncoding& e) {
    std::array<OpKind, kNumEdges> ops{};
    for (int i = 0; i < kNumEdges; ++i)
        ops[static_cast<size_t>(i)] = e.op(i);
    return ops;
}

std::vector<ArchEncoding> enumerate_space() {
    std::vector<ArchEncoding> all;
    all.reserve(kSpaceSize);
    for (uint32_t i = 0; i < kSpaceSize; ++i)
        all.push_back(ArchEncoding::from_index(i));
    return all;
}

ArchEncoding random_encoding(RngState& rng) {
    std::array<uint8_t, kNumEdges> d{};
    for (auto& v : d) v = static_cast<uint8_t>(rng.next_below(kNumOpKinds));
    return ArchEncoding::from_digits(d);
}

std::array<int, kNumOpKinds> census_ops(const std::vector<ArchEncoding>& archs) {
    if (archs.empty()) throw std::invalid_argument("census_ops: empty list");
    std::array<int, kNumOpKinds> counts{};
    for (const auto& a : archs)
        for (uint8_t d : a.digits) counts[d]++;
    return counts;
}

// --- SupernetConfig ---------------------------------------------------------------

void SupernetConfig::validate() const {
    if (channels < 4) throw std::invalid_argument("SupernetConfig: channels must be >= 4");
    if (stages < 1 || cells_per_stage < 1)
        throw std::invalid_argument("SupernetConfig: need >= 1 stage and cell");
    if (num_classes < 2) throw std::invalid_argument("SupernetConfig: num_classes >= 2");
    if (in_channels < 1 || image_h < 1 || image_w < 1)
        throw std::invalid_argument("SupernetConfig: bad input shape");
    const int64_t min_side = std::min(image_h, image_w);
    if ((min_side >> (stages - 1)) < 1)
        throw std::invalid_argument("SupernetConfig: too many stages for image size");
}

uint64_t SupernetConfig::digest() const {
    Hasher h;
    h.update_u64(static_cast<uint64_t>(channels));
    h.update_u64(static_cast<uint64_t>(stages));
    h.update_u64(static_cast<uint64_t>(cells_per_stage));
    h.update_u64(static_cast<uint64_t>(num_classes));
    h.update_u64(static_cast<uint64_t>(in_channels));
    h.update_u64(static_cast<uint64_t>(image_h));
    h.update_u64(static_cast<uint64_t>(image_w));
    h.update_u64(fair_bn ? 1 : 0);
    h.update_u64(bn_on_zero ? 1 : 0);
    h.update_f64(bn_eps);
    h.update_f64(bn_momentum);
    h.update_u64(static_cast<uint64_t>(bn_log_capacity));
    h.update_u64(seed);
    return h.digest();
}

// --- Supernet ----------------------------------------------------------------------

namespace {

Parameter make_conv(const std::string& name, int64_t out_c, int64_t in_c, int64_t k,
                    RngState& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
    return Parameter(gaussian_init({out_c, in_c, k, k}, 0.0, std, rng), true, name);
}

std::unique_ptr<BatchNormLayer> make_bn(const std::string& name,
                                        const SupernetConfig& cfg) {
    return std::make_unique<BatchNormLayer>(cfg.channels, name, cfg.bn_eps,
                                            cfg.bn_momentum, cfg.bn_log_capacity);
}

bool bn_present(const SupernetConfig& cfg, OpKind op) {
    if (op_is_conv(op)) return true;
    if (!cfg.fair_bn) return false;
    if (op == OpKind::zero) return cfg.bn_on_zero;
    return true;
}

void hash_tensor(Hasher& h, const Tensor& t) {
    for (int64_t d : t.shape) h.update_u64(static_cast<uint64_t>(d));
    for (double v : t.data) h.update_f64(v);
}

} // namespace

Supernet::Supernet(const SupernetConfig& config) : config_(config) {
    config_.validate();
    RngState rng(config_.seed);
    const int64_t C = config_.channels;

    stem_.w = make_conv("stem.conv.w", C, config_.in_channels, 3, rng);
    stem_.bn = make_bn("stem.bn", config_);

    const int cells = config_.num_cells();
    cells_.resize(static_cast<size_t>(cells));
    for (int ci = 0; ci < cells; ++ci) {
        for (int e = 0; e < kNumEdges; ++e) {
            EdgeSlot& slot = cells_[static_cast<size_t>(ci)].edges[static_cast<size_t>(e)];
            const std::string base =
                "cell" + std::to_string(ci) + ".edge" + std::to_string(e);
            slot.conv3_w = make_conv(base + ".conv3.w", C, C, 3, rng);
            slot.conv1_w = make_conv(base + ".conv1.w", C, C, 1, rng);
            for (int k = 0; k < kNumOpKinds; ++k) {
                const OpKind op = static_cast<OpKind>(k);
                if (bn_present(config_, op))
                    slot.bns[static_cast<size_t>(k)] =
                        make_bn(base + ".op" + std::to_string(k) + ".bn", config_);
            }
        }
    }

    reductions_.resize(static_cast<size_t>(config_.stages - 1));
    for (int r = 0; r < config_.stages - 1; ++r) {
        const std::string base = "reduce" + std::to_string(r);
        reductions_[static_cast<size_t>(r)].w = make_conv(base + ".conv.w", C, C, 3, rng);
        reductions_[static_cast<size_t>(r)].bn = make_bn(base + ".bn", config_);
    }

    head_bn_ = make_bn("head.bn", config_);
    const double head_std = std::sqrt(2.0 / static_cast<double>(C));
    head_w_ = Parameter(gaussian_init({C, config_.num_classes}, 0.0, head_std, rng), true,
                        "head.fc.w");
    head_b_ = Parameter(Tensor::zeros({config_.num_classes}), true, "head.fc.b");
}

TensorPtr Supernet::bn_apply(Tape* tape, BatchNormLayer& bn, const TensorPtr& x,
                             const ForwardOptions& opts) {
    BnStats probe;
    BnStats* probe_ptr = opts.stat_probe ? &probe : nullptr;
    TensorPtr out = bn.forward(tape, x, opts.bn_mode, opts.rng, probe_ptr);
    if (opts.stat_probe) (*opts.stat_probe)[bn.name()] = std::move(probe);
    return out;
}

TensorPtr Supernet::edge_forward(Tape* tape, const TensorPtr& x, int cell, int edge,
                                 OpKind op, const ForwardOptions& opts) {
    EdgeSlot& slot = cells_[static_cast<size_t>(cell)].edges[static_cast<size_t>(edge)];
    BatchNormLayer* bn = slot.bns[static_cast<size_t>(static_cast<int>(op))].get();

    TensorPtr h;
    switch (op) {
        case OpKind::conv3x3: h = conv2d(tape, x, slot.conv3_w.tensor); break;
        case OpKind::conv1x1: h = conv2d(tape, x, slot.conv1_w.tensor); break;
        case OpKind::avgpool3x3: h = avg_pool3x3(tape, x); break;
        case OpKind::identity: h = x; break;
        case OpKind::zero:
            if (!bn) return nullptr; // contributes nothing to the node sum
            h = make_tensor(Tensor::zeros(x->shape), false);
            break;
    }
    return bn ? bn_apply(tape, *bn, h, opts) : h;
}

TensorPtr Supernet::forward(Tape* tape, const ArchEncoding& enc, const TensorPtr& images,
                            const ForwardOptions& opts) {
    TensorPtr x = conv2d(tape, images, stem_.w.tensor);
    x = bn_apply(tape, *stem_.bn, x, opts);

    int cell_index = 0;
    for (int s = 0; s < config_.stages; ++s) {
        for (int c = 0; c < config_.cells_per_stage; ++c, ++cell_index) {
            std::array<TensorPtr, kNumNodes> nodes{};
            nodes[0] = x;
            for (int j = 1; j < kNumNodes; ++j) {
                TensorPtr acc;
                for (int e = 0; e < kNumEdges; ++e) {
                    if (kEdgeDst[e] != j) continue;
                    TensorPtr contrib =
                        edge_forward(tape, nodes[static_cast<size_t>(kEdgeSrc[e])],
                                     cell_index, e, enc.op(e), opts);
                    if (!contrib) continue;
                    acc = acc ? add(tape, acc, contrib) : contrib;
                }
                nodes[static_cast<size_t>(j)] =
                    acc ? acc : make_tensor(Tensor::zeros(x->shape), false);
            }
            x = nodes[kNumNodes - 1];
        }
        if (s + 1 < config_.stages) {
            ConvBnBlock& red = reductions_[static_cast<size_t>(s)];
            x = conv2d(tape, x, red.w.tensor, /*stride=*/2);
            x = bn_apply(tape, *red.bn, x, opts);
        }
    }

    x = bn_apply(tape, *head_bn_, x, opts);
    x = relu(tape, x);
    x = global_avg_pool(tape, x);
    return linear_layer(tape, x, head_w_.tensor, head_b_.tensor);
}

void Supernet::set_training_mode(TrainMode mode) {
    mode_ = mode;
    const bool weights_trainable = (mode == TrainMode::full);
    for (Parameter* p : weight_parameters()) p->set_trainable(weights_trainable);
    for (Parameter* p : bn_parameters()) p->set_trainable(true);
}

std::vector<Parameter*> Supernet::parameters() {
    std::vector<Parameter*> out = weight_parameters();
    auto bns = bn_parameters();
    out.insert(out.end(), bns.begin(), bns.end());
    return out;
}

std::vector<Parameter*> Supernet::weight_parameters() {
    std::vector<Parameter*> out;
    out.push_back(&stem_.w);
    for (auto& cell : cells_)
        for (auto& edge : cell.edges) {
            out.push_back(&edge.conv3_w);
            out.push_back(&edge.conv1_w);
        }
    for (auto& r : reductions_) out.push_back(&r.w);
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

std::vector<Parameter*> Supernet::bn_parameters() {
    std::vector<Parameter*> out;
    for (BatchNormLayer* bn : all_bns()) {
        out.push_back(&bn->gamma());
        out.push_back(&bn->beta());
    }
    return out;
}

std::vector<BatchNormLayer*> Supernet::all_bns() {
    std::vector<BatchNormLayer*> out;
    out.push_back(stem_.bn.get());
    for (auto& cell : cells_)
        for (auto& edge : cell.edges)
            for (auto& bn : edge.bns)
                if (bn) out.push_back(bn.get());
    for (auto& r : reductions_) out.push_back(r.bn.get());
    out.push_back(head_bn_.get());
    return out;
}

std::vector<BatchNormLayer*> Supernet::path_bns(const ArchEncoding& enc) {
    std::vector<BatchNormLayer*> out;
    for (int ci = 0; ci < config_.num_cells(); ++ci)
        for (int e = 0; e < kNumEdges; ++e) {
            const OpKind op = enc.op(e);
            if (op == OpKind::zero) continue;
            BatchNormLayer* bn = edge_bn(ci, e, op);
            if (bn) out.push_back(bn);
        }
    return out;
}

std::vector<const BatchNormLayer*> Supernet::path_bns(const ArchEncoding& enc) const {
    auto mut = const_cast<Supernet*>(this)->path_bns(enc);
    return {mut.begin(), mut.end()};
}

BatchNormLayer* Supernet::edge_bn(int cell, int edge, OpKind op) {
    return cells_[static_cast<size_t>(cell)]
        .edges[static_cast<size_t>(edge)]
        .bns[static_cast<size_t>(static_cast<int>(op))]
        .get();
}

const BatchNormLayer* Supernet::edge_bn(int cell, int edge, OpKind op) const {
    return const_cast<Supernet*>(this)->edge_bn(cell, edge, op);
}

Parameter* Supernet::edge_weight(int cell, int edge, OpKind op) {
    EdgeSlot& slot = cells_[static_cast<size_t>(cell)].edges[static_cast<size_t>(edge)];
    if (op == OpKind::conv3x3) return &slot.conv3_w;
    if (op == OpKind::conv1x1) return &slot.conv1_w;
    return nullptr;
}

uint64_t Supernet::weight_checksum() const {
    Hasher h;
    for (Parameter* p : const_cast<Supernet*>(this)->weight_parameters())
        hash_tensor(h, *p->tensor);
    return h.digest();
}

uint64_t Supernet::state_checksum() const {
    Hasher h;
    auto* self = const_cast<Supernet*>(this);
    for (Parameter* p : self->parameters()) hash_tensor(h, *p->tensor);
    for (BatchNormLayer* bn : self->all_bns()) {
        for (double v : bn->running_mean()) h.update_f64(v);
        for (double v : bn->running_var()) h.update_f64(v);
    }
    return h.digest();
}

std::vector<Supernet::NamedTensor> Supernet::named_tensors() {
    std::vector<NamedTensor> out;
    for (Parameter* p : parameters()) out.push_back({p->name, p->tensor});
    return out;
}

std::vector<std::pair<std::string, BatchNormLayer*>> Supernet::named_bns() {
    std::vector<std::pair<std::string, BatchNormLayer*>> out;
    for (BatchNormLayer* bn : all_bns()) out.emplace_back(bn->name(), bn);
    return out;
}

// --- StandaloneNetwork ------------------------------------------------------------

StandaloneNetwork::StandaloneNetwork(const SupernetConfig& config, const ArchEncoding& enc)
    : config_(config), enc_(enc) {
    config_.validate();
    RngState rng(config_.seed);
    const int64_t C = config_.channels;

    stem_.w = make_conv("stem.conv.w", C, config_.in_channels, 3, rng);
    stem_.bn = make_bn("stem.bn", config_);

    cells_.resize(static_cast<size_t>(config_.num_cells()));
    for (int ci = 0; ci < config_.num_cells(); ++ci) {
        for (int e = 0; e < kNumEdges; ++e) {
            EdgeInstance& inst = cells_[static_cast<size_t>(ci)][static_cast<size_t>(e)];
            inst.op = enc_.op(e);
            const std::string base =
                "cell" + std::to_string(ci) + ".edge" + std::to_string(e);
            if (inst.op == OpKind::conv3x3) inst.w = make_conv(base + ".w", C, C, 3, rng);
            if (inst.op == OpKind::conv1x1) inst.w = make_conv(base + ".w", C, C, 1, rng);
            if (bn_present(config_, inst.op)) inst.bn = make_bn(base + ".bn", config_);
        }
    }

    reductions_.resize(static_cast<size_t>(config_.stages - 1));
    for (int r = 0; r < config_.stages - 1; ++r) {
        const std::string base = "reduce" + std::to_string(r);
        reductions_[static_cast<size_t>(r)].w = make_conv(base + ".conv.w", C, C, 3, rng);
        reductions_[static_cast<size_t>(r)].bn = make_bn(base + ".bn", config_);
    }

    head_bn_ = make_bn("head.bn", config_);
    const double head_std = std::sqrt(2.0 / static_cast<double>(C));
    head_w_ = Parameter(gaussian_init({C, config_.num_classes}, 0.0, head_std, rng), true,
                        "head.fc.w");
    head_b_ = Parameter(Tensor::zeros({config_.num_classes}), true, "head.fc.b");
}

TensorPtr StandaloneNetwork::forward(Tape* tape, const TensorPtr& images,
                                     const ForwardOptions& opts) {
    auto apply_bn = [&](BatchNormLayer& bn, const TensorPtr& t) {
        BnStats probe;
        BnStats* pp = opts.stat_probe ? &probe : nullptr;
        TensorPtr out = bn.forward(tape, t, opts.bn_mode, opts.rng, pp);
        if (opts.stat_probe) (*opts.stat_probe)[bn.name()] = std::move(probe);
        return out;
    };

    TensorPtr x = conv2d(tape, images, stem_.w.tensor);
    x = apply_bn(*stem_.bn, x);

    int cell_index = 0;
    for (int s = 0; s < config_.stages; ++s) {
        for (int c = 0; c < config_.cells_per_stage; ++c, ++cell_index) {
            auto& cell = cells_[static_cast<size_t>(cell_index)];
            std::array<TensorPtr, kNumNodes> nodes{};
            nodes[0] = x;
            for (int j = 1; j < kNumNodes; ++j) {
                TensorPtr acc;
                for (int e = 0; e < kNumEdges; ++e) {
                    if (kEdgeDst[e] != j) continue;
                    EdgeInstance& inst = cell[static_cast<size_t>(e)];
                    const TensorPtr& in = nodes[static_cast<size_t>(kEdgeSrc[e])];
                    TensorPtr h;
                    switch (inst.op) {
                        case OpKind::conv3x3:
                        case OpKind::conv1x1: h = conv2d(tape, in, inst.w.tensor); break;
                        case OpKind::avgpool3x3: h = avg_pool3x3(tape, in); break;
                        case OpKind::identity: h = in; break;
                        case OpKind::zero:
                            if (!inst.bn) continue;
                            h = make_tensor(Tensor::zeros(in->shape), false);
                            break;
                    }
                    if (inst.bn) h = apply_bn(*inst.bn, h);
                    acc = acc ? add(tape, acc, h) : h;
                }
                nodes[static_cast<size_t>(j)] =
                    acc ? acc : make_tensor(Tensor::zeros(x->shape), false);
            }
            x = nodes[kNumNodes - 1];
        }
        if (s + 1 < config_.stages) {
            ConvBnBlock& red = reductions_[static_cast<size_t>(s)];
            x = conv2d(tape, x, red.w.tensor, 2);
            x = apply_bn(*red.bn, x);
        }
    }

    x = apply_bn(*head_bn_, x);
    x = relu(tape, x);
    x = global_avg_pool(tape, x);
    return linear_layer(tape, x, head_w_.tensor, head_b_.tensor);
}

void StandaloneNetwork::set_training_mode(TrainMode mode) {
    const bool weights_trainable = (mode == TrainMode::full);
    for (Parameter* p : weight_parameters()) p->set_trainable(weights_trainable);
    for (Parameter* p : bn_parameters()) p->set_trainable(true);
}

std::vector<Parameter*> StandaloneNetwork::weight_parameters() {
    std::vector<Parameter*> out;
    out.push_back(&stem_.w);
    for (auto& cell : cells_)
        for (auto& inst : cell)
            if (inst.w.tensor) out.push_back(&inst.w);
    for (auto& r : reductions_) out.push_back(&r.w);
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

std::vector<BatchNormLayer*> StandaloneNetwork::all_bns() {
    std::vector<BatchNormLayer*> out;
    out.push_back(stem_.bn.get());
    for (auto& cell : cells_)
        for (auto& inst : cell)
            if (inst.bn) out.push_back(inst.bn.get());
    for (auto& r : reductions_) out.push_back(r.bn.get());
    out.push_back(head_bn_.get());
    return out;
}

std::vector<Parameter*> StandaloneNetwork::bn_parameters() {
    std::vector<Parameter*> out;
    for (BatchNormLayer* bn : all_bns()) {
        out.push_back(&bn->gamma());
        out.push_back(&bn->beta());
    }
    return out;
}

std::vector<Parameter*> StandaloneNetwork::parameters() {
    std::vector<Parameter*> out = weight_parameters();
    auto bns = bn_parameters();
    out.insert(out.end(), bns.begin(), bns.end());
    return out;
}

namespace {
void copy_bn_state(BatchNormLayer& dst, const BatchNormLayer& src) {
    auto& s = const_cast<BatchNormLayer&>(src);
    dst.gamma().tensor->data = s.gamma().tensor->data;
    dst.beta().tensor->data = s.beta().tensor->data;
    dst.running_mean() = s.running_mean();
    dst.running_var() = s.running_var();
    dst.stats_log() = s.stats_log();
    dst.set_ever_trained(s.ever_trained());
}
} // namespace

void StandaloneNetwork::copy_from(const Supernet& supernet) {
    auto& sn = const_cast<Supernet&>(supernet);
    for (auto& nt : sn.named_tensors()) {
        if (nt.name == "stem.conv.w") stem_.w.tensor->data = nt.tensor->data;
        if (nt.name == "head.fc.w") head_w_.tensor->data = nt.tensor->data;
        if (nt.name == "head.fc.b") head_b_.tensor->data = nt.tensor->data;
        for (int r = 0; r < config_.stages - 1; ++r)
            if (nt.name == "reduce" + std::to_string(r) + ".conv.w")
                reductions_[static_cast<size_t>(r)].w.tensor->data = nt.tensor->data;
    }
    copy_bn_state(*stem_.bn, *sn.all_bns().front());
    for (auto& [name, bn] : sn.named_bns()) {
        if (name == "head.bn") copy_bn_state(*head_bn_, *bn);
        for (int r = 0; r < config_.stages - 1; ++r)
            if (name == "reduce" + std::to_string(r) + ".bn")
                copy_bn_state(*reductions_[static_cast<size_t>(r)].bn, *bn);
    }

    for (int ci = 0; ci < config_.num_cells(); ++ci)
        for (int e = 0; e < kNumEdges; ++e) {
            EdgeInstance& inst = cells_[static_cast<size_t>(ci)][static_cast<size_t>(e)];
            if (Parameter* w = sn.edge_weight(ci, e, inst.op))
                inst.w.tensor->data = w->tensor->data;
            if (inst.bn) {
                const BatchNormLayer* bn = sn.edge_bn(ci, e, inst.op);
                if (bn) copy_bn_state(*inst.bn, *bn);
            }
        }
}

uint64_t StandaloneNetwork::weight_checksum() const {
    Hasher h;
    for (Parameter* p : const_cast<StandaloneNetwork*>(this)->weight_parameters())
        hash_tensor(h, *p->tensor);
    return h.digest();
}

// --- accounting --------------------------------------------------------------------

int64_t count_params(const ArchEncoding& enc, const SupernetConfig& config,
                     bool learnable_only) {
    config.validate();
    const int64_t C = config.channels;
    const int64_t bn_params = 2 * C;
    int64_t total = 0;

    if (!learnable_only) total += 9 * config.in_channels * C; // stem conv
    total += bn_params;                                       // stem bn

    for (int ci = 0; ci < config.num_cells(); ++ci)
        for (int e = 0; e < kNumEdges; ++e) {
            const OpKind op = enc.op(e);
            if (!learnable_only) {
                if (op == OpKind::conv3x3) total += 9 * C * C;
                if (op == OpKind::conv1x1) total += C * C;
            }
            if (bn_present(config, op)) total += bn_params;
        }

    for (int r = 0; r < config.stages - 1; ++r) {
        if (!learnable_only) total += 9 * C * C;
        total += bn_params;
    }

    total += bn_params; // head bn
    if (!learnable_only) total += C * config.num_classes + config.num_classes;
    return total;
}

int64_t count_flops(const ArchEncoding& enc, const SupernetConfig& config) {
    config.validate();
    const int64_t C = config.channels;
    int64_t h = config.image_h, w = config.image_w;
    int64_t total = 9 * config.in_channels * C * h * w; // stem

    for (int s = 0; s < config.stages; ++s) {
        for (int ci = 0; ci < config.cells_per_stage; ++ci) {
            for (int e = 0; e < kNumEdges; ++e) {
                switch (enc.op(e)) {
                    case OpKind::conv3x3: total += 9 * C * C * h * w; break;
                    case OpKind::conv1x1: total += C * C * h * w; break;
                    case OpKind::avgpool3x3: total += 9 * C * h * w; break;
                    case OpKind::identity:
                    case OpKind::zero: break;
                }
            }
        }
        if (s + 1 < config.stages) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
            total += 9 * C * C * h * w; // strided reduction conv
        }
    }
    total += C * config.num_classes; // head fc
    return total;
}

} // namespace fbn
