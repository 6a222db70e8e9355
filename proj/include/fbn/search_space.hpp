#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fbn/batchnorm.hpp"
#include "fbn/tensor.hpp"

namespace fbn {

// Candidate operator set for one cell edge. Conv ops are the only ones that
// own weight tensors; those weights are frozen under BN-only training.
enum class OpKind : int {
    conv3x3 = 0,
    conv1x1 = 1,
    avgpool3x3 = 2,
    identity = 3,
    zero = 4,
};
inline constexpr int kNumOpKinds = 5;
inline constexpr int kNumEdges = 6;
inline constexpr int kNumNodes = 4;

const char* op_name(OpKind k);
inline bool op_has_weights(OpKind k) {
    return k == OpKind::conv3x3 || k == OpKind::conv1x1;
}
inline bool op_is_conv(OpKind k) { return op_has_weights(k); }

// Cell edges (i -> j), 0 <= i < j <= 3, in lexicographic order.
inline constexpr int kEdgeSrc[kNumEdges] = {0, 0, 0, 1, 1, 2};
inline constexpr int kEdgeDst[kNumEdges] = {1, 2, 3, 2, 3, 3};

// 6-digit base-5 code selecting one OpKind per edge; 5^6 = 15,625 codes.
struct ArchEncoding {
    std::array<uint8_t, kNumEdges> digits{};

    static ArchEncoding from_digits(const std::array<uint8_t, kNumEdges>& d);
    static ArchEncoding from_string(const std::string& s);
    static ArchEncoding from_index(uint32_t index);

    std::string to_string() const;
    uint32_t index() const;
    OpKind op(int edge) const { return static_cast<OpKind>(digits[static_cast<size_t>(edge)]); }

    auto operator<=>(const ArchEncoding&) const = default;
};

inline constexpr uint32_t kSpaceSize = 15625;

ArchEncoding encode(const std::array<OpKind, kNumEdges>& ops);
std::array<OpKind, kNumEdges> decode(const ArchEncoding& e);
std::vector<ArchEncoding> enumerate_space();
ArchEncoding random_encoding(RngState& rng);

// Counts of each OpKind across all edges of the given architectures.
std::array<int, kNumOpKinds> census_ops(const std::vector<ArchEncoding>& archs);

// --- supernet ----------------------------------------------------------------

struct SupernetConfig {
    int64_t channels = 16;
    int stages = 3;
    int cells_per_stage = 1;
    int64_t num_classes = 4;
    int64_t in_channels = 3;
    int64_t image_h = 16;
    int64_t image_w = 16;
    bool fair_bn = true;    // BN after every operator; false = convs only
    bool bn_on_zero = true; // fair mode: keep a BN on the zero op as well
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    size_t bn_log_capacity = 64;
    uint64_t seed = 1;

    void validate() const;
    uint64_t digest() const;
    int num_cells() const { return stages * cells_per_stage; }
};

enum class TrainMode { bn_only, full };

// Fixed conv + BN block (stem and stage reductions).
struct ConvBnBlock {
    Parameter w;
    std::unique_ptr<BatchNormLayer> bn;
};

struct ForwardOptions {
    BnMode bn_mode = BnMode::eval;
    RngState* rng = nullptr;                       // stochastic mode
    std::map<std::string, BnStats>* stat_probe = nullptr; // calibrate mode
};

// Shared-weight supernet over the cell space. Holds, per (cell, edge), one
// weight set per conv OpKind plus one BatchNormLayer per (edge, OpKind) pair
// present under the BN placement policy. Stem, stage reductions and the head
// carry their own BN; those are trainable like every BN but excluded from
// indicator averaging.
class Supernet {
public:
    explicit Supernet(const SupernetConfig& config);

    const SupernetConfig& config() const { return config_; }

    // Single-path forward of the subnet selected by `enc`. Returns logits.
    TensorPtr forward(Tape* tape, const ArchEncoding& enc, const TensorPtr& images,
                      const ForwardOptions& opts);

    void set_training_mode(TrainMode mode);
    TrainMode training_mode() const { return mode_; }

    std::vector<Parameter*> parameters();       // every parameter
    std::vector<Parameter*> bn_parameters();    // gamma/beta of every BN
    std::vector<Parameter*> weight_parameters(); // conv/linear weights + biases
    std::vector<BatchNormLayer*> all_bns();

    // Searchable-edge BNs on the subnet's live (non-zero-op) edges, the set
    // indicators average over. Stem/reduction/head BNs are not included.
    std::vector<BatchNormLayer*> path_bns(const ArchEncoding& enc);
    std::vector<const BatchNormLayer*> path_bns(const ArchEncoding& enc) const;

    BatchNormLayer* edge_bn(int cell, int edge, OpKind op);
    const BatchNormLayer* edge_bn(int cell, int edge, OpKind op) const;
    Parameter* edge_weight(int cell, int edge, OpKind op);

    uint64_t weight_checksum() const; // non-BN parameters only
    uint64_t state_checksum() const;  // all parameters + BN running stats

    // Stable name -> tensor/layer views for checkpointing.
    struct NamedTensor {
        std::string name;
        TensorPtr tensor;
    };
    std::vector<NamedTensor> named_tensors();
    std::vector<std::pair<std::string, BatchNormLayer*>> named_bns();

private:
    struct EdgeSlot {
        Parameter conv3_w;
        Parameter conv1_w;
        std::array<std::unique_ptr<BatchNormLayer>, kNumOpKinds> bns;
    };
    struct CellSlot {
        std::array<EdgeSlot, kNumEdges> edges;
    };

    TensorPtr edge_forward(Tape* tape, const TensorPtr& x, int cell, int edge, OpKind op,
                           const ForwardOptions& opts);
    TensorPtr bn_apply(Tape* tape, BatchNormLayer& bn, const TensorPtr& x,
                       const ForwardOptions& opts);

    SupernetConfig config_;
    TrainMode mode_ = TrainMode::full;
    ConvBnBlock stem_;
    std::vector<CellSlot> cells_;
    std::vector<ConvBnBlock> reductions_;
    std::unique_ptr<BatchNormLayer> head_bn_;
    Parameter head_w_, head_b_;

    friend class StandaloneNetwork;
};

// One architecture materialized in isolation: same macro skeleton as the
// supernet but only the chosen operator (and its BN) per edge. Used for
// stand-alone ground-truth training and as the replica oracle for the
// weight-sharing forward.
class StandaloneNetwork {
public:
    StandaloneNetwork(const SupernetConfig& config, const ArchEncoding& enc);

    TensorPtr forward(Tape* tape, const TensorPtr& images, const ForwardOptions& opts);

    void set_training_mode(TrainMode mode);
    std::vector<Parameter*> parameters();
    std::vector<Parameter*> bn_parameters();
    std::vector<Parameter*> weight_parameters();
    std::vector<BatchNormLayer*> all_bns();
    const ArchEncoding& encoding() const { return enc_; }
    const SupernetConfig& config() const { return config_; }

    // Overwrite all state with the supernet's values along this architecture's
    // path (weights, BN parameters, running stats and logs).
    void copy_from(const Supernet& supernet);

    uint64_t weight_checksum() const;

private:
    struct EdgeInstance {
        OpKind op;
        Parameter w; // conv ops only
        std::unique_ptr<BatchNormLayer> bn;
    };

    SupernetConfig config_;
    ArchEncoding enc_;
    ConvBnBlock stem_;
    std::vector<std::array<EdgeInstance, kNumEdges>> cells_;
    std::vector<ConvBnBlock> reductions_;
    std::unique_ptr<BatchNormLayer> head_bn_;
    Parameter head_w_, head_b_;
};

// --- accounting ----------------------------------------------------------------

// Parameter count of the subnet. With learnable_only the count covers the
// BN-only training regime (gamma/beta of every BN on the subnet, including
// stem/reduction/head); otherwise all path parameters.
int64_t count_params(const ArchEncoding& enc, const SupernetConfig& config,
                     bool learnable_only);

// Multiply-accumulate count per sample (1 MAC = 1 FLOP). Convs count
// k*k*C_in*C_out per output position, average pooling one MAC per tap;
// identity, zero and BN count zero.
int64_t count_flops(const ArchEncoding& enc, const SupernetConfig& config);

} // namespace fbn
