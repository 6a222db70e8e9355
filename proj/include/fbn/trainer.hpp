#pragma once

#include <functional>
#include <string>

#include "fbn/dataset.hpp"
#include "fbn/search_space.hpp"

namespace fbn {

enum class PathSampling { uniform_single_path, fair_round_robin };
enum class LrSchedule { constant, cosine };

struct TrainConfig {
    TrainMode mode = TrainMode::bn_only;
    int epochs = 5;
    int batch_size = 32;
    double lr = 0.05;
    double momentum = 0.9;
    PathSampling sampling = PathSampling::uniform_single_path;
    LrSchedule lr_schedule = LrSchedule::constant;
    uint64_t seed = 1;

    void validate() const;
    uint64_t digest() const;
};

struct RunRecord {
    uint64_t config_digest = 0;
    uint64_t seed = 0;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_val_accuracy; // stand-alone runs only
    double test_accuracy = -1.0;            // stand-alone runs only
    double wall_clock_sec = 0.0;            // excluded from the content hash
    std::string checkpoint_path;
    std::vector<int> last_batch_indices; // default calibration batch
    uint64_t final_state_checksum = 0;

    uint64_t content_hash() const;
    std::string to_json() const;
};

// Single-path supernet training: per step one architecture is sampled and
// only its path is forwarded and backpropagated. Aborts on non-finite loss.
RunRecord train_supernet(Supernet& net, const Dataset& ds, const TrainConfig& cfg);

// Isolated ground-truth training of one architecture. Weights are seeded
// from (cfg.seed, encoding), so distinct architectures and seeds give
// independent initializations.
RunRecord train_standalone(const SupernetConfig& base_cfg, const ArchEncoding& enc,
                           const Dataset& ds, const TrainConfig& cfg);

// Same, but keeps the trained network alive for further probing.
RunRecord train_standalone_net(StandaloneNetwork& net, const Dataset& ds,
                               const TrainConfig& cfg);

// Top-1 accuracy of a forward closure over a split, batched; ties resolve to
// the lowest class index. The closure must run the network in eval mode.
double evaluate_accuracy(const std::function<TensorPtr(const TensorPtr&)>& forward_eval,
                         const Dataset& ds, std::span<const int> split, int batch_size);

// Argmax with lowest-index tie rule, shared by accuracy and the tests.
int argmax_row(std::span<const double> row);

} // namespace fbn
