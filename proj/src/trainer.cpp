#include "fbn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fbn/util.hpp"

namespace fbn {

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs >= 1");
    if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size >= 2");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr > 0");
    if (momentum < 0.0 || momentum >= 1.0)
        throw std::invalid_argument("TrainConfig: momentum in [0,1)");
}

uint64_t TrainConfig::digest() const {
    Hasher h;
    h.update_u64(mode == TrainMode::bn_only ? 0 : 1);
    h.update_u64(static_cast<uint64_t>(epochs));
    h.update_u64(static_cast<uint64_t>(batch_size));
    h.update_f64(lr);
    h.update_f64(momentum);
    h.update_u64(sampling == PathSampling::uniform_single_path ? 0 : 1);
    h.update_u64(lr_schedule == LrSchedule::constant ? 0 : 1);
    h.update_u64(seed);
    return h.digest();
}

uint64_t RunRecord::content_hash() const {
    Hasher h;
    h.update_u64(config_digest);
    h.update_u64(seed);
    for (double v : epoch_loss) h.update_f64(v);
    for (double v : epoch_val_accuracy) h.update_f64(v);
    h.update_f64(test_accuracy);
    for (int i : last_batch_indices) h.update_u64(static_cast<uint64_t>(i));
    h.update_u64(final_state_checksum);
    return h.digest();
}

std::string RunRecord::to_json() const {
    nlohmann::json j;
    j["config_digest"] = hex64(config_digest);
    j["seed"] = seed;
    j["epoch_loss"] = epoch_loss;
    j["epoch_val_accuracy"] = epoch_val_accuracy;
    j["test_accuracy"] = test_accuracy;
    j["wall_clock_sec"] = wall_clock_sec;
    j["checkpoint_path"] = checkpoint_path;
    j["last_batch_indices"] = last_batch_indices;
    j["content_hash"] = hex64(content_hash());
    return j.dump(2);
}

namespace {

double lr_at(const TrainConfig& cfg, int step, int total_steps) {
    if (cfg.lr_schedule == LrSchedule::constant) return cfg.lr;
    const double t = total_steps <= 1
                         ? 0.0
                         : static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return 0.5 * cfg.lr * (1.0 + std::cos(3.14159265358979323846 * t));
}

[[noreturn]] void abort_nonfinite(double loss, int epoch, int step) {
    std::ostringstream ss;
    ss << "training aborted: non-finite loss " << loss << " at epoch " << epoch
       << " step " << step;
    throw std::runtime_error(ss.str());
}

} // namespace

RunRecord train_supernet(Supernet& net, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    net.set_training_mode(cfg.mode);

    auto params_vec = net.parameters();
    Sgd opt(cfg.lr, cfg.momentum);

    RngState batch_rng = RngState(cfg.seed).fork(1);
    RngState path_rng = RngState(cfg.seed).fork(2);

    RunRecord rec;
    rec.config_digest = cfg.digest() ^ net.config().digest() ^ ds.spec.digest();
    rec.seed = cfg.seed;

    const int total_steps =
        cfg.epochs *
        std::max<int>(1, static_cast<int>(ds.train_idx.size()) / cfg.batch_size);
    int step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = make_batches(ds.train_idx, cfg.batch_size, batch_rng);
        double loss_sum = 0.0;
        int loss_count = 0;
        for (const auto& batch : batches) {
            auto images = ds.gather_images(batch);
            auto labels = ds.gather_labels(batch);

            const int paths =
                cfg.sampling == PathSampling::fair_round_robin ? kNumOpKinds : 1;
            // fair round-robin: per step, one path per op slot such that every
            // edge sees each op exactly once; gradients accumulate, then step.
            std::array<std::array<uint8_t, kNumEdges>, kNumOpKinds> plan{};
            if (paths > 1) {
                for (int e = 0; e < kNumEdges; ++e) {
                    std::array<uint8_t, kNumOpKinds> perm{};
                    for (int k = 0; k < kNumOpKinds; ++k) perm[static_cast<size_t>(k)] = static_cast<uint8_t>(k);
                    for (size_t i = kNumOpKinds; i > 1; --i)
                        std::swap(perm[i - 1], perm[static_cast<size_t>(path_rng.next_below(i))]);
                    for (int p = 0; p < kNumOpKinds; ++p)
                        plan[static_cast<size_t>(p)][static_cast<size_t>(e)] =
                            perm[static_cast<size_t>(p)];
                }
            }

            double step_loss = 0.0;
            for (int p = 0; p < paths; ++p) {
                ArchEncoding enc = paths > 1 ? ArchEncoding::from_digits(plan[static_cast<size_t>(p)])
                                             : random_encoding(path_rng);
                Tape tape;
                auto logits = net.forward(&tape, enc, images, {BnMode::train});
                auto loss = softmax_cross_entropy(&tape, logits, labels);
                if (!std::isfinite(loss->data[0])) abort_nonfinite(loss->data[0], epoch, step);
                step_loss += loss->data[0] / static_cast<double>(paths);
                tape.backward(loss);
            }

            opt.set_lr(lr_at(cfg, step, total_steps));
            opt.step_touched(params_vec);

            loss_sum += step_loss;
            loss_count++;
            step++;
            rec.last_batch_indices = batch;
        }
        rec.epoch_loss.push_back(loss_count ? loss_sum / loss_count : 0.0);
    }

    rec.final_state_checksum = net.state_checksum();
    rec.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

RunRecord train_standalone(const SupernetConfig& base_cfg, const ArchEncoding& enc,
                           const Dataset& ds, const TrainConfig& cfg) {
    SupernetConfig net_cfg = base_cfg;
    net_cfg.seed = RngState(cfg.seed).fork(0x517AD0 + enc.index()).seed;
    StandaloneNetwork net(net_cfg, enc);
    return train_standalone_net(net, ds, cfg);
}

RunRecord train_standalone_net(StandaloneNetwork& net, const Dataset& ds,
                               const TrainConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    net.set_training_mode(cfg.mode);

    auto params_vec = net.parameters();
    Sgd opt(cfg.lr, cfg.momentum);
    RngState batch_rng = RngState(cfg.seed).fork(1);

    RunRecord rec;
    rec.config_digest = cfg.digest() ^ net.config().digest() ^ ds.spec.digest() ^
                        net.encoding().index();
    rec.seed = cfg.seed;

    const int total_steps =
        cfg.epochs *
        std::max<int>(1, static_cast<int>(ds.train_idx.size()) / cfg.batch_size);
    int step = 0;

    auto eval_forward = [&](const TensorPtr& images) {
        return net.forward(nullptr, images, {BnMode::eval});
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = make_batches(ds.train_idx, cfg.batch_size, batch_rng);
        double loss_sum = 0.0;
        int loss_count = 0;
        for (const auto& batch : batches) {
            auto images = ds.gather_images(batch);
            auto labels = ds.gather_labels(batch);
            Tape tape;
            auto logits = net.forward(&tape, images, {BnMode::train});
            auto loss = softmax_cross_entropy(&tape, logits, labels);
            if (!std::isfinite(loss->data[0])) abort_nonfinite(loss->data[0], epoch, step);
            tape.backward(loss);

            opt.set_lr(lr_at(cfg, step, total_steps));
            opt.step_touched(params_vec);
            loss_sum += loss->data[0];
            loss_count++;
            step++;
            rec.last_batch_indices = batch;
        }
        rec.epoch_loss.push_back(loss_count ? loss_sum / loss_count : 0.0);
        if (!ds.val_idx.empty())
            rec.epoch_val_accuracy.push_back(
                evaluate_accuracy(eval_forward, ds, ds.val_idx, cfg.batch_size));
    }

    if (!ds.test_idx.empty())
        rec.test_accuracy = evaluate_accuracy(eval_forward, ds, ds.test_idx, cfg.batch_size);
    rec.final_state_checksum = net.weight_checksum();
    rec.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

int argmax_row(std::span<const double> row) {
    int best = 0;
    for (size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[static_cast<size_t>(best)]) best = static_cast<int>(j);
    return best;
}

double evaluate_accuracy(const std::function<TensorPtr(const TensorPtr&)>& forward_eval,
                         const Dataset& ds, std::span<const int> split, int batch_size) {
    if (split.empty()) throw std::invalid_argument("evaluate_accuracy: empty split");
    int64_t correct = 0;
    for (size_t start = 0; start < split.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(split.size(), start + static_cast<size_t>(batch_size));
        std::vector<int> idx(split.begin() + static_cast<long>(start),
                             split.begin() + static_cast<long>(end));
        auto images = ds.gather_images(idx);
        auto labels = ds.gather_labels(idx);
        auto logits = forward_eval(images);
        const int64_t K = logits->dim(1);
        for (size_t i = 0; i < idx.size(); ++i) {
            std::span<const double> row(logits->data.data() + static_cast<int64_t>(i) * K,
                                        static_cast<size_t>(K));
            if (argmax_row(row) == labels[i]) correct++;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

} // namespace fbn
