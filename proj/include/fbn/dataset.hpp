#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fbn/tensor.hpp"

namespace fbn {

// Class-conditional Gaussian-blob images: one fixed unit-norm pattern per
// class, sample = separation * pattern + unit Gaussian pixel noise.
struct DatasetSpec {
    int num_classes = 4;
    int samples_per_class = 500;
    int64_t channels = 3;
    int64_t height = 16;
    int64_t width = 16;
    double separation = 5.0;
    double train_fraction = 0.7;
    double val_fraction = 0.15; // test gets the remainder
    uint64_t seed = 1;

    void validate() const;
    uint64_t digest() const;
};

struct Dataset {
    DatasetSpec spec;
    int64_t n = 0;
    std::vector<double> images; // [n, C, H, W] row-major
    std::vector<uint16_t> labels;
    std::vector<int> train_idx, val_idx, test_idx;

    int64_t image_numel() const { return spec.channels * spec.height * spec.width; }

    TensorPtr gather_images(std::span<const int> idx) const;
    std::vector<int> gather_labels(std::span<const int> idx) const;
};

Dataset generate_synthetic_dataset(const DatasetSpec& spec);

// Binary image file (magic "FBND") plus splits.json manifest in `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Shuffled mini-batches over an index list; batches shorter than 2 samples
// are dropped (BN train-mode precondition).
std::vector<std::vector<int>> make_batches(std::span<const int> idx, int batch_size,
                                           RngState& rng);

} // namespace fbn
