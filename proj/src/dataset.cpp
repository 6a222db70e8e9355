#include "fbn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "fbn/util.hpp"

namespace fbn {

void DatasetSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("DatasetSpec: need >= 2 classes");
    if (samples_per_class < 1) throw std::invalid_argument("DatasetSpec: need samples");
    if (channels < 1 || height < 1 || width < 1)
        throw std::invalid_argument("DatasetSpec: bad image shape");
    if (separation < 0.0) throw std::invalid_argument("DatasetSpec: separation < 0");
    if (train_fraction <= 0.0 || val_fraction < 0.0 ||
        train_fraction + val_fraction >= 1.0)
        throw std::invalid_argument("DatasetSpec: bad split fractions");
}

uint64_t DatasetSpec::digest() const {
    Hasher h;
    h.update_u64(static_cast<uint64_t>(num_classes));
    h.update_u64(static_cast<uint64_t>(samples_per_class));
    h.update_u64(static_cast<uint64_t>(channels));
    h.update_u64(static_cast<uint64_t>(height));
    h.update_u64(static_cast<uint64_t>(width));
    h.update_f64(separation);
    h.update_f64(train_fraction);
    h.update_f64(val_fraction);
    h.update_u64(seed);
    return h.digest();
}

TensorPtr Dataset::gather_images(std::span<const int> idx) const {
    if (idx.empty()) throw std::invalid_argument("gather_images: empty index list");
    const int64_t d = image_numel();
    Tensor t = Tensor::zeros({static_cast<int64_t>(idx.size()), spec.channels,
                              spec.height, spec.width});
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(t.data.data() + static_cast<int64_t>(i) * d,
                    images.data() + static_cast<int64_t>(idx[i]) * d,
                    static_cast<size_t>(d) * sizeof(double));
    return make_tensor(std::move(t));
}

std::vector<int> Dataset::gather_labels(std::span<const int> idx) const {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[static_cast<size_t>(idx[i])];
    return out;
}

Dataset generate_synthetic_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    ds.n = static_cast<int64_t>(spec.num_classes) * spec.samples_per_class;
    const int64_t d = ds.image_numel();
    ds.images.assign(static_cast<size_t>(ds.n * d), 0.0);
    ds.labels.assign(static_cast<size_t>(ds.n), 0);

    RngState rng(spec.seed);

    // one unit-norm pattern per class
    std::vector<std::vector<double>> patterns;
    RngState prng = rng.fork(0xA11CE);
    for (int c = 0; c < spec.num_classes; ++c) {
        Tensor p = gaussian_init({d}, 0.0, 1.0, prng);
        double norm = 0.0;
        for (double v : p.data) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : p.data) v /= norm;
        patterns.push_back(std::move(p.data));
    }

    RngState nrng = rng.fork(0xB0B);
    for (int64_t i = 0; i < ds.n; ++i) {
        const int c = static_cast<int>(i % spec.num_classes);
        ds.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(c);
        double* img = ds.images.data() + i * d;
        const double* pat = patterns[static_cast<size_t>(c)].data();
        for (int64_t j = 0; j < d; ++j)
            img[j] = spec.separation * pat[j] + nrng.next_gaussian();
    }

    // disjoint, exhaustive splits over a seeded shuffle
    std::vector<int> order(static_cast<size_t>(ds.n));
    std::iota(order.begin(), order.end(), 0);
    RngState srng = rng.fork(0x5B117);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(srng.next_below(i))]);

    const auto n_train = static_cast<size_t>(spec.train_fraction * static_cast<double>(ds.n));
    const auto n_val = static_cast<size_t>(spec.val_fraction * static_cast<double>(ds.n));
    ds.train_idx.assign(order.begin(), order.begin() + static_cast<long>(n_train));
    ds.val_idx.assign(order.begin() + static_cast<long>(n_train),
                      order.begin() + static_cast<long>(n_train + n_val));
    ds.test_idx.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
    return ds;
}

namespace {
constexpr char kMagic[4] = {'F', 'B', 'N', 'D'};
constexpr uint32_t kVersion = 1;
} // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto file = dir / "data.fbnd";
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_dataset: cannot write " + file.string());
    out.write(kMagic, 4);
    auto u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    u32(kVersion);
    u64(static_cast<uint64_t>(ds.n));
    u32(static_cast<uint32_t>(ds.spec.channels));
    u32(static_cast<uint32_t>(ds.spec.height));
    u32(static_cast<uint32_t>(ds.spec.width));
    u32(static_cast<uint32_t>(ds.spec.num_classes));
    out.write(reinterpret_cast<const char*>(ds.images.data()),
              static_cast<std::streamsize>(ds.images.size() * 8));
    out.write(reinterpret_cast<const char*>(ds.labels.data()),
              static_cast<std::streamsize>(ds.labels.size() * 2));

    nlohmann::json manifest;
    manifest["spec"] = {{"num_classes", ds.spec.num_classes},
                        {"samples_per_class", ds.spec.samples_per_class},
                        {"channels", ds.spec.channels},
                        {"height", ds.spec.height},
                        {"width", ds.spec.width},
                        {"separation", ds.spec.separation},
                        {"train_fraction", ds.spec.train_fraction},
                        {"val_fraction", ds.spec.val_fraction},
                        {"seed", ds.spec.seed}};
    manifest["splits"] = {{"train", ds.train_idx}, {"val", ds.val_idx}, {"test", ds.test_idx}};
    write_text_file(dir / "splits.json", manifest.dump() + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto file = dir / "data.fbnd";
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + file.string());
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_dataset: bad magic");
    auto u32 = [&]() { uint32_t v; in.read(reinterpret_cast<char*>(&v), 4); return v; };
    auto u64 = [&]() { uint64_t v; in.read(reinterpret_cast<char*>(&v), 8); return v; };
    if (u32() != kVersion) throw std::runtime_error("load_dataset: bad version");

    Dataset ds;
    ds.n = static_cast<int64_t>(u64());
    ds.spec.channels = u32();
    ds.spec.height = u32();
    ds.spec.width = u32();
    ds.spec.num_classes = static_cast<int>(u32());
    ds.images.resize(static_cast<size_t>(ds.n * ds.image_numel()));
    ds.labels.resize(static_cast<size_t>(ds.n));
    in.read(reinterpret_cast<char*>(ds.images.data()),
            static_cast<std::streamsize>(ds.images.size() * 8));
    in.read(reinterpret_cast<char*>(ds.labels.data()),
            static_cast<std::streamsize>(ds.labels.size() * 2));
    if (!in) throw std::runtime_error("load_dataset: truncated file");

    auto manifest = nlohmann::json::parse(read_text_file(dir / "splits.json"));
    ds.spec.num_classes = manifest["spec"]["num_classes"];
    ds.spec.samples_per_class = manifest["spec"]["samples_per_class"];
    ds.spec.separation = manifest["spec"]["separation"];
    ds.spec.train_fraction = manifest["spec"]["train_fraction"];
    ds.spec.val_fraction = manifest["spec"]["val_fraction"];
    ds.spec.seed = manifest["spec"]["seed"];
    ds.train_idx = manifest["splits"]["train"].get<std::vector<int>>();
    ds.val_idx = manifest["splits"]["val"].get<std::vector<int>>();
    ds.test_idx = manifest["splits"]["test"].get<std::vector<int>>();
    return ds;
}

std::vector<std::vector<int>> make_batches(std::span<const int> idx, int batch_size,
                                           RngState& rng) {
    if (batch_size < 2) throw std::invalid_argument("make_batches: batch_size >= 2");
    std::vector<int> order(idx.begin(), idx.end());
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.next_below(i))]);
    std::vector<std::vector<int>> batches;
    for (size_t start = 0; start + 2 <= order.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        if (end - start < 2) break;
        batches.emplace_back(order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(end));
    }
    return batches;
}

} // namespace fbn
