#include "fbn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "fbn/util.hpp"

namespace fbn {

namespace {

constexpr char kMagic[4] = {'F', 'B', 'N', 'S'};

struct Writer {
    std::ofstream out;
    explicit Writer(const std::filesystem::path& p) : out(p, std::ios::binary | std::ios::trunc) {
        if (!out) throw std::runtime_error("checkpoint: cannot write " + p.string());
    }
    void raw(const void* p, size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f64s(const std::vector<double>& v) { raw(v.data(), v.size() * 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
};

struct Reader {
    std::ifstream in;
    explicit Reader(const std::filesystem::path& p) : in(p, std::ios::binary) {
        if (!in) throw std::runtime_error("checkpoint: cannot open " + p.string());
    }
    void raw(void* p, size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n))
            throw std::runtime_error("checkpoint: truncated file");
    }
    uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
    uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
    uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
    std::vector<double> f64s(size_t n) {
        std::vector<double> v(n);
        raw(v.data(), n * 8);
        return v;
    }
    std::string str() {
        std::string s(u32(), '\0');
        raw(s.data(), s.size());
        return s;
    }
};

std::vector<double> bn_stats_block(BatchNormLayer& bn, std::vector<int64_t>* shape) {
    const size_t C = static_cast<size_t>(bn.channels());
    const size_t K = bn.stats_log().size();
    std::vector<double> block;
    block.reserve(2 * C + K * 2 * C);
    block.insert(block.end(), bn.running_mean().begin(), bn.running_mean().end());
    block.insert(block.end(), bn.running_var().begin(), bn.running_var().end());
    for (const BnStats& s : bn.stats_log()) {
        block.insert(block.end(), s.mean.begin(), s.mean.end());
        block.insert(block.end(), s.var.begin(), s.var.end());
    }
    if (shape) *shape = {static_cast<int64_t>(K), 2, static_cast<int64_t>(C)};
    return block;
}

} // namespace

void save_checkpoint(Supernet& net, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tensors = net.named_tensors();
    auto bns = net.named_bns();

    Writer w(path);
    w.raw(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.u64(net.config().digest());
    w.u32(static_cast<uint32_t>(tensors.size() + bns.size()));

    nlohmann::json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["config_digest"] = hex64(net.config().digest());
    manifest["entries"] = nlohmann::json::array();

    for (auto& nt : tensors) {
        w.str(nt.name);
        w.u8(0);
        w.u32(static_cast<uint32_t>(nt.tensor->shape.size()));
        for (int64_t d : nt.tensor->shape) w.u64(static_cast<uint64_t>(d));
        w.f64s(nt.tensor->data);
        manifest["entries"].push_back(
            {{"name", nt.name}, {"kind", "tensor"}, {"shape", nt.tensor->shape}});
    }
    for (auto& [name, bn] : bns) {
        std::vector<int64_t> log_shape;
        auto block = bn_stats_block(*bn, &log_shape);
        w.str(name + ".stats");
        w.u8(1);
        w.u32(3);
        for (int64_t d : log_shape) w.u64(static_cast<uint64_t>(d));
        w.u8(bn->ever_trained() ? 1 : 0);
        w.f64s(block);
        manifest["entries"].push_back(
            {{"name", name + ".stats"}, {"kind", "bn_stats"}, {"shape", log_shape}});
    }

    write_text_file(path.string() + ".manifest.json", manifest.dump(2) + "\n");
}

void load_checkpoint(Supernet& net, const std::filesystem::path& path) {
    Reader r(path);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    if (r.u32() != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version");
    const uint64_t digest = r.u64();
    if (digest != net.config().digest())
        throw std::runtime_error("checkpoint: config digest mismatch");

    std::map<std::string, TensorPtr> tensor_map;
    for (auto& nt : net.named_tensors()) tensor_map[nt.name] = nt.tensor;
    std::map<std::string, BatchNormLayer*> bn_map;
    for (auto& [name, bn] : net.named_bns()) bn_map[name] = bn;

    const uint32_t entries = r.u32();
    for (uint32_t i = 0; i < entries; ++i) {
        const std::string name = r.str();
        const uint8_t kind = r.u8();
        const uint32_t ndim = r.u32();
        std::vector<int64_t> shape(ndim);
        int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int64_t>(r.u64());
            numel *= d;
        }
        if (kind == 0) {
            auto it = tensor_map.find(name);
            if (it == tensor_map.end())
                throw std::runtime_error("checkpoint: unknown tensor " + name);
            if (it->second->shape != shape)
                throw std::runtime_error("checkpoint: shape mismatch for " + name);
            it->second->data = r.f64s(static_cast<size_t>(numel));
        } else if (kind == 1) {
            const std::string bn_name = name.substr(0, name.size() - 6); // strip ".stats"
            auto it = bn_map.find(bn_name);
            if (it == bn_map.end())
                throw std::runtime_error("checkpoint: unknown bn " + bn_name);
            BatchNormLayer& bn = *it->second;
            const size_t C = static_cast<size_t>(bn.channels());
            if (shape[2] != static_cast<int64_t>(C))
                throw std::runtime_error("checkpoint: channel mismatch for " + bn_name);
            bn.set_ever_trained(r.u8() != 0);
            auto block = r.f64s(static_cast<size_t>(2 * C) +
                                static_cast<size_t>(shape[0]) * 2 * C);
            bn.running_mean().assign(block.begin(), block.begin() + static_cast<long>(C));
            bn.running_var().assign(block.begin() + static_cast<long>(C),
                                    block.begin() + static_cast<long>(2 * C));
            bn.stats_log().clear();
            for (int64_t k = 0; k < shape[0]; ++k) {
                const size_t base = 2 * C + static_cast<size_t>(k) * 2 * C;
                BnStats s;
                s.mean.assign(block.begin() + static_cast<long>(base),
                              block.begin() + static_cast<long>(base + C));
                s.var.assign(block.begin() + static_cast<long>(base + C),
                             block.begin() + static_cast<long>(base + 2 * C));
                bn.stats_log().push_back(std::move(s));
            }
        } else {
            throw std::runtime_error("checkpoint: unknown entry kind");
        }
    }
}

uint64_t checkpoint_digest(const std::filesystem::path& path) { return hash_file(path); }

} // namespace fbn
