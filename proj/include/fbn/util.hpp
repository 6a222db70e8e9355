#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace fbn {

// --- content hashing (FNV-1a 64) -------------------------------------------

struct Hasher {
    uint64_t state = 0xcbf29ce484222325ULL;

    void update(const void* data, size_t n);
    void update_string(const std::string& s) { update(s.data(), s.size()); }
    void update_u64(uint64_t v);
    void update_f64(double v);
    uint64_t digest() const { return state; }
};

uint64_t hash_bytes(const void* data, size_t n);
uint64_t hash_file(const std::filesystem::path& p);
std::string hex64(uint64_t v);

// --- worker pool ------------------------------------------------------------

// Worker cap: FBN_WORKERS env if set, else hardware concurrency.
int worker_count();

// Runs fn(0..n-1) across up to `workers` threads. Tasks must be independent;
// the first exception thrown by any task is rethrown after all threads join.
void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn);

// --- small file helpers -----------------------------------------------------

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& content);

// One row of comma-joined cells. No quoting; cells must not contain commas.
std::string csv_row(const std::vector<std::string>& cells);

std::string format_double(double v);

} // namespace fbn
