#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace readcore {

// Configuration problems (bad keys, invalid values, impossible requests).
// The CLI maps these to exit code 2.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Problems with input data (malformed files, missing tiles, dangling ids).
// The CLI maps these to exit code 3.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failures (singular systems, degenerate variance).
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic PRNG: xoshiro256++ seeded via splitmix64. All randomized
// code in the library draws from this so runs are reproducible bit-for-bit
// across platforms; std::random distributions are implementation-defined
// and must not be used.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // Uniform in [0, 1), 53-bit resolution.
    double next_double();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller.
    double next_gaussian();
    // Uniform integer in [0, n), n > 0.
    int next_int(int n);

    // Independent stream derived from this rng's seed and a stream id.
    Rng fork(std::uint64_t stream) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_[4];
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& x);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// FNV-1a over a byte string; used for config/artifact lineage hashes.
std::uint64_t fnv1a(std::string_view bytes);
std::string hash_hex(std::uint64_t h);

// Shortest round-trip decimal form (std::to_chars).
std::string fmt_double(double v);
std::string fmt_float(float v);
double parse_double(std::string_view s, const std::string& context);
long parse_long(std::string_view s, const std::string& context);

std::vector<std::string> split(std::string_view line, char sep);
std::string trim(std::string_view s);

// Whole-file helpers.
std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, std::string_view content);
std::vector<std::string> read_lines(const std::filesystem::path& p);

// Little-endian binary I/O used by the store formats.
void put_u32(std::string& buf, std::uint32_t v);
void put_u64(std::string& buf, std::uint64_t v);
void put_f32(std::string& buf, float v);
void put_f64(std::string& buf, double v);
std::uint32_t get_u32(const std::string& buf, std::size_t& off, const std::string& context);
std::uint64_t get_u64(const std::string& buf, std::size_t& off, const std::string& context);
float get_f32(const std::string& buf, std::size_t& off, const std::string& context);
double get_f64(const std::string& buf, std::size_t& off, const std::string& context);

}  // namespace readcore
