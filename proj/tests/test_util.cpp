#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

#include "read/util.hpp"

using namespace readcore;

TEST_CASE("splitmix64 matches the reference stream") {
    std::uint64_t x = 0;
    CHECK(splitmix64(x) == 0xe220a8397b1dcdafULL);
    CHECK(splitmix64(x) == 0x6e789e6aa1b965f4ULL);
    CHECK(splitmix64(x) == 0x06c45d188009454fULL);
}

TEST_CASE("fnv1a known values") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("hash_hex is 16 lowercase hex digits") {
    CHECK(hash_hex(0) == "0000000000000000");
    CHECK(hash_hex(0xdeadbeefULL) == "00000000deadbeef");
    CHECK(hash_hex(UINT64_MAX) == "ffffffffffffffff");
}

TEST_CASE("mix_seed separates streams") {
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    CHECK(mix_seed(1, 2) != mix_seed(1, 3));
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
}

TEST_CASE("rng reproducibility and stream independence") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff_seed = false;
    for (int i = 0; i < 100; ++i) {
        std::uint64_t va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
        all_equal = all_equal && va == vb;
        any_diff_seed = any_diff_seed || va != vc;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);

    Rng p(7);
    Rng f1 = p.fork(1), f1b = Rng(7).fork(1), f2 = p.fork(2);
    CHECK(f1.next_u64() == f1b.next_u64());
    CHECK(f1.next_u64() != f2.next_u64());
}

TEST_CASE("next_double in [0,1), uniform in range") {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        double d = rng.next_double();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform(-2.5, 3.5);
        CHECK(u >= -2.5);
        CHECK(u < 3.5);
    }
}

TEST_CASE("next_int covers [0,n) and nothing else") {
    Rng rng(11);
    std::set<int> seen;
    for (int i = 0; i < 2000; ++i) {
        int v = rng.next_int(7);
        CHECK(v >= 0);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
    Rng one(3);
    for (int i = 0; i < 10; ++i) CHECK(one.next_int(1) == 0);
}

TEST_CASE("gaussian moments are roughly standard normal") {
    Rng rng(5);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double g = rng.next_gaussian();
        sum += g;
        sum2 += g * g;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle permutes and is seed-deterministic") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    std::vector<int> w = v, u = v;
    Rng(9).shuffle(w);
    Rng(9).shuffle(u);
    CHECK(w == u);
    CHECK(w != v);  // 50! permutations; identity is effectively impossible
    std::vector<int> sorted = w;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);
}

TEST_CASE("fmt_double round-trips exactly") {
    for (double v : {0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, 1e300, -4.9e-324, 12345.6789,
                     85.0511287798}) {
        CHECK(parse_double(fmt_double(v), "test") == v);
    }
    CHECK(fmt_double(1.0) == "1");
    CHECK(fmt_double(0.5) == "0.5");
}

TEST_CASE("parse errors carry the context") {
    CHECK_THROWS_AS(parse_double("abc", "field x"), data_error);
    CHECK_THROWS_AS(parse_double("1.5junk", "field x"), data_error);
    CHECK_THROWS_AS(parse_double("", "field x"), data_error);
    CHECK_THROWS_AS(parse_long("3.5", "row 2"), data_error);
    CHECK_THROWS_WITH_AS(parse_long("x", "row 2"), "invalid integer 'x' in row 2", data_error);
    CHECK(parse_long("-42", "t") == -42);
}

TEST_CASE("split keeps empty fields") {
    auto f = split("a,b,,c", ',');
    REQUIRE(f.size() == 4);
    CHECK(f[0] == "a");
    CHECK(f[2] == "");
    CHECK(split("", ',').size() == 1);
    CHECK(split("x,", ',').size() == 2);
}

TEST_CASE("trim strips surrounding whitespace") {
    CHECK(trim("  a b \t\n") == "a b");
    CHECK(trim("") == "");
    CHECK(trim(" \t ") == "");
}

TEST_CASE("text file round trip and line splitting") {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / "readcore_util_test.txt";
    write_text_file(p, "one\ntwo\r\n\nlast");
    CHECK(read_text_file(p) == "one\ntwo\r\n\nlast");
    auto lines = read_lines(p);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "one");
    CHECK(lines[1] == "two");
    CHECK(lines[2] == "");
    CHECK(lines[3] == "last");
    fs::remove(p);
    CHECK_THROWS_AS(read_text_file(p), data_error);
}

TEST_CASE("binary helpers are little endian and round trip") {
    std::string buf;
    put_u32(buf, 0x01020304u);
    REQUIRE(buf.size() == 4);
    CHECK(static_cast<unsigned char>(buf[0]) == 0x04);
    CHECK(static_cast<unsigned char>(buf[3]) == 0x01);

    put_u64(buf, 0x1122334455667788ULL);
    put_f32(buf, 3.25f);
    put_f64(buf, -1.0 / 3.0);

    std::size_t off = 0;
    CHECK(get_u32(buf, off, "t") == 0x01020304u);
    CHECK(get_u64(buf, off, "t") == 0x1122334455667788ULL);
    CHECK(get_f32(buf, off, "t") == 3.25f);
    CHECK(get_f64(buf, off, "t") == -1.0 / 3.0);
    CHECK(off == buf.size());
    CHECK_THROWS_AS(get_u32(buf, off, "tail"), data_error);
}
