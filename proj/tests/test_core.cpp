// Seed derivation, hashing, clamping, parallel execution, error types.
#include <catch2/catch_amalgamated.hpp>

#include <viewprop/core.hpp>

#include <atomic>
#include <cmath>
#include <set>
#include <vector>

using namespace viewprop;

TEST_CASE("fnv1a64 matches the published test vectors") {
    // Offset basis: hash of the empty string.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("splitmix64 matches the reference output stream head") {
    // First output of the reference generator seeded with 0.
    CHECK(splitmix64(0) == 0xe220a8397b1dcdafull);
}

TEST_CASE("derive_seed separates seeds, tags and indices") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t seed : {0ull, 1ull, 42ull})
        for (const char* tag : {"alpha", "beta"})
            for (std::uint64_t idx : {0ull, 1ull, 2ull})
                seen.insert(derive_seed(seed, tag, idx));
    CHECK(seen.size() == 18);
    CHECK(derive_seed(7, "tag", 3) == derive_seed(7, "tag", 3));
}

TEST_CASE("uniform01 maps hash bits into [0,1)") {
    CHECK(uniform01(0) == 0.0);
    CHECK(uniform01(~0ull) < 1.0);
    CHECK(uniform01(~0ull) > 0.999999);
    CHECK(uniform01(1ull << 11) == std::ldexp(1.0, -53));
    for (std::uint64_t i = 0; i < 1000; ++i) {
        double v = uniform01(derive_seed(1, "u", i));
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("clamp01 clamps and passes interior values") {
    CHECK(clamp01(-0.5) == 0.0);
    CHECK(clamp01(1.5) == 1.0);
    CHECK(clamp01(0.25) == 0.25);
    CHECK(clamp01(0.0) == 0.0);
    CHECK(clamp01(1.0) == 1.0);
}

TEST_CASE("parallel_for covers every index exactly once") {
    const int n = 1000;
    std::vector<std::atomic<int>> hits(n);
    parallel_for(n, 4, [&](int i) { hits[static_cast<std::size_t>(i)].fetch_add(1); });
    for (const auto& h : hits) REQUIRE(h.load() == 1);

    std::vector<int> serial(n), parallel(n);
    parallel_for(n, 1, [&](int i) { serial[static_cast<std::size_t>(i)] = i * i; });
    parallel_for(n, 7, [&](int i) { parallel[static_cast<std::size_t>(i)] = i * i; });
    CHECK(serial == parallel);
}

TEST_CASE("parallel_for propagates worker exceptions") {
    CHECK_THROWS_AS(parallel_for(16, 4,
                                 [&](int i) {
                                     if (i == 9) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
    // Degenerate sizes are no-ops, not errors.
    parallel_for(0, 4, [&](int) { FAIL("no work expected"); });
}

TEST_CASE("error hierarchy roots in Error and std::runtime_error") {
    IoError io("disk gone");
    CHECK(std::string(io.what()) == "disk gone");
    const Error* as_base = &io;
    CHECK(std::string(as_base->what()) == "disk gone");

    CHECK_THROWS_AS(throw GenerationError("g"), Error);
    CHECK_THROWS_AS(throw EditorError("e"), Error);
    CHECK_THROWS_AS(throw MetricError("m"), Error);
    CHECK_THROWS_AS(throw IoError("i"), std::runtime_error);
}
