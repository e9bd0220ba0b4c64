// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "rar/kernels/distance.hpp"

using namespace rar::kernels;

namespace {

double ref_l2(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
    return s;
}

double ref_dot(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += double(a[i]) * b[i];
    return s;
}

struct LevelGuard {
    ~LevelGuard() { set_simd_level(std::nullopt); }
};

}  // namespace

TEST_CASE("scalar kernels match a double-precision reference") {
    std::mt19937 rng(1);
    std::normal_distribution<float> nd;
    for (std::size_t n : {0u, 1u, 3u, 7u, 8u, 15u, 16u, 17u, 64u, 768u, 1031u}) {
        std::vector<float> a(n), b(n);
        for (auto& x : a) x = nd(rng);
        for (auto& x : b) x = nd(rng);
        CHECK(scalar::l2_squared(a.data(), b.data(), n) == doctest::Approx(ref_l2(a, b)).epsilon(1e-5));
        CHECK(scalar::dot(a.data(), b.data(), n) == doctest::Approx(ref_dot(a, b)).epsilon(1e-4));
    }
}

#if defined(__x86_64__) || defined(_M_X64)
TEST_CASE("avx2 kernels are equivalent to scalar") {
    if (detected_simd_level() != SimdLevel::avx2) {
        MESSAGE("CPU lacks AVX2/FMA; skipping");
        return;
    }
    std::mt19937 rng(2);
    std::normal_distribution<float> nd;
    std::uniform_int_distribution<int> small(-8, 8);
    for (std::size_t n = 0; n <= 300; ++n) {
        std::vector<float> a(n), b(n);
        for (auto& x : a) x = nd(rng);
        for (auto& x : b) x = nd(rng);
        const double scale = 1.0 + ref_l2(a, b);
        CHECK(std::abs(avx2::l2_squared(a.data(), b.data(), n) - scalar::l2_squared(a.data(), b.data(), n)) <=
              1e-5 * scale);
        CHECK(std::abs(avx2::dot(a.data(), b.data(), n) - scalar::dot(a.data(), b.data(), n)) <=
              1e-5 * (1.0 + ref_l2(a, std::vector<float>(n, 0.f)) + ref_l2(b, std::vector<float>(n, 0.f))));

        // Small integers sum exactly in any order.
        for (auto& x : a) x = float(small(rng));
        for (auto& x : b) x = float(small(rng));
        CHECK(avx2::l2_squared(a.data(), b.data(), n) == scalar::l2_squared(a.data(), b.data(), n));
        CHECK(avx2::dot(a.data(), b.data(), n) == scalar::dot(a.data(), b.data(), n));
    }
}
#endif

#if defined(__aarch64__)
TEST_CASE("neon kernels are equivalent to scalar") {
    std::mt19937 rng(3);
    std::uniform_int_distribution<int> small(-8, 8);
    for (std::size_t n = 0; n <= 300; ++n) {
        std::vector<float> a(n), b(n);
        for (auto& x : a) x = float(small(rng));
        for (auto& x : b) x = float(small(rng));
        CHECK(neon::l2_squared(a.data(), b.data(), n) == scalar::l2_squared(a.data(), b.data(), n));
        CHECK(neon::dot(a.data(), b.data(), n) == scalar::dot(a.data(), b.data(), n));
    }
}
#endif

TEST_CASE("dispatch can be pinned and restored") {
    LevelGuard guard;
    set_simd_level(SimdLevel::scalar);
    CHECK(active_simd_level() == SimdLevel::scalar);
    set_simd_level(std::nullopt);
    CHECK(active_simd_level() == detected_simd_level());
    CHECK(to_string(SimdLevel::avx2) == "avx2");
}

TEST_CASE("row kernels agree across levels") {
    LevelGuard guard;
    std::mt19937 rng(4);
    std::uniform_int_distribution<int> small(-8, 8);
    const std::size_t dim = 37, rows = 50;
    std::vector<float> q(dim), m(dim * rows);
    for (auto& x : q) x = float(small(rng));
    for (auto& x : m) x = float(small(rng));

    std::vector<float> l2_auto(rows), dot_auto(rows), l2_scalar(rows), dot_scalar(rows);
    l2_squared_rows(q, m, l2_auto);
    dot_rows(q, m, dot_auto);
    set_simd_level(SimdLevel::scalar);
    l2_squared_rows(q, m, l2_scalar);
    dot_rows(q, m, dot_scalar);
    CHECK(l2_auto == l2_scalar);
    CHECK(dot_auto == dot_scalar);
    for (std::size_t r = 0; r < rows; ++r)
        CHECK(l2_scalar[r] == l2_squared(q, std::span<const float>(m).subspan(r * dim, dim)));
}

TEST_CASE("span entry points reject mismatched sizes") {
    std::vector<float> a(3), b(4);
    CHECK_THROWS(l2_squared(a, b));
    CHECK_THROWS(dot(a, b));
}
