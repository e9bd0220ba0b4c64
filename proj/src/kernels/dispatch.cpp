// SPDX-License-Identifier: Apache-2.0
#include "rar/kernels/distance.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace rar::kernels {

namespace {

using BinaryKernel = float (*)(const float*, const float*, std::size_t);

struct KernelTable {
    BinaryKernel l2_squared;
    BinaryKernel dot;
};

bool supported(SimdLevel level) {
    switch (level) {
    case SimdLevel::scalar:
        return true;
    case SimdLevel::avx2:
#if defined(__x86_64__) || defined(_M_X64)
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
        return false;
#endif
    case SimdLevel::neon:
#if defined(__aarch64__)
        return true;
#else
        return false;
#endif
    }
    return false;
}

KernelTable table_for(SimdLevel level) {
    switch (level) {
#if defined(__x86_64__) || defined(_M_X64)
    case SimdLevel::avx2:
        return {avx2::l2_squared, avx2::dot};
#endif
#if defined(__aarch64__)
    case SimdLevel::neon:
        return {neon::l2_squared, neon::dot};
#endif
    default:
        return {scalar::l2_squared, scalar::dot};
    }
}

SimdLevel from_env(SimdLevel fallback) {
    const char* env = std::getenv("RAR_SIMD");
    if (!env)
        return fallback;
    std::string v(env);
    if (v == "scalar")
        return SimdLevel::scalar;
    if (v == "avx2" && supported(SimdLevel::avx2))
        return SimdLevel::avx2;
    if (v == "neon" && supported(SimdLevel::neon))
        return SimdLevel::neon;
    return fallback;
}

std::atomic<SimdLevel>& active() {
    static std::atomic<SimdLevel> level{from_env(detected_simd_level())};
    return level;
}

KernelTable current() { return table_for(active().load(std::memory_order_relaxed)); }

void check_sizes(std::size_t a, std::size_t b) {
    if (a != b)
        throw std::invalid_argument("vector length mismatch: " + std::to_string(a) + " vs " +
                                    std::to_string(b));
}

}  // namespace

std::string_view to_string(SimdLevel level) {
    switch (level) {
    case SimdLevel::scalar:
        return "scalar";
    case SimdLevel::avx2:
        return "avx2";
    case SimdLevel::neon:
        return "neon";
    }
    return "unknown";
}

SimdLevel detected_simd_level() {
    if (supported(SimdLevel::avx2))
        return SimdLevel::avx2;
    if (supported(SimdLevel::neon))
        return SimdLevel::neon;
    return SimdLevel::scalar;
}

SimdLevel active_simd_level() { return active().load(); }

void set_simd_level(std::optional<SimdLevel> level) {
    SimdLevel want = level.value_or(detected_simd_level());
    active().store(supported(want) ? want : SimdLevel::scalar);
}

float l2_squared(std::span<const float> a, std::span<const float> b) {
    check_sizes(a.size(), b.size());
    return current().l2_squared(a.data(), b.data(), a.size());
}

float dot(std::span<const float> a, std::span<const float> b) {
    check_sizes(a.size(), b.size());
    return current().dot(a.data(), b.data(), a.size());
}

void l2_squared_rows(std::span<const float> query, std::span<const float> rows,
                     std::span<float> out) {
    const std::size_t dim = query.size();
    check_sizes(rows.size(), dim * out.size());
    const auto kernel = current().l2_squared;
    for (std::size_t r = 0; r < out.size(); ++r)
        out[r] = kernel(query.data(), rows.data() + r * dim, dim);
}

void dot_rows(std::span<const float> query, std::span<const float> rows, std::span<float> out) {
    const std::size_t dim = query.size();
    check_sizes(rows.size(), dim * out.size());
    const auto kernel = current().dot;
    for (std::size_t r = 0; r < out.size(); ++r)
        out[r] = kernel(query.data(), rows.data() + r * dim, dim);
}

}  // namespace rar::kernels
