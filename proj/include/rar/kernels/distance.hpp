// SPDX-License-Identifier: Apache-2.0
#pragma once

// Distance kernels used by the vector index. Each kernel has a scalar
// reference implementation and, where the target supports it, an AVX2/FMA or
// NEON variant. The variant is chosen once at runtime from CPU features and
// can be pinned with `set_simd_level` or the RAR_SIMD environment variable
// ("scalar", "avx2", "neon").

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace rar::kernels {

enum class SimdLevel { scalar, avx2, neon };

std::string_view to_string(SimdLevel level);

/// Best level supported by this CPU and build.
SimdLevel detected_simd_level();
/// Level the dispatching entry points currently use.
SimdLevel active_simd_level();
/// Pins the dispatch level. Requests for an unsupported level fall back to
/// scalar. Passing nullopt restores automatic detection.
void set_simd_level(std::optional<SimdLevel> level);

float l2_squared(std::span<const float> a, std::span<const float> b);
float dot(std::span<const float> a, std::span<const float> b);

/// out[i] = ||query - rows[i]||^2 for a row-major matrix of `out.size()` rows.
void l2_squared_rows(std::span<const float> query, std::span<const float> rows,
                     std::span<float> out);
/// out[i] = <query, rows[i]>.
void dot_rows(std::span<const float> query, std::span<const float> rows, std::span<float> out);

// Per-variant entry points; exposed for equivalence tests. Sizes are not
// checked here.
namespace scalar {
float l2_squared(const float* a, const float* b, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
float l2_squared(const float* a, const float* b, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
float l2_squared(const float* a, const float* b, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
}  // namespace neon
#endif

}  // namespace rar::kernels
