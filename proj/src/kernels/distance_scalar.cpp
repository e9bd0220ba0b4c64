// SPDX-License-Identifier: Apache-2.0
#include "rar/kernels/distance.hpp"

namespace rar::kernels::scalar {

float l2_squared(const float* a, const float* b, std::size_t n) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        const float d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

float dot(const float* a, const float* b, std::size_t n) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i)
        acc += a[i] * b[i];
    return acc;
}

}  // namespace rar::kernels::scalar
