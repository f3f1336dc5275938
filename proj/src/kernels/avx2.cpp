// Copyright 2026-present the emcar project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the runtime CPU check in dispatch.cpp.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "tables.hpp"

namespace emcar::kernels::detail {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t lanes = 8;
    static reg zero() { return _mm256_setzero_ps(); }
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg set1(float x) { return _mm256_set1_ps(x); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
    static float hsum(reg v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 shuf = _mm_movehdup_ps(lo);
        __m128 sums = _mm_add_ps(lo, shuf);
        shuf = _mm_movehl_ps(shuf, sums);
        sums = _mm_add_ss(sums, shuf);
        return _mm_cvtss_f32(sums);
    }
    static float hmax(reg v) {
        alignas(32) float buf[8];
        _mm256_store_ps(buf, v);
        return *std::max_element(buf, buf + 8);
    }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t lanes = 4;
    static reg zero() { return _mm256_setzero_pd(); }
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg set1(double x) { return _mm256_set1_pd(x); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
    static double hsum(reg v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d high64 = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
    }
    static double hmax(reg v) {
        alignas(32) double buf[4];
        _mm256_store_pd(buf, v);
        return *std::max_element(buf, buf + 4);
    }
};

// Register-blocked row update shared by gemm_nn and gemm_tn:
//   c[0..n) (+)= sum_p coeff(p) * brow(p)[0..n)
template <class T, class Coeff, class Row>
inline void accumulate_rows(std::size_t n, std::size_t k, Coeff coeff, Row brow, T* c,
                            bool accumulate) {
    using V = Vec<T>;
    constexpr std::size_t W = V::lanes;
    constexpr std::size_t block = 4 * W;
    std::size_t j = 0;
    for (; j + block <= n; j += block) {
        typename V::reg c0 = accumulate ? V::load(c + j) : V::zero();
        typename V::reg c1 = accumulate ? V::load(c + j + W) : V::zero();
        typename V::reg c2 = accumulate ? V::load(c + j + 2 * W) : V::zero();
        typename V::reg c3 = accumulate ? V::load(c + j + 3 * W) : V::zero();
        for (std::size_t p = 0; p < k; ++p) {
            const typename V::reg a = V::set1(coeff(p));
            const T* b = brow(p) + j;
            c0 = V::fmadd(a, V::load(b), c0);
            c1 = V::fmadd(a, V::load(b + W), c1);
            c2 = V::fmadd(a, V::load(b + 2 * W), c2);
            c3 = V::fmadd(a, V::load(b + 3 * W), c3);
        }
        V::store(c + j, c0);
        V::store(c + j + W, c1);
        V::store(c + j + 2 * W, c2);
        V::store(c + j + 3 * W, c3);
    }
    for (; j + W <= n; j += W) {
        typename V::reg c0 = accumulate ? V::load(c + j) : V::zero();
        for (std::size_t p = 0; p < k; ++p) c0 = V::fmadd(V::set1(coeff(p)), V::load(brow(p) + j), c0);
        V::store(c + j, c0);
    }
    for (; j < n; ++j) {
        T acc = accumulate ? c[j] : T(0);
        for (std::size_t p = 0; p < k; ++p) acc += coeff(p) * brow(p)[j];
        c[j] = acc;
    }
}

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        accumulate_rows<T>(
            n, k, [arow](std::size_t p) { return arow[p]; },
            [b, n](std::size_t p) { return b + p * n; }, c + i * n, accumulate);
    }
}

template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        accumulate_rows<T>(
            n, k, [a, m, i](std::size_t p) { return a[p * m + i]; },
            [b, n](std::size_t p) { return b + p * n; }, c + i * n, accumulate);
    }
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
    using V = Vec<T>;
    constexpr std::size_t W = V::lanes;
    typename V::reg s0 = V::zero(), s1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * W <= n; i += 2 * W) {
        s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
        s1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), s1);
    }
    for (; i + W <= n; i += W) s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
    T acc = V::hsum(V::add(s0, s1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
    using V = Vec<T>;
    constexpr std::size_t W = V::lanes;
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const T* b0 = b + j * k;
            const T* b1 = b0 + k;
            const T* b2 = b1 + k;
            const T* b3 = b2 + k;
            typename V::reg s0 = V::zero(), s1 = V::zero(), s2 = V::zero(), s3 = V::zero();
            std::size_t p = 0;
            for (; p + W <= k; p += W) {
                const typename V::reg av = V::load(arow + p);
                s0 = V::fmadd(av, V::load(b0 + p), s0);
                s1 = V::fmadd(av, V::load(b1 + p), s1);
                s2 = V::fmadd(av, V::load(b2 + p), s2);
                s3 = V::fmadd(av, V::load(b3 + p), s3);
            }
            T r0 = V::hsum(s0), r1 = V::hsum(s1), r2 = V::hsum(s2), r3 = V::hsum(s3);
            for (; p < k; ++p) {
                r0 += arow[p] * b0[p];
                r1 += arow[p] * b1[p];
                r2 += arow[p] * b2[p];
                r3 += arow[p] * b3[p];
            }
            if (accumulate) {
                crow[j] += r0;
                crow[j + 1] += r1;
                crow[j + 2] += r2;
                crow[j + 3] += r3;
            } else {
                crow[j] = r0;
                crow[j + 1] = r1;
                crow[j + 2] = r2;
                crow[j + 3] = r3;
            }
        }
        for (; j < n; ++j) {
            const T r = dot<T>(k, arow, b + j * k);
            crow[j] = accumulate ? crow[j] + r : r;
        }
    }
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    using V = Vec<T>;
    constexpr std::size_t W = V::lanes;
    const typename V::reg a = V::set1(alpha);
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(y + i, V::fmadd(a, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void hadamard(std::size_t n, const T* x, const T* y, T* out) {
    using V = Vec<T>;
    constexpr std::size_t W = V::lanes;
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(out + i, V::mul(V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

template <class T>
T sum(std::size_t n, const T* x) {
    using V = Vec<T>;
    constexpr std::size_t W = V::lanes;
    typename V::reg s = V::zero();
    std::size_t i = 0;
    for (; i + W <= n; i += W) s = V::add(s, V::load(x + i));
    T acc = V::hsum(s);
    for (; i < n; ++i) acc += x[i];
    return acc;
}

template <class T>
void softmax(std::size_t n, T* x) {
    using V = Vec<T>;
    constexpr std::size_t W = V::lanes;
    if (n == 0) return;
    T hi = x[0];
    std::size_t i = 0;
    if (n >= W) {
        typename V::reg m = V::load(x);
        for (i = W; i + W <= n; i += W) m = V::max(m, V::load(x + i));
        hi = V::hmax(m);
    }
    for (; i < n; ++i) hi = std::max(hi, x[i]);
    // exp stays scalar so both backends share the same transcendental.
    for (i = 0; i < n; ++i) x[i] = std::exp(x[i] - hi);
    const T inv = T(1) / sum<T>(n, x);
    const typename V::reg s = V::set1(inv);
    for (i = 0; i + W <= n; i += W) V::store(x + i, V::mul(V::load(x + i), s));
    for (; i < n; ++i) x[i] *= inv;
}

}  // namespace

template <class T>
const KernelTable<T>& avx2_kernels() {
    static const KernelTable<T> table{
        Backend::avx2, &gemm_nn<T>,  &gemm_nt<T>, &gemm_tn<T>, &dot<T>,
        &axpy<T>,      &hadamard<T>, &softmax<T>, &sum<T>,
    };
    return table;
}

template const KernelTable<float>& avx2_kernels<float>();
template const KernelTable<double>& avx2_kernels<double>();

}  // namespace emcar::kernels::detail
