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

#pragma once

// Dense arithmetic kernels behind every matrix op in the library.
//
// Each kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant. The active table is chosen once per process from the CPU
// feature bits; setting EMCAR_SIMD=scalar in the environment forces the
// reference path. All matrices are dense and row-major.

#include <cstddef>
#include <string_view>

namespace emcar::kernels {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend b);

template <class T>
struct KernelTable {
    Backend backend;

    // C[m x n] (+)= A[m x k] * B[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate);
    // C[m x n] (+)= A[m x k] * B[n x k]^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate);
    // C[m x n] (+)= A[k x m]^T * B[k x n]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate);

    T (*dot)(std::size_t n, const T* x, const T* y);
    // y += alpha * x
    void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
    // out = x * y (element-wise)
    void (*hadamard)(std::size_t n, const T* x, const T* y, T* out);
    // In-place numerically stable softmax of one row.
    void (*softmax)(std::size_t n, T* x);
    T (*sum)(std::size_t n, const T* x);
};

template <class T>
const KernelTable<T>& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks AVX2+FMA.
template <class T>
const KernelTable<T>* avx2_table();

// The table selected for this process.
template <class T>
const KernelTable<T>& active();

bool cpu_supports_avx2();
Backend active_backend();

}  // namespace emcar::kernels
