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

#include <cstdlib>
#include <string_view>

#include "tables.hpp"

namespace emcar::kernels {

std::string_view backend_name(Backend b) {
    switch (b) {
        case Backend::scalar:
            return "scalar";
        case Backend::avx2:
            return "avx2";
    }
    return "unknown";
}

bool cpu_supports_avx2() {
#if defined(EMCAR_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool supported = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return supported;
#else
    return false;
#endif
}

namespace {

bool scalar_forced() {
    const char* env = std::getenv("EMCAR_SIMD");
    return env != nullptr && std::string_view(env) == "scalar";
}

}  // namespace

Backend active_backend() {
    static const Backend chosen =
        (!scalar_forced() && cpu_supports_avx2()) ? Backend::avx2 : Backend::scalar;
    return chosen;
}

template <class T>
const KernelTable<T>& scalar_table() {
    return detail::scalar_kernels<T>();
}

template <class T>
const KernelTable<T>* avx2_table() {
#if defined(EMCAR_HAVE_AVX2)
    if (cpu_supports_avx2()) return &detail::avx2_kernels<T>();
#endif
    return nullptr;
}

template <class T>
const KernelTable<T>& active() {
    static const KernelTable<T>& table =
        active_backend() == Backend::avx2 ? *avx2_table<T>() : scalar_table<T>();
    return table;
}

template const KernelTable<float>& scalar_table<float>();
template const KernelTable<double>& scalar_table<double>();
template const KernelTable<float>* avx2_table<float>();
template const KernelTable<double>* avx2_table<double>();
template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace emcar::kernels
