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

#include <doctest.h>

#include <random>
#include <vector>

#include "emcar/kernels.hpp"

using namespace emcar::kernels;

namespace {

template <class T>
std::vector<T> random_vector(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return v;
}

// Plain triple loop, independent of both kernel tables.
template <class T>
std::vector<T> naive_gemm(char mode, std::size_t m, std::size_t n, std::size_t k, const std::vector<T>& a,
                          const std::vector<T>& b) {
    std::vector<T> c(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double s = 0;
            for (std::size_t p = 0; p < k; ++p) {
                const T x = mode == 't' ? a[p * m + i] : a[i * k + p];
                const T y = mode == 'n' ? b[j * k + p] : b[p * n + j];
                s += static_cast<long double>(x) * y;
            }
            c[i * n + j] = static_cast<T>(s);
        }
    return c;
}

template <class T>
void check_table(const KernelTable<T>& table, double tol) {
    std::mt19937_64 rng(42);
    const std::size_t sizes[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 17, 9}, {33, 4, 65}, {2, 40, 31}};
    for (const auto& s : sizes) {
        const std::size_t m = s[0], n = s[1], k = s[2];
        const auto a = random_vector<T>(rng, m * k), bn = random_vector<T>(rng, k * n), bt = random_vector<T>(rng, n * k);
        const auto seed = random_vector<T>(rng, m * n);
        struct Case {
            char mode;
            decltype(table.gemm_nn) fn;
            const std::vector<T>* b;
        };
        for (const Case& c : {Case{'x', table.gemm_nn, &bn}, Case{'n', table.gemm_nt, &bt}, Case{'t', table.gemm_tn, &bn}}) {
            const auto want = naive_gemm<T>(c.mode, m, n, k, a, *c.b);
            std::vector<T> got(m * n, T(7));
            c.fn(m, n, k, a.data(), c.b->data(), got.data(), false);
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(double(got[i]) - want[i]) <= tol * (1 + k));
            std::vector<T> acc = seed;
            c.fn(m, n, k, a.data(), c.b->data(), acc.data(), true);
            for (std::size_t i = 0; i < acc.size(); ++i)
                CHECK(std::abs(double(acc[i]) - (double(seed[i]) + want[i])) <= tol * (2 + k));
        }
    }
    for (std::size_t n : {1u, 3u, 8u, 15u, 16u, 17u, 100u}) {
        const auto x = random_vector<T>(rng, n), y = random_vector<T>(rng, n);
        long double dot = 0, sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            dot += static_cast<long double>(x[i]) * y[i];
            sum += x[i];
        }
        CHECK(std::abs(double(table.dot(n, x.data(), y.data())) - double(dot)) <= tol * n);
        CHECK(std::abs(double(table.sum(n, x.data())) - double(sum)) <= tol * n);

        std::vector<T> ax = y;
        table.axpy(n, T(0.5), x.data(), ax.data());
        std::vector<T> had(n);
        table.hadamard(n, x.data(), y.data(), had.data());
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(double(ax[i]) - (double(y[i]) + 0.5 * x[i])) <= tol);
            CHECK(std::abs(double(had[i]) - double(x[i]) * y[i]) <= tol);
        }

        std::vector<T> sm = x;
        for (auto& v : sm) v *= T(30);
        std::vector<long double> ref(n);
        long double top = sm[0], z = 0;
        for (auto v : sm) top = std::max<long double>(top, v);
        for (std::size_t i = 0; i < n; ++i) z += ref[i] = std::exp(static_cast<long double>(sm[i]) - top);
        table.softmax(n, sm.data());
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(double(sm[i]) - double(ref[i] / z)) <= tol);
    }
}

}  // namespace

TEST_CASE("scalar kernels match the naive oracle") {
    check_table(scalar_table<float>(), 2e-6);
    check_table(scalar_table<double>(), 1e-13);
}

TEST_CASE("avx2 kernels match the naive oracle when available") {
    if (!avx2_table<float>()) {
        MESSAGE("AVX2 variant unavailable on this CPU or build");
        return;
    }
    CHECK(avx2_table<float>()->backend == Backend::avx2);
    check_table(*avx2_table<float>(), 2e-6);
    check_table(*avx2_table<double>(), 1e-13);
}

TEST_CASE("avx2 and scalar agree on identical inputs") {
    const auto* fast = avx2_table<double>();
    if (!fast) return;
    std::mt19937_64 rng(7);
    const std::size_t m = 19, n = 23, k = 37;
    const auto a = random_vector<double>(rng, m * k), b = random_vector<double>(rng, k * n);
    std::vector<double> c1(m * n), c2(m * n);
    scalar_table<double>().gemm_nn(m, n, k, a.data(), b.data(), c1.data(), false);
    fast->gemm_nn(m, n, k, a.data(), b.data(), c2.data(), false);
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
}

TEST_CASE("dispatch honours the environment override") {
    const char* env = std::getenv("EMCAR_SIMD");
    if (env && std::string(env) == "scalar") {
        CHECK(active_backend() == Backend::scalar);
        CHECK(&active<float>() == &scalar_table<float>());
    } else if (cpu_supports_avx2() && avx2_table<float>()) {
        CHECK(active_backend() == Backend::avx2);
    }
    CHECK(backend_name(Backend::scalar) == "scalar");
    CHECK(backend_name(Backend::avx2) == "avx2");
}
