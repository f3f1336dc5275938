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

#include <functional>
#include <random>

#include "emcar/autograd.hpp"
#include "support.hpp"

using namespace emcar;
using ad::Tape;
using ad::Var;

namespace {

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Weighted sum of the op output, so every output entry contributes a
/// distinct amount to the scalar that is differentiated.
Var project(Tape<double>& t, Var out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto& v = t.value(out);
    return ad::sum_all(t, ad::mul(t, out, t.constant(test::random_matrix(rng, v.rows(), v.cols()))));
}

double evaluate(const Builder& f, const std::vector<Matrix<double>>& inputs) {
    Tape<double> t(false);
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(t.constant(m));
    return t.value(project(t, f(t, vars), 99))[0];
}

void check_gradients(const Builder& f, std::vector<Matrix<double>> inputs, double tol = 1e-6) {
    Tape<double> t(true);
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(t.leaf(m));
    t.backward(project(t, f(t, vars), 99));
    const double h = 1e-6;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix<double> analytic =
            t.grad(vars[k]).empty() ? Matrix<double>(inputs[k].rows(), inputs[k].cols()) : t.grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double keep = inputs[k][i];
            inputs[k][i] = keep + h;
            const double up = evaluate(f, inputs);
            inputs[k][i] = keep - h;
            const double down = evaluate(f, inputs);
            inputs[k][i] = keep;
            const double numeric = (up - down) / (2 * h);
            CHECK(analytic[i] == doctest::Approx(numeric).epsilon(tol).scale(1.0));
        }
    }
}

Matrix<double> rand(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    return test::random_matrix(rng, r, c, scale);
}

Matrix<double> positive(std::size_t r, std::size_t c, std::uint64_t seed) {
    auto m = rand(r, c, seed);
    for (auto& v : m.values()) v = 0.5 + std::abs(v);
    return m;
}

}  // namespace

TEST_CASE("binary and linear ops") {
    check_gradients([](auto& t, const auto& v) { return ad::matmul(t, v[0], v[1]); }, {rand(3, 4, 1), rand(4, 5, 2)});
    check_gradients([](auto& t, const auto& v) { return ad::matmul_nt(t, v[0], v[1]); }, {rand(3, 4, 1), rand(5, 4, 2)});
    check_gradients([](auto& t, const auto& v) { return ad::transpose(t, v[0]); }, {rand(3, 4, 1)});
    check_gradients([](auto& t, const auto& v) { return ad::add(t, v[0], v[1]); }, {rand(2, 3, 1), rand(2, 3, 2)});
    check_gradients([](auto& t, const auto& v) { return ad::sub(t, v[0], v[1]); }, {rand(2, 3, 1), rand(2, 3, 2)});
    check_gradients([](auto& t, const auto& v) { return ad::mul(t, v[0], v[1]); }, {rand(2, 3, 1), rand(2, 3, 2)});
    check_gradients([](auto& t, const auto& v) { return ad::add_row(t, v[0], v[1]); }, {rand(4, 3, 1), rand(1, 3, 2)});
    check_gradients([](auto& t, const auto& v) { return ad::scale(t, v[0], -2.5); }, {rand(2, 3, 1)});
    check_gradients([](auto& t, const auto& v) { return ad::add_scalar(t, v[0], 3.0); }, {rand(2, 3, 1)});
}

TEST_CASE("element-wise nonlinearities") {
    check_gradients([](auto& t, const auto& v) { return ad::abs(t, v[0]); }, {positive(2, 3, 4)});
    check_gradients([](auto& t, const auto& v) { return ad::relu(t, ad::add_scalar(t, v[0], -1.0)); },
                    {positive(3, 3, 5)});
    check_gradients([](auto& t, const auto& v) { return ad::sigmoid(t, v[0]); }, {rand(3, 3, 6)});
    check_gradients([](auto& t, const auto& v) { return ad::tanh(t, v[0]); }, {rand(3, 3, 7)});
    check_gradients([](auto& t, const auto& v) { return ad::gelu(t, v[0]); }, {rand(3, 3, 8)});
}

TEST_CASE("normalizations") {
    check_gradients([](auto& t, const auto& v) { return ad::softmax_rows(t, v[0]); }, {rand(3, 5, 9)});
    check_gradients([](auto& t, const auto& v) { return ad::layer_norm_rows(t, v[0], v[1], v[2], 1e-5); },
                    {rand(3, 6, 10), rand(1, 6, 11), rand(1, 6, 12)});
}

TEST_CASE("shape ops") {
    check_gradients(
        [](auto& t, const auto& v) {
            const Var parts[] = {v[0], v[1]};
            return ad::concat_cols<double>(t, parts);
        },
        {rand(3, 2, 13), rand(3, 4, 14)});
    check_gradients([](auto& t, const auto& v) { return ad::slice_rows(t, v[0], 1, 3); }, {rand(4, 3, 15)});
    check_gradients([](auto& t, const auto& v) { return ad::slice_cols(t, v[0], 2, 5); }, {rand(3, 6, 16)});
    check_gradients(
        [](auto& t, const auto& v) {
            const Var cells[] = {ad::sum_all(t, v[0]), Var{}, ad::max_all(t, v[0]), ad::mean_all(t, v[0])};
            return ad::assemble<double>(t, cells, 2, 2);
        },
        {rand(2, 3, 17)});
}

TEST_CASE("reductions") {
    check_gradients([](auto& t, const auto& v) { return ad::col_sums(t, v[0]); }, {rand(3, 4, 18)});
    check_gradients([](auto& t, const auto& v) { return ad::row_sums(t, v[0]); }, {rand(3, 4, 19)});
    check_gradients([](auto& t, const auto& v) { return ad::sum_all(t, v[0]); }, {rand(3, 4, 20)});
    check_gradients([](auto& t, const auto& v) { return ad::mean_all(t, v[0]); }, {rand(3, 4, 21)});
    check_gradients([](auto& t, const auto& v) { return ad::max_all(t, v[0]); }, {rand(3, 4, 22)});
    check_gradients([](auto& t, const auto& v) { return ad::row_max(t, v[0]); }, {rand(3, 4, 23)});
    check_gradients([](auto& t, const auto& v) { return ad::col_max(t, v[0]); }, {rand(3, 4, 24)});
    check_gradients([](auto& t, const auto& v) { return ad::divide_by_max(t, v[0]); }, {positive(1, 5, 25)});
    check_gradients([](auto& t, const auto& v) { return ad::cross_entropy(t, v[0], 1); }, {rand(1, 2, 26)});
    check_gradients([](auto& t, const auto& v) { return ad::cross_entropy(t, v[0], 2); }, {rand(1, 4, 27)});
}

TEST_CASE("value semantics of selected ops") {
    Tape<double> t(false);
    Var a = t.constant(Matrix<double>(2, 2, {1, 2, 3, 4}));
    CHECK(t.value(ad::col_sums(t, a)) == Matrix<double>(1, 2, {4, 6}));
    CHECK(t.value(ad::row_max(t, a)) == Matrix<double>(2, 1, {2, 4}));
    CHECK(t.value(ad::divide_by_max(t, a)) == Matrix<double>(2, 2, {0.25, 0.5, 0.75, 1}));
    const double ce = t.value(ad::cross_entropy(t, t.constant(Matrix<double>(1, 2, {0, 0})), 0))[0];
    CHECK(ce == doctest::Approx(std::log(2.0)));
    Var sm = ad::softmax_rows(t, t.constant(Matrix<double>(1, 3, {1000, 1000, 1000})));
    for (double v : t.value(sm).values()) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("errors") {
    Tape<double> t(false);
    Var a = t.constant(Matrix<double>(2, 3));
    CHECK_THROWS_AS(ad::matmul(t, a, a), ArgumentError);
    CHECK_THROWS_AS(ad::add(t, a, t.constant(Matrix<double>(3, 2))), ArgumentError);
    CHECK_THROWS_AS(ad::divide_by_max(t, a), NumericError);
    CHECK_THROWS_AS(ad::slice_rows(t, a, 1, 3), ArgumentError);
    CHECK_THROWS_AS(t.backward(ad::sum_all(t, a)), ArgumentError);
    Tape<double> r(true);
    CHECK_THROWS_AS(r.backward(r.leaf(Matrix<double>(2, 2))), ArgumentError);
}

TEST_CASE("parameters accumulate into separate gradient buffers") {
    ad::ParameterSet<double> params;
    const auto w = params.add("w", Matrix<double>(2, 2, {1, 2, 3, 4}));
    const auto e = params.add("emb", Matrix<double>(3, 2, {1, 1, 2, 2, 3, 3}));
    CHECK(params.find("emb") == e);
    CHECK_FALSE(params.find("nope"));
    CHECK(params.scalar_count() == 10);

    auto run = [&](ad::Gradients<double>& g, std::vector<std::int32_t> ids) {
        Tape<double> t(params, &g);
        Var x = ad::embedding(t, e, ids);
        t.backward(ad::sum_all(t, ad::matmul(t, x, t.param(w))));
    };
    ad::Gradients<double> g1 = params.zero_gradients(), g2 = params.zero_gradients();
    run(g1, {0, 2, 2});
    run(g2, {1});
    // d/dX sum(X W) = 1 * W^T row sums = [3, 7] for every selected row.
    CHECK(g1[e] == Matrix<double>(3, 2, {3, 7, 0, 0, 6, 14}));
    CHECK(g2[e] == Matrix<double>(3, 2, {0, 0, 3, 7, 0, 0}));
    // d/dW = (column sums of X)^T broadcast across the output columns.
    CHECK(g1[w] == Matrix<double>(2, 2, {7, 7, 7, 7}));
    run(g1, {1});
    CHECK(g1[w] == Matrix<double>(2, 2, {9, 9, 9, 9}));

    Tape<double> inference(params, nullptr);
    CHECK_FALSE(inference.recording());
    const std::int32_t bad[] = {3};
    CHECK_THROWS_AS(ad::embedding(inference, e, bad), ArgumentError);
}
