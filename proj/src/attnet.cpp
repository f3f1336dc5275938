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

#include "emcar/attnet.hpp"

#include <cmath>
#include <string>

#include "random_util.hpp"

namespace emcar::attnet {

using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Parameters

template <class T>
AttentionParams<T> AttentionParams<T>::zeros(std::size_t d) {
    if (d == 0) throw ArgumentError("attention width must be positive");
    const std::size_t w = 2 * d;
    return {Matrix<T>(d, d), Matrix<T>(d, d), Matrix<T>(w, w), Matrix<T>(1, w),
            Matrix<T>(w, w), Matrix<T>(1, w), Matrix<T>(w, 1), Matrix<T>(1, 1)};
}

template <class T>
AttentionParams<T> AttentionParams<T>::init(std::size_t d, std::uint64_t seed, T gate_bias) {
    AttentionParams p = zeros(d);
    detail::Rng rng(seed);
    auto fill = [&](Matrix<T>& m, double stddev) {
        for (auto& v : m.values()) v = static_cast<T>(detail::normal(rng) * stddev);
    };
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sw = 1.0 / std::sqrt(static_cast<double>(2 * d));
    fill(p.w_self, sd);
    fill(p.w_inter, sd);
    fill(p.w_h, sw);
    fill(p.w_t, sw);
    fill(p.w_c, sw);
    p.b_t.fill(gate_bias);
    return p;
}

template <class T>
void AttentionParams<T>::validate() const {
    const std::size_t d = w_self.rows(), w = 2 * d;
    auto shape = [](const Matrix<T>& m, std::size_t r, std::size_t c, const char* name) {
        if (m.rows() != r || m.cols() != c)
            throw ArgumentError(std::string("attention parameter ") + name + " has shape " +
                                std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", expected " +
                                std::to_string(r) + "x" + std::to_string(c));
        if (!m.all_finite()) throw NumericError(std::string("attention parameter ") + name + " is not finite");
    };
    if (d == 0) throw ArgumentError("attention width must be positive");
    shape(w_self, d, d, "w_self");
    shape(w_inter, d, d, "w_inter");
    shape(w_h, w, w, "w_h");
    shape(b_h, 1, w, "b_h");
    shape(w_t, w, w, "w_t");
    shape(b_t, 1, w, "b_t");
    shape(w_c, w, 1, "w_c");
    shape(c_c, 1, 1, "c_c");
}

template <class T>
AttentionParamIds register_parameters(ad::ParameterSet<T>& set, const AttentionParams<T>& init,
                                      std::string_view prefix) {
    init.validate();
    const std::string p(prefix);
    return {set.add(p + "w_self", init.w_self), set.add(p + "w_inter", init.w_inter),
            set.add(p + "w_h", init.w_h),       set.add(p + "b_h", init.b_h),
            set.add(p + "w_t", init.w_t),       set.add(p + "b_t", init.b_t),
            set.add(p + "w_c", init.w_c),       set.add(p + "c_c", init.c_c)};
}

template <class T>
AttentionVars bind(Tape<T>& t, const AttentionParamIds& ids) {
    return {t.param(ids.w_self), t.param(ids.w_inter), t.param(ids.w_h), t.param(ids.b_h),
            t.param(ids.w_t),    t.param(ids.b_t),     t.param(ids.w_c), t.param(ids.c_c)};
}

template <class T>
AttentionVars bind(Tape<T>& t, const AttentionParams<T>& p, bool differentiable) {
    auto mk = [&](const Matrix<T>& m) { return differentiable ? t.leaf(m) : t.constant(m); };
    return {mk(p.w_self), mk(p.w_inter), mk(p.w_h), mk(p.b_h), mk(p.w_t), mk(p.b_t), mk(p.w_c), mk(p.c_c)};
}

// ---------------------------------------------------------------------------
// Tape-level ops

template <class T>
Var self_attention(Tape<T>& t, Var h, Var w_self) {
    if (t.value(h).rows() == 0) throw ArgumentError("self_attention: attribute has no tokens");
    return ad::softmax_rows(t, ad::matmul_nt(t, ad::matmul(t, h, w_self), h));
}

template <class T>
Var m2v(Tape<T>& t, Var alpha, M2vAxis axis) {
    if (axis == M2vAxis::columns) return ad::divide_by_max(t, ad::col_sums(t, alpha));
    return ad::transpose(t, ad::divide_by_max(t, ad::row_sums(t, alpha)));
}

template <class T>
std::pair<Var, Var> inter_attention(Tape<T>& t, Var h_src, Var h_tgt, Var w_inter) {
    if (t.value(h_src).rows() == 0 || t.value(h_tgt).rows() == 0)
        throw ArgumentError("inter_attention: empty token set");
    Var beta = ad::softmax_rows(t, ad::matmul_nt(t, ad::matmul(t, h_src, w_inter), h_tgt));
    return {beta, ad::matmul(t, beta, h_tgt)};
}

template <class T>
Var compare_tokens(Tape<T>& t, Var h_src, Var attended, const AttentionVars& p) {
    if (!t.value(h_src).same_shape(t.value(attended)))
        throw ArgumentError("compare_tokens: source and attended shapes differ");
    const Var parts[] = {ad::abs(t, ad::sub(t, h_src, attended)), ad::mul(t, h_src, attended)};
    Var u = ad::concat_cols<T>(t, parts);
    Var transform = ad::relu(t, ad::add_row(t, ad::matmul(t, u, p.w_h), p.b_h));
    Var gate = ad::sigmoid(t, ad::add_row(t, ad::matmul(t, u, p.w_t), p.b_t));
    // gate * transform + (1 - gate) * u
    Var y = ad::add(t, u, ad::mul(t, gate, ad::sub(t, transform, u)));
    return ad::add_row(t, ad::matmul(t, y, p.w_c), p.c_c);
}

namespace {

template <class T>
std::vector<T> to_vector(const Matrix<T>& m) {
    return std::vector<T>(m.values().begin(), m.values().end());
}

template <class T>
void check_spans(const Matrix<T>& tokens, std::span<const TokenSpan> spans) {
    for (const auto& s : spans)
        if (s.begin > s.end || s.end > tokens.rows())
            throw ArgumentError("token span [" + std::to_string(s.begin) + ", " + std::to_string(s.end) +
                                ") lies outside " + std::to_string(tokens.rows()) + " tokens");
}

}  // namespace

template <class T>
Var directional_similarity(Tape<T>& t, Var tokens, std::span<const TokenSpan> source,
                           std::span<const TokenSpan> target, const AttentionVars& p, const Options& opt,
                           std::vector<CellTrace<T>>* trace) {
    const std::size_t m = source.size(), n = target.size();
    if (m == 0 || n == 0) throw ArgumentError("attribute similarity needs at least one attribute per entity");
    check_spans(t.value(tokens), source);
    check_spans(t.value(tokens), target);

    std::vector<Var> tgt(n);
    for (std::size_t j = 0; j < n; ++j)
        if (!target[j].empty()) tgt[j] = ad::slice_rows(t, tokens, target[j].begin, target[j].end);

    std::vector<Var> cells(m * n);  // invalid Var = empty attribute, contributes 0
    for (std::size_t i = 0; i < m; ++i) {
        if (source[i].empty()) continue;
        Var src = ad::slice_rows(t, tokens, source[i].begin, source[i].end);
        Var alpha = self_attention(t, src, p.w_self);
        Var weights = m2v(t, alpha, opt.m2v_axis);
        for (std::size_t j = 0; j < n; ++j) {
            if (!tgt[j].valid()) continue;
            auto [beta, attended] = inter_attention(t, src, tgt[j], p.w_inter);
            Var c = compare_tokens(t, src, attended, p);
            cells[i * n + j] = ad::matmul(t, weights, c);
            if (trace) {
                trace->push_back({i, j, t.value(alpha), to_vector(t.value(weights)), t.value(beta),
                                  to_vector(t.value(c)), t.value(cells[i * n + j])[0]});
            }
        }
    }
    return ad::assemble<T>(t, cells, m, n);
}

template <class T>
Var attribute_similarity(Tape<T>& t, Var tokens, std::span<const TokenSpan> left, std::span<const TokenSpan> right,
                         const AttentionVars& p, const Options& opt, SimilarityTrace<T>* trace) {
    if (!t.value(tokens).all_finite()) throw NumericError("attribute_similarity: non-finite token embeddings");
    Var forward = directional_similarity(t, tokens, left, right, p, opt, trace ? &trace->left_to_right : nullptr);
    Var r = forward;
    if (opt.fuse_directions) {
        Var backward =
            directional_similarity(t, tokens, right, left, p, opt, trace ? &trace->right_to_left : nullptr);
        r = ad::scale(t, ad::add(t, forward, ad::transpose(t, backward)), T(0.5));
        if (trace) trace->r_right_to_left = t.value(backward);
    }
    if (trace) {
        trace->r_left_to_right = t.value(forward);
        trace->r = t.value(r);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Value-level API

namespace {

template <class T>
void require_finite(const Matrix<T>& m, const char* what) {
    if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite input");
}

}  // namespace

template <class T>
Matrix<T> self_attention(const Matrix<T>& h, const Matrix<T>& w_self) {
    require_finite(h, "self_attention");
    require_finite(w_self, "self_attention");
    Tape<T> t(false);
    return t.value(self_attention(t, t.constant(h), t.constant(w_self)));
}

template <class T>
std::vector<T> m2v(const Matrix<T>& alpha, M2vAxis axis) {
    if (alpha.empty()) throw ArgumentError("m2v: empty matrix");
    require_finite(alpha, "m2v");
    Tape<T> t(false);
    return to_vector(t.value(m2v(t, t.constant(alpha), axis)));
}

template <class T>
InterAttention<T> inter_attention(const Matrix<T>& h_src, const Matrix<T>& h_tgt, const Matrix<T>& w_inter) {
    require_finite(h_src, "inter_attention");
    require_finite(h_tgt, "inter_attention");
    require_finite(w_inter, "inter_attention");
    Tape<T> t(false);
    auto [beta, attended] = inter_attention(t, t.constant(h_src), t.constant(h_tgt), t.constant(w_inter));
    return {t.value(beta), t.value(attended)};
}

template <class T>
std::vector<T> compare_tokens(const Matrix<T>& h_src, const Matrix<T>& attended, const AttentionParams<T>& params) {
    params.validate();
    if (h_src.cols() != params.width()) throw ArgumentError("compare_tokens: embedding width mismatch");
    Tape<T> t(false);
    return to_vector(t.value(compare_tokens(t, t.constant(h_src), t.constant(attended), bind(t, params, false))));
}

template <class T>
Matrix<T> attribute_similarity_matrix(const TokenEmbeddings<T>& emb, const AttentionParams<T>& params,
                                      const Options& opt, SimilarityTrace<T>* trace) {
    params.validate();
    if (emb.vectors.cols() != params.width()) throw ArgumentError("attribute_similarity_matrix: width mismatch");
    Tape<T> t(false);
    Var r = attribute_similarity(t, t.constant(emb.vectors), emb.left_spans, emb.right_spans,
                                 bind(t, params, false), opt, trace);
    return t.value(r);
}

namespace {

template <class T>
AttentionParams<T> collect_gradients(const Tape<T>& t, const AttentionVars& v, std::size_t d) {
    AttentionParams<T> g = AttentionParams<T>::zeros(d);
    auto take = [&](Matrix<T>& dst, Var var) {
        if (!t.grad(var).empty()) dst = t.grad(var);
    };
    take(g.w_self, v.w_self);
    take(g.w_inter, v.w_inter);
    take(g.w_h, v.w_h);
    take(g.b_h, v.b_h);
    take(g.w_t, v.w_t);
    take(g.b_t, v.b_t);
    take(g.w_c, v.w_c);
    take(g.c_c, v.c_c);
    return g;
}

}  // namespace

template <class T>
AttentionParams<T> compare_tokens_gradient(const Matrix<T>& h_src, const Matrix<T>& attended,
                                           const AttentionParams<T>& params, std::span<const T> weights) {
    params.validate();
    if (weights.size() != h_src.rows()) throw ArgumentError("compare_tokens_gradient: one weight per token");
    Tape<T> t(true);
    AttentionVars v = bind(t, params, true);
    Var c = compare_tokens(t, t.constant(h_src), t.constant(attended), v);
    Var w = t.constant(Matrix<T>(1, weights.size(), std::vector<T>(weights.begin(), weights.end())));
    t.backward(ad::matmul(t, w, c));
    return collect_gradients(t, v, params.width());
}

template <class T>
AttentionParams<T> similarity_sum_gradient(const TokenEmbeddings<T>& emb, const AttentionParams<T>& params,
                                           const Options& opt) {
    params.validate();
    Tape<T> t(true);
    AttentionVars v = bind(t, params, true);
    Var r = attribute_similarity(t, t.constant(emb.vectors), emb.left_spans, emb.right_spans, v, opt);
    t.backward(ad::sum_all(t, r));
    return collect_gradients(t, v, params.width());
}

// ---------------------------------------------------------------------------

#define EMCAR_INSTANTIATE_ATTNET(T)                                                                           \
    template struct AttentionParams<T>;                                                                       \
    template AttentionParamIds register_parameters<T>(ad::ParameterSet<T>&, const AttentionParams<T>&,        \
                                                      std::string_view);                                      \
    template AttentionVars bind<T>(Tape<T>&, const AttentionParamIds&);                                       \
    template AttentionVars bind<T>(Tape<T>&, const AttentionParams<T>&, bool);                                \
    template Var self_attention<T>(Tape<T>&, Var, Var);                                                       \
    template Var m2v<T>(Tape<T>&, Var, M2vAxis);                                                              \
    template std::pair<Var, Var> inter_attention<T>(Tape<T>&, Var, Var, Var);                                 \
    template Var compare_tokens<T>(Tape<T>&, Var, Var, const AttentionVars&);                                 \
    template Var directional_similarity<T>(Tape<T>&, Var, std::span<const TokenSpan>,                         \
                                           std::span<const TokenSpan>, const AttentionVars&, const Options&,  \
                                           std::vector<CellTrace<T>>*);                                       \
    template Var attribute_similarity<T>(Tape<T>&, Var, std::span<const TokenSpan>, std::span<const TokenSpan>, \
                                         const AttentionVars&, const Options&, SimilarityTrace<T>*);          \
    template Matrix<T> self_attention<T>(const Matrix<T>&, const Matrix<T>&);                                 \
    template std::vector<T> m2v<T>(const Matrix<T>&, M2vAxis);                                                \
    template InterAttention<T> inter_attention<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);      \
    template std::vector<T> compare_tokens<T>(const Matrix<T>&, const Matrix<T>&, const AttentionParams<T>&); \
    template Matrix<T> attribute_similarity_matrix<T>(const TokenEmbeddings<T>&, const AttentionParams<T>&,   \
                                                      const Options&, SimilarityTrace<T>*);                   \
    template AttentionParams<T> compare_tokens_gradient<T>(const Matrix<T>&, const Matrix<T>&,                \
                                                           const AttentionParams<T>&, std::span<const T>);    \
    template AttentionParams<T> similarity_sum_gradient<T>(const TokenEmbeddings<T>&,                         \
                                                           const AttentionParams<T>&, const Options&);

EMCAR_INSTANTIATE_ATTNET(float)
EMCAR_INSTANTIATE_ATTNET(double)

#undef EMCAR_INSTANTIATE_ATTNET

}  // namespace emcar::attnet
