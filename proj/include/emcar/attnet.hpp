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

// Attribute-association network: token self-attention inside an attribute,
// inter-attention against each attribute of the other entity, highway
// comparison of every token with its aligned counterpart, and weighted
// aggregation into the m x n attribute-similarity matrix R.
//
// Token embeddings are stored one token per row (L x d). An attribute's
// tokens are the rows covered by its value span.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "emcar/autograd.hpp"
#include "emcar/matrix.hpp"
#include "emcar/serializer.hpp"

namespace emcar::attnet {

using serializer::TokenSpan;

/// Which axis m2v sums before max-normalizing. `columns` measures the
/// attention mass each token receives; `rows` is the literal reading and
/// always yields all-ones for a row-stochastic input.
enum class M2vAxis { columns, rows };

struct Options {
    M2vAxis m2v_axis = M2vAxis::columns;
    /// Average R(left->right) with R(right->left)^T. Off: left->right only.
    bool fuse_directions = true;
};

template <class T>
struct AttentionParams {
    Matrix<T> w_self;   // d x d
    Matrix<T> w_inter;  // d x d
    Matrix<T> w_h;      // 2d x 2d, transform branch
    Matrix<T> b_h;      // 1 x 2d
    Matrix<T> w_t;      // 2d x 2d, gate
    Matrix<T> b_t;      // 1 x 2d
    Matrix<T> w_c;      // 2d x 1, scalar head
    Matrix<T> c_c;      // 1 x 1

    /// Zero-mean normal init; W_self and W_inter use std 1/sqrt(d), the gate
    /// bias starts at `gate_bias` so the highway mostly carries.
    static AttentionParams init(std::size_t d, std::uint64_t seed, T gate_bias = T(-2));
    static AttentionParams zeros(std::size_t d);

    std::size_t width() const noexcept { return w_self.rows(); }
    /// ArgumentError on inconsistent shapes, NumericError on non-finite entries.
    void validate() const;

    template <class F>
    void for_each(F&& f) {
        f("w_self", w_self);
        f("w_inter", w_inter);
        f("w_h", w_h);
        f("b_h", b_h);
        f("w_t", w_t);
        f("b_t", b_t);
        f("w_c", w_c);
        f("c_c", c_c);
    }
    template <class F>
    void for_each(F&& f) const {
        const_cast<AttentionParams*>(this)->for_each(
            [&](const char* name, Matrix<T>& m) { f(name, static_cast<const Matrix<T>&>(m)); });
    }
};

template <class T>
struct TokenEmbeddings {
    Matrix<T> vectors;     // L x d
    std::vector<T> pooled;  // row 0
    std::vector<TokenSpan> left_spans;
    std::vector<TokenSpan> right_spans;
};

/// Per-cell intermediates for diagnostics.
template <class T>
struct CellTrace {
    std::size_t source = 0;
    std::size_t target = 0;
    Matrix<T> alpha;                // L_s x L_s
    std::vector<T> alpha_prime;     // L_s
    Matrix<T> beta;                 // L_s x L_t
    std::vector<T> comparison;      // L_s
    T r = 0;
};

template <class T>
struct SimilarityTrace {
    std::vector<CellTrace<T>> left_to_right;  // m * n cells (non-empty spans only)
    std::vector<CellTrace<T>> right_to_left;  // n * m cells when directions are fused
    Matrix<T> r_left_to_right;                // m x n
    Matrix<T> r_right_to_left;                // n x m, empty unless fused
    Matrix<T> r;                              // m x n
};

// ---------------------------------------------------------------------------
// Tape-level building blocks (used by the model and by gradient checks).

struct AttentionVars {
    ad::Var w_self, w_inter, w_h, b_h, w_t, b_t, w_c, c_c;
};

struct AttentionParamIds {
    std::size_t w_self, w_inter, w_h, b_h, w_t, b_t, w_c, c_c;
};

template <class T>
AttentionParamIds register_parameters(ad::ParameterSet<T>& set, const AttentionParams<T>& init,
                                      std::string_view prefix = "attn.");
template <class T>
AttentionVars bind(ad::Tape<T>& tape, const AttentionParamIds& ids);
/// Binds free-standing values; `differentiable` makes them gradient leaves.
template <class T>
AttentionVars bind(ad::Tape<T>& tape, const AttentionParams<T>& params, bool differentiable);

template <class T>
ad::Var self_attention(ad::Tape<T>& t, ad::Var h, ad::Var w_self);  // L x L
template <class T>
ad::Var m2v(ad::Tape<T>& t, ad::Var alpha, M2vAxis axis);  // 1 x L
template <class T>
std::pair<ad::Var, ad::Var> inter_attention(ad::Tape<T>& t, ad::Var h_src, ad::Var h_tgt,
                                            ad::Var w_inter);  // (beta, attended)
template <class T>
ad::Var compare_tokens(ad::Tape<T>& t, ad::Var h_src, ad::Var attended, const AttentionVars& p);  // L x 1

/// R for one direction: rows follow `source`, columns follow `target`.
template <class T>
ad::Var directional_similarity(ad::Tape<T>& t, ad::Var tokens, std::span<const TokenSpan> source,
                               std::span<const TokenSpan> target, const AttentionVars& p, const Options& opt,
                               std::vector<CellTrace<T>>* trace = nullptr);

/// The m x n matrix R over the left (rows) and right (columns) attributes.
template <class T>
ad::Var attribute_similarity(ad::Tape<T>& t, ad::Var tokens, std::span<const TokenSpan> left,
                             std::span<const TokenSpan> right, const AttentionVars& p, const Options& opt,
                             SimilarityTrace<T>* trace = nullptr);

// ---------------------------------------------------------------------------
// Value-level API.

template <class T>
Matrix<T> self_attention(const Matrix<T>& h, const Matrix<T>& w_self);

template <class T>
std::vector<T> m2v(const Matrix<T>& alpha, M2vAxis axis = M2vAxis::columns);

template <class T>
struct InterAttention {
    Matrix<T> beta;      // L_s x L_t
    Matrix<T> attended;  // L_s x d
};

template <class T>
InterAttention<T> inter_attention(const Matrix<T>& h_src, const Matrix<T>& h_tgt, const Matrix<T>& w_inter);

template <class T>
std::vector<T> compare_tokens(const Matrix<T>& h_src, const Matrix<T>& attended, const AttentionParams<T>& params);

template <class T>
Matrix<T> attribute_similarity_matrix(const TokenEmbeddings<T>& emb, const AttentionParams<T>& params,
                                      const Options& opt = {}, SimilarityTrace<T>* trace = nullptr);

/// Gradient of sum_x weights[x] * C(x) with respect to every parameter.
template <class T>
AttentionParams<T> compare_tokens_gradient(const Matrix<T>& h_src, const Matrix<T>& attended,
                                           const AttentionParams<T>& params, std::span<const T> weights);

/// Gradient of sum(R) with respect to every parameter.
template <class T>
AttentionParams<T> similarity_sum_gradient(const TokenEmbeddings<T>& emb, const AttentionParams<T>& params,
                                           const Options& opt = {});

}  // namespace emcar::attnet
