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

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every op of one forward pass. Parameters live outside the
// tape in a ParameterSet and are referenced without copying; backward()
// accumulates their gradients into a caller-owned Gradients buffer, so several
// tapes can run against the same parameters with separate gradient buffers.
// A tape constructed without a gradient buffer records no backward closures.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emcar/matrix.hpp"

namespace emcar::ad {

struct Var {
    std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
    bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

template <class T>
using Gradients = std::vector<Matrix<T>>;

template <class T>
class ParameterSet {
public:
    std::size_t add(std::string name, Matrix<T> init);

    std::size_t size() const noexcept { return values_.size(); }
    const std::string& name(std::size_t id) const { return names_.at(id); }
    Matrix<T>& value(std::size_t id) { return values_.at(id); }
    const Matrix<T>& value(std::size_t id) const { return values_.at(id); }
    std::optional<std::size_t> find(std::string_view name) const;

    Gradients<T> zero_gradients() const;
    std::size_t scalar_count() const noexcept;

private:
    std::vector<std::string> names_;
    std::vector<Matrix<T>> values_;
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::uint32_t self)>;

    /// Tape for free-standing leaves only.
    explicit Tape(bool record_gradients = true);
    /// Tape bound to a parameter set. Pass grads = nullptr for inference.
    Tape(const ParameterSet<T>& params, Gradients<T>* grads);

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Matrix<T> value);
    /// Leaf whose gradient is readable through grad() after backward().
    Var leaf(Matrix<T> value);
    /// Leaf referencing parameter `id`; gradients flow into the bound buffer.
    Var param(std::size_t id);

    const Matrix<T>& value(Var v) const;
    /// Gradient of a node after backward(); empty if nothing flowed into it.
    const Matrix<T>& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    bool recording() const noexcept { return recording_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Back-propagates from a 1x1 output.
    void backward(Var output);

    // -- op-author interface --------------------------------------------
    Var push(Matrix<T> value, std::initializer_list<Var> inputs, Backward backward);
    Var push(Matrix<T> value, std::span<const Var> inputs, Backward backward);
    /// Gradient buffer of a node, zero-allocated on first use.
    Matrix<T>& grad_ref(std::uint32_t id);
    const ParameterSet<T>* parameters() const noexcept { return params_; }
    Gradients<T>* gradients() const noexcept { return grads_; }

private:
    struct Node {
        Matrix<T> owned;
        const Matrix<T>* external = nullptr;
        Matrix<T> grad;
        bool requires_grad = false;
        Backward backward;
    };

    std::vector<Node> nodes_;
    const ParameterSet<T>* params_ = nullptr;
    Gradients<T>* grads_ = nullptr;
    bool recording_ = true;
};

// ---------------------------------------------------------------------------
// Ops. Shapes are checked; violations raise ArgumentError.

template <class T> Var matmul(Tape<T>& t, Var a, Var b);     // A * B
template <class T> Var matmul_nt(Tape<T>& t, Var a, Var b);  // A * B^T
template <class T> Var transpose(Tape<T>& t, Var a);

template <class T> Var add(Tape<T>& t, Var a, Var b);
template <class T> Var sub(Tape<T>& t, Var a, Var b);
template <class T> Var mul(Tape<T>& t, Var a, Var b);  // element-wise
/// Adds a 1 x cols row vector to every row.
template <class T> Var add_row(Tape<T>& t, Var a, Var row);
template <class T> Var scale(Tape<T>& t, Var a, T factor);
template <class T> Var add_scalar(Tape<T>& t, Var a, T offset);

template <class T> Var abs(Tape<T>& t, Var a);
template <class T> Var relu(Tape<T>& t, Var a);
template <class T> Var sigmoid(Tape<T>& t, Var a);
template <class T> Var tanh(Tape<T>& t, Var a);
template <class T> Var gelu(Tape<T>& t, Var a);  // erf form

template <class T> Var softmax_rows(Tape<T>& t, Var a);
template <class T> Var layer_norm_rows(Tape<T>& t, Var a, Var gamma, Var beta, T eps);

template <class T> Var concat_cols(Tape<T>& t, std::span<const Var> parts);
template <class T> Var slice_rows(Tape<T>& t, Var a, std::size_t begin, std::size_t end);
template <class T> Var slice_cols(Tape<T>& t, Var a, std::size_t begin, std::size_t end);
/// Rows of parameter `param_id` selected by `ids`; gradients scatter sparsely.
template <class T> Var embedding(Tape<T>& t, std::size_t param_id, std::span<const std::int32_t> ids);

template <class T> Var col_sums(Tape<T>& t, Var a);  // 1 x cols
template <class T> Var row_sums(Tape<T>& t, Var a);  // rows x 1
template <class T> Var sum_all(Tape<T>& t, Var a);   // 1 x 1
template <class T> Var mean_all(Tape<T>& t, Var a);  // 1 x 1
template <class T> Var max_all(Tape<T>& t, Var a);   // 1 x 1
template <class T> Var row_max(Tape<T>& t, Var a);   // rows x 1
template <class T> Var col_max(Tape<T>& t, Var a);   // 1 x cols
/// Divides every entry by the largest entry. The largest entry must be > 0.
template <class T> Var divide_by_max(Tape<T>& t, Var a);

/// Builds a rows x cols matrix from 1x1 vars in row-major order; invalid Vars
/// become constant zeros.
template <class T> Var assemble(Tape<T>& t, std::span<const Var> scalars, std::size_t rows, std::size_t cols);

/// Two-or-more-class cross-entropy of a 1 x k logit row against `label`.
template <class T> Var cross_entropy(Tape<T>& t, Var logits, std::size_t label);

}  // namespace emcar::ad
