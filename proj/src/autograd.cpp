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

#include "emcar/autograd.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "emcar/kernels.hpp"

namespace emcar::ad {

// ---------------------------------------------------------------------------
// ParameterSet

template <class T>
std::size_t ParameterSet<T>::add(std::string name, Matrix<T> init) {
    if (find(name)) throw ArgumentError("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return values_.size() - 1;
}

template <class T>
std::optional<std::size_t> ParameterSet<T>::find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    return std::nullopt;
}

template <class T>
Gradients<T> ParameterSet<T>::zero_gradients() const {
    Gradients<T> g;
    g.reserve(values_.size());
    for (const auto& v : values_) g.emplace_back(v.rows(), v.cols());
    return g;
}

template <class T>
std::size_t ParameterSet<T>::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
Tape<T>::Tape(bool record_gradients) : recording_(record_gradients) {}

template <class T>
Tape<T>::Tape(const ParameterSet<T>& params, Gradients<T>* grads)
    : params_(&params), grads_(grads), recording_(grads != nullptr) {
    if (grads_ && grads_->size() != params.size())
        throw ArgumentError("gradient buffer does not match parameter set");
}

template <class T>
Var Tape<T>::constant(Matrix<T> value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Tape<T>::leaf(Matrix<T> value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = recording_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Tape<T>::param(std::size_t id) {
    if (!params_ || id >= params_->size()) throw ArgumentError("unknown parameter id");
    Node n;
    n.external = &params_->value(id);
    n.requires_grad = recording_;
    if (recording_) {
        n.backward = [id](Tape& t, std::uint32_t self) {
            Matrix<T>& src = t.nodes_[self].grad;
            Matrix<T>& dst = (*t.grads_)[id];
            kernels::active<T>().axpy(src.size(), T(1), src.data(), dst.data());
        };
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
const Matrix<T>& Tape<T>::value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.owned;
}

template <class T>
const Matrix<T>& Tape<T>::grad(Var v) const {
    return nodes_.at(v.id).grad;
}

template <class T>
Matrix<T>& Tape<T>::grad_ref(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !(n.external ? n.external->empty() : n.owned.empty())) {
        const Matrix<T>& v = n.external ? *n.external : n.owned;
        n.grad = Matrix<T>(v.rows(), v.cols());
    }
    return n.grad;
}

template <class T>
Var Tape<T>::push(Matrix<T> value, std::initializer_list<Var> inputs, Backward backward) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

template <class T>
Var Tape<T>::push(Matrix<T> value, std::span<const Var> inputs, Backward backward) {
    Node n;
    n.owned = std::move(value);
    if (recording_) {
        for (Var in : inputs)
            if (in.valid() && nodes_.at(in.id).requires_grad) n.requires_grad = true;
        if (n.requires_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
void Tape<T>::backward(Var output) {
    if (!recording_) throw ArgumentError("backward() on a tape that records no gradients");
    const Matrix<T>& out = value(output);
    if (out.rows() != 1 || out.cols() != 1) throw ArgumentError("backward() needs a 1x1 output");
    if (!nodes_.at(output.id).requires_grad) return;
    grad_ref(output.id)[0] += T(1);
    for (std::uint32_t id = output.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        n.backward(*this, id);
    }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

template <class T>
const kernels::KernelTable<T>& K() {
    return kernels::active<T>();
}

template <class T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ArgumentError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
}

template <class T>
void accumulate(Matrix<T>& dst, const Matrix<T>& src, T alpha = T(1)) {
    K<T>().axpy(src.size(), alpha, src.data(), dst.data());
}

// Element-wise unary op with derivative expressed through input x and output y.
template <class T, class F, class D>
Var unary(Tape<T>& t, Var a, F f, D dfdx) {
    const Matrix<T>& x = t.value(a);
    Matrix<T> y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return t.push(std::move(y), {a}, [a, dfdx](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const Matrix<T>& xv = tp.value(a);
        const Matrix<T>& yv = tp.value(Var{self});
        const Matrix<T>& g = tp.grad(Var{self});
        Matrix<T>& ga = tp.grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
    });
}

}  // namespace

template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
    const Matrix<T>& A = t.value(a);
    const Matrix<T>& B = t.value(b);
    if (A.cols() != B.rows()) throw ArgumentError("matmul: inner dimensions differ");
    Matrix<T> C(A.rows(), B.cols());
    K<T>().gemm_nn(A.rows(), B.cols(), A.cols(), A.data(), B.data(), C.data(), false);
    return t.push(std::move(C), {a, b}, [a, b](Tape<T>& tp, std::uint32_t self) {
        const Matrix<T>& A = tp.value(a);
        const Matrix<T>& B = tp.value(b);
        const Matrix<T>& G = tp.grad(Var{self});
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        if (tp.requires_grad(a))
            K<T>().gemm_nt(m, k, n, G.data(), B.data(), tp.grad_ref(a.id).data(), true);
        if (tp.requires_grad(b))
            K<T>().gemm_tn(k, n, m, A.data(), G.data(), tp.grad_ref(b.id).data(), true);
    });
}

template <class T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
    const Matrix<T>& A = t.value(a);
    const Matrix<T>& B = t.value(b);
    if (A.cols() != B.cols()) throw ArgumentError("matmul_nt: inner dimensions differ");
    Matrix<T> C(A.rows(), B.rows());
    K<T>().gemm_nt(A.rows(), B.rows(), A.cols(), A.data(), B.data(), C.data(), false);
    return t.push(std::move(C), {a, b}, [a, b](Tape<T>& tp, std::uint32_t self) {
        const Matrix<T>& A = tp.value(a);
        const Matrix<T>& B = tp.value(b);
        const Matrix<T>& G = tp.grad(Var{self});
        const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
        if (tp.requires_grad(a))
            K<T>().gemm_nn(m, k, n, G.data(), B.data(), tp.grad_ref(a.id).data(), true);
        if (tp.requires_grad(b))
            K<T>().gemm_tn(n, k, m, G.data(), A.data(), tp.grad_ref(b.id).data(), true);
    });
}

template <class T>
Var transpose(Tape<T>& t, Var a) {
    return t.push(t.value(a).transposed(), {a}, [a](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        accumulate(tp.grad_ref(a.id), tp.grad(Var{self}).transposed());
    });
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
    const Matrix<T>& A = t.value(a);
    const Matrix<T>& B = t.value(b);
    require_same_shape(A, B, "add");
    Matrix<T> C = A;
    accumulate(C, B);
    return t.push(std::move(C), {a, b}, [a, b](Tape<T>& tp, std::uint32_t self) {
        const Matrix<T>& G = tp.grad(Var{self});
        if (tp.requires_grad(a)) accumulate(tp.grad_ref(a.id), G);
        if (tp.requires_grad(b)) accumulate(tp.grad_ref(b.id), G);
    });
}

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
    const Matrix<T>& A = t.value(a);
    const Matrix<T>& B = t.value(b);
    require_same_shape(A, B, "sub");
    Matrix<T> C = A;
    accumulate(C, B, T(-1));
    return t.push(std::move(C), {a, b}, [a, b](Tape<T>& tp, std::uint32_t self) {
        const Matrix<T>& G = tp.grad(Var{self});
        if (tp.requires_grad(a)) accumulate(tp.grad_ref(a.id), G);
        if (tp.requires_grad(b)) accumulate(tp.grad_ref(b.id), G, T(-1));
    });
}

template <class T>
Var mul(Tape<T>& t, Var a, Var b) {
    const Matrix<T>& A = t.value(a);
    const Matrix<T>& B = t.value(b);
    require_same_shape(A, B, "mul");
    Matrix<T> C(A.rows(), A.cols());
    K<T>().hadamard(A.size(), A.data(), B.data(), C.data());
    return t.push(std::move(C), {a, b}, [a, b](Tape<T>& tp, std::uint32_t self) {
        const Matrix<T>& G = tp.grad(Var{self});
        if (tp.requires_grad(a)) {
            Matrix<T>& ga = tp.grad_ref(a.id);
            const Matrix<T>& B = tp.value(b);
            for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * B[i];
        }
        if (tp.requires_grad(b)) {
            Matrix<T>& gb = tp.grad_ref(b.id);
            const Matrix<T>& A = tp.value(a);
            for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i] * A[i];
        }
    });
}

template <class T>
Var add_row(Tape<T>& t, Var a, Var row) {
    const Matrix<T>& A = t.value(a);
    const Matrix<T>& R = t.value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) throw ArgumentError("add_row: bias shape mismatch");
    Matrix<T> C = A;
    for (std::size_t r = 0; r < C.rows(); ++r) K<T>().axpy(C.cols(), T(1), R.data(), C.row(r).data());
    return t.push(std::move(C), {a, row}, [a, row](Tape<T>& tp, std::uint32_t self) {
        const Matrix<T>& G = tp.grad(Var{self});
        if (tp.requires_grad(a)) accumulate(tp.grad_ref(a.id), G);
        if (tp.requires_grad(row)) {
            Matrix<T>& gr = tp.grad_ref(row.id);
            for (std::size_t r = 0; r < G.rows(); ++r)
                K<T>().axpy(G.cols(), T(1), G.row(r).data(), gr.data());
        }
    });
}

template <class T>
Var scale(Tape<T>& t, Var a, T factor) {
    Matrix<T> C = t.value(a);
    for (auto& v : C.values()) v *= factor;
    return t.push(std::move(C), {a}, [a, factor](Tape<T>& tp, std::uint32_t self) {
        if (tp.requires_grad(a)) accumulate(tp.grad_ref(a.id), tp.grad(Var{self}), factor);
    });
}

template <class T>
Var add_scalar(Tape<T>& t, Var a, T offset) {
    Matrix<T> C = t.value(a);
    for (auto& v : C.values()) v += offset;
    return t.push(std::move(C), {a}, [a](Tape<T>& tp, std::uint32_t self) {
        if (tp.requires_grad(a)) accumulate(tp.grad_ref(a.id), tp.grad(Var{self}));
    });
}

template <class T>
Var abs(Tape<T>& t, Var a) {
    return unary<T>(
        t, a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <class T>
Var relu(Tape<T>& t, Var a) {
    return unary<T>(
        t, a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <class T>
Var sigmoid(Tape<T>& t, Var a) {
    return unary<T>(
        t, a,
        [](T x) {
            if (x >= 0) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var tanh(Tape<T>& t, Var a) {
    return unary<T>(
        t, a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var gelu(Tape<T>& t, Var a) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    return unary<T>(
        t, a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [](T x, T) {
            return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) +
                   x * inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
        });
}

template <class T>
Var softmax_rows(Tape<T>& t, Var a) {
    Matrix<T> Y = t.value(a);
    for (std::size_t r = 0; r < Y.rows(); ++r) K<T>().softmax(Y.cols(), Y.row(r).data());
    return t.push(std::move(Y), {a}, [a](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const Matrix<T>& Y = tp.value(Var{self});
        const Matrix<T>& G = tp.grad(Var{self});
        Matrix<T>& ga = tp.grad_ref(a.id);
        for (std::size_t r = 0; r < Y.rows(); ++r) {
            auto y = Y.row(r);
            auto g = G.row(r);
            auto d = ga.row(r);
            const T inner = K<T>().dot(y.size(), y.data(), g.data());
            for (std::size_t c = 0; c < y.size(); ++c) d[c] += y[c] * (g[c] - inner);
        }
    });
}

template <class T>
Var layer_norm_rows(Tape<T>& t, Var a, Var gamma, Var beta, T eps) {
    const Matrix<T>& X = t.value(a);
    const Matrix<T>& Gm = t.value(gamma);
    const Matrix<T>& Bt = t.value(beta);
    const std::size_t n = X.cols();
    if (Gm.rows() != 1 || Gm.cols() != n || !Gm.same_shape(Bt))
        throw ArgumentError("layer_norm_rows: affine shape mismatch");
    Matrix<T> xhat(X.rows(), n);
    std::vector<T> inv_std(X.rows());
    Matrix<T> Y(X.rows(), n);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        auto x = X.row(r);
        const T mean = K<T>().sum(n, x.data()) / T(n);
        T var = 0;
        for (T v : x) var += (v - mean) * (v - mean);
        var /= T(n);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (x[c] - mean) * inv_std[r];
            Y(r, c) = xhat(r, c) * Gm[c] + Bt[c];
        }
    }
    return t.push(std::move(Y), {a, gamma, beta},
                  [a, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape<T>& tp, std::uint32_t self) {
                      const Matrix<T>& G = tp.grad(Var{self});
                      const std::size_t n = G.cols();
                      if (tp.requires_grad(gamma)) {
                          Matrix<T>& gg = tp.grad_ref(gamma.id);
                          for (std::size_t r = 0; r < G.rows(); ++r)
                              for (std::size_t c = 0; c < n; ++c) gg[c] += G(r, c) * xhat(r, c);
                      }
                      if (tp.requires_grad(beta)) {
                          Matrix<T>& gb = tp.grad_ref(beta.id);
                          for (std::size_t r = 0; r < G.rows(); ++r)
                              K<T>().axpy(n, T(1), G.row(r).data(), gb.data());
                      }
                      if (tp.requires_grad(a)) {
                          const Matrix<T>& Gm = tp.value(gamma);
                          Matrix<T>& ga = tp.grad_ref(a.id);
                          std::vector<T> dxhat(n);
                          for (std::size_t r = 0; r < G.rows(); ++r) {
                              T mean_d = 0, mean_dx = 0;
                              for (std::size_t c = 0; c < n; ++c) {
                                  dxhat[c] = G(r, c) * Gm[c];
                                  mean_d += dxhat[c];
                                  mean_dx += dxhat[c] * xhat(r, c);
                              }
                              mean_d /= T(n);
                              mean_dx /= T(n);
                              for (std::size_t c = 0; c < n; ++c)
                                  ga(r, c) +=
                                      inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                          }
                      }
                  });
}

template <class T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
    const std::size_t rows = t.value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw ArgumentError("concat_cols: row counts differ");
        cols += t.value(p).cols();
    }
    Matrix<T> C(rows, cols);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Matrix<T>& P = t.value(p);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(P.row(r).begin(), P.row(r).end(), C.row(r).begin() + offset);
        offset += P.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return t.push(std::move(C), parts, [inputs](Tape<T>& tp, std::uint32_t self) {
        const Matrix<T>& G = tp.grad(Var{self});
        std::size_t offset = 0;
        for (Var p : inputs) {
            const std::size_t w = tp.value(p).cols();
            if (tp.requires_grad(p)) {
                Matrix<T>& gp = tp.grad_ref(p.id);
                for (std::size_t r = 0; r < G.rows(); ++r)
                    K<T>().axpy(w, T(1), G.row(r).data() + offset, gp.row(r).data());
            }
            offset += w;
        }
    });
}

template <class T>
Var slice_rows(Tape<T>& t, Var a, std::size_t begin, std::size_t end) {
    const Matrix<T>& A = t.value(a);
    if (begin > end || end > A.rows()) throw ArgumentError("slice_rows: range out of bounds");
    Matrix<T> C(end - begin, A.cols());
    std::copy(A.data() + begin * A.cols(), A.data() + end * A.cols(), C.data());
    return t.push(std::move(C), {a}, [a, begin](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const Matrix<T>& G = tp.grad(Var{self});
        Matrix<T>& ga = tp.grad_ref(a.id);
        K<T>().axpy(G.size(), T(1), G.data(), ga.data() + begin * ga.cols());
    });
}

template <class T>
Var slice_cols(Tape<T>& t, Var a, std::size_t begin, std::size_t end) {
    const Matrix<T>& A = t.value(a);
    if (begin > end || end > A.cols()) throw ArgumentError("slice_cols: range out of bounds");
    const std::size_t w = end - begin;
    Matrix<T> C(A.rows(), w);
    for (std::size_t r = 0; r < A.rows(); ++r)
        std::copy(A.row(r).begin() + begin, A.row(r).begin() + end, C.row(r).begin());
    return t.push(std::move(C), {a}, [a, begin, w](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const Matrix<T>& G = tp.grad(Var{self});
        Matrix<T>& ga = tp.grad_ref(a.id);
        for (std::size_t r = 0; r < G.rows(); ++r)
            K<T>().axpy(w, T(1), G.row(r).data(), ga.row(r).data() + begin);
    });
}

template <class T>
Var embedding(Tape<T>& t, std::size_t param_id, std::span<const std::int32_t> ids) {
    const ParameterSet<T>* params = t.parameters();
    if (!params || param_id >= params->size()) throw ArgumentError("embedding: unknown parameter");
    const Matrix<T>& table = params->value(param_id);
    Matrix<T> C(ids.size(), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows())
            throw ArgumentError("embedding: id " + std::to_string(ids[i]) + " out of range");
        std::copy(table.row(ids[i]).begin(), table.row(ids[i]).end(), C.row(i).begin());
    }
    Var self;
    if (t.recording()) {
        // Always differentiable: the table is a parameter.
        Var marker = t.leaf(Matrix<T>());
        std::vector<std::int32_t> rows(ids.begin(), ids.end());
        self = t.push(std::move(C), {marker}, [param_id, rows](Tape<T>& tp, std::uint32_t s) {
            const Matrix<T>& G = tp.grad(Var{s});
            Matrix<T>& dst = (*tp.gradients())[param_id];
            for (std::size_t i = 0; i < rows.size(); ++i)
                K<T>().axpy(G.cols(), T(1), G.row(i).data(), dst.row(rows[i]).data());
        });
    } else {
        self = t.push(std::move(C), {}, {});
    }
    return self;
}

template <class T>
Var col_sums(Tape<T>& t, Var a) {
    const Matrix<T>& A = t.value(a);
    Matrix<T> C(1, A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r) K<T>().axpy(A.cols(), T(1), A.row(r).data(), C.data());
    return t.push(std::move(C), {a}, [a](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const Matrix<T>& G = tp.grad(Var{self});
        Matrix<T>& ga = tp.grad_ref(a.id);
        for (std::size_t r = 0; r < ga.rows(); ++r) K<T>().axpy(ga.cols(), T(1), G.data(), ga.row(r).data());
    });
}

template <class T>
Var row_sums(Tape<T>& t, Var a) {
    const Matrix<T>& A = t.value(a);
    Matrix<T> C(A.rows(), 1);
    for (std::size_t r = 0; r < A.rows(); ++r) C[r] = K<T>().sum(A.cols(), A.row(r).data());
    return t.push(std::move(C), {a}, [a](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const Matrix<T>& G = tp.grad(Var{self});
        Matrix<T>& ga = tp.grad_ref(a.id);
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (auto& v : ga.row(r)) v += G[r];
    });
}

template <class T>
Var sum_all(Tape<T>& t, Var a) {
    const Matrix<T>& A = t.value(a);
    Matrix<T> C(1, 1, K<T>().sum(A.size(), A.data()));
    return t.push(std::move(C), {a}, [a](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const T g = tp.grad(Var{self})[0];
        for (auto& v : tp.grad_ref(a.id).values()) v += g;
    });
}

template <class T>
Var mean_all(Tape<T>& t, Var a) {
    const Matrix<T>& A = t.value(a);
    if (A.empty()) throw ArgumentError("mean_all: empty input");
    const T n = T(A.size());
    Matrix<T> C(1, 1, K<T>().sum(A.size(), A.data()) / n);
    return t.push(std::move(C), {a}, [a, n](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const T g = tp.grad(Var{self})[0] / n;
        for (auto& v : tp.grad_ref(a.id).values()) v += g;
    });
}

namespace {

// Routes each output gradient to the input position that produced it.
template <class T>
Var select_positions(Tape<T>& t, Var a, Matrix<T> out, std::vector<std::size_t> source) {
    return t.push(std::move(out), {a}, [a, source = std::move(source)](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const Matrix<T>& G = tp.grad(Var{self});
        Matrix<T>& ga = tp.grad_ref(a.id);
        for (std::size_t i = 0; i < source.size(); ++i) ga[source[i]] += G[i];
    });
}

}  // namespace

template <class T>
Var max_all(Tape<T>& t, Var a) {
    const Matrix<T>& A = t.value(a);
    if (A.empty()) throw ArgumentError("max_all: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < A.size(); ++i)
        if (A[i] > A[best]) best = i;
    return select_positions(t, a, Matrix<T>(1, 1, A[best]), {best});
}

template <class T>
Var row_max(Tape<T>& t, Var a) {
    const Matrix<T>& A = t.value(a);
    if (A.cols() == 0) throw ArgumentError("row_max: no columns");
    Matrix<T> out(A.rows(), 1);
    std::vector<std::size_t> src(A.rows());
    for (std::size_t r = 0; r < A.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < A.cols(); ++c)
            if (A(r, c) > A(r, best)) best = c;
        out[r] = A(r, best);
        src[r] = r * A.cols() + best;
    }
    return select_positions(t, a, std::move(out), std::move(src));
}

template <class T>
Var col_max(Tape<T>& t, Var a) {
    const Matrix<T>& A = t.value(a);
    if (A.rows() == 0) throw ArgumentError("col_max: no rows");
    Matrix<T> out(1, A.cols());
    std::vector<std::size_t> src(A.cols());
    for (std::size_t c = 0; c < A.cols(); ++c) {
        std::size_t best = 0;
        for (std::size_t r = 1; r < A.rows(); ++r)
            if (A(r, c) > A(best, c)) best = r;
        out[c] = A(best, c);
        src[c] = best * A.cols() + c;
    }
    return select_positions(t, a, std::move(out), std::move(src));
}

template <class T>
Var divide_by_max(Tape<T>& t, Var a) {
    const Matrix<T>& A = t.value(a);
    if (A.empty()) throw ArgumentError("divide_by_max: empty input");
    std::size_t k = 0;
    for (std::size_t i = 1; i < A.size(); ++i)
        if (A[i] > A[k]) k = i;
    const T top = A[k];
    if (!(top > T(0)) || !std::isfinite(top))
        throw NumericError("divide_by_max: largest entry must be positive and finite");
    Matrix<T> Y = A;
    for (auto& v : Y.values()) v /= top;
    Y[k] = T(1);
    return t.push(std::move(Y), {a}, [a, k](Tape<T>& tp, std::uint32_t self) {
        if (!tp.requires_grad(a)) return;
        const Matrix<T>& A = tp.value(a);
        const Matrix<T>& G = tp.grad(Var{self});
        Matrix<T>& ga = tp.grad_ref(a.id);
        const T top = A[k];
        T cross = 0;
        for (std::size_t i = 0; i < A.size(); ++i) {
            ga[i] += G[i] / top;
            cross += G[i] * A[i];
        }
        ga[k] -= cross / (top * top);
    });
}

template <class T>
Var assemble(Tape<T>& t, std::span<const Var> scalars, std::size_t rows, std::size_t cols) {
    if (scalars.size() != rows * cols) throw ArgumentError("assemble: wrong number of entries");
    Matrix<T> C(rows, cols);
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (!scalars[i].valid()) continue;
        const Matrix<T>& s = t.value(scalars[i]);
        if (s.size() != 1) throw ArgumentError("assemble: entries must be 1x1");
        C[i] = s[0];
    }
    std::vector<Var> inputs(scalars.begin(), scalars.end());
    return t.push(std::move(C), scalars, [inputs](Tape<T>& tp, std::uint32_t self) {
        const Matrix<T>& G = tp.grad(Var{self});
        for (std::size_t i = 0; i < inputs.size(); ++i)
            if (inputs[i].valid() && tp.requires_grad(inputs[i])) tp.grad_ref(inputs[i].id)[0] += G[i];
    });
}

template <class T>
Var cross_entropy(Tape<T>& t, Var logits, std::size_t label) {
    const Matrix<T>& Z = t.value(logits);
    if (Z.rows() != 1 || label >= Z.cols()) throw ArgumentError("cross_entropy: bad logits/label");
    Matrix<T> p = Z;
    K<T>().softmax(p.cols(), p.data());
    T hi = Z[0];
    for (T v : Z.values()) hi = std::max(hi, v);
    T total = 0;
    for (T v : Z.values()) total += std::exp(v - hi);
    const T loss = hi + std::log(total) - Z[label];
    return t.push(Matrix<T>(1, 1, loss), {logits},
                  [logits, label, p = std::move(p)](Tape<T>& tp, std::uint32_t self) {
                      if (!tp.requires_grad(logits)) return;
                      const T g = tp.grad(Var{self})[0];
                      Matrix<T>& gz = tp.grad_ref(logits.id);
                      for (std::size_t c = 0; c < p.cols(); ++c)
                          gz[c] += g * (p[c] - (c == label ? T(1) : T(0)));
                  });
}

// ---------------------------------------------------------------------------

#define EMCAR_INSTANTIATE_OPS(T)                                                          \
    template class ParameterSet<T>;                                                       \
    template class Tape<T>;                                                               \
    template Var matmul<T>(Tape<T>&, Var, Var);                                           \
    template Var matmul_nt<T>(Tape<T>&, Var, Var);                                        \
    template Var transpose<T>(Tape<T>&, Var);                                             \
    template Var add<T>(Tape<T>&, Var, Var);                                              \
    template Var sub<T>(Tape<T>&, Var, Var);                                              \
    template Var mul<T>(Tape<T>&, Var, Var);                                              \
    template Var add_row<T>(Tape<T>&, Var, Var);                                          \
    template Var scale<T>(Tape<T>&, Var, T);                                              \
    template Var add_scalar<T>(Tape<T>&, Var, T);                                         \
    template Var abs<T>(Tape<T>&, Var);                                                   \
    template Var relu<T>(Tape<T>&, Var);                                                  \
    template Var sigmoid<T>(Tape<T>&, Var);                                               \
    template Var tanh<T>(Tape<T>&, Var);                                                  \
    template Var gelu<T>(Tape<T>&, Var);                                                  \
    template Var softmax_rows<T>(Tape<T>&, Var);                                          \
    template Var layer_norm_rows<T>(Tape<T>&, Var, Var, Var, T);                          \
    template Var concat_cols<T>(Tape<T>&, std::span<const Var>);                          \
    template Var slice_rows<T>(Tape<T>&, Var, std::size_t, std::size_t);                  \
    template Var slice_cols<T>(Tape<T>&, Var, std::size_t, std::size_t);                  \
    template Var embedding<T>(Tape<T>&, std::size_t, std::span<const std::int32_t>);      \
    template Var col_sums<T>(Tape<T>&, Var);                                              \
    template Var row_sums<T>(Tape<T>&, Var);                                              \
    template Var sum_all<T>(Tape<T>&, Var);                                               \
    template Var mean_all<T>(Tape<T>&, Var);                                              \
    template Var max_all<T>(Tape<T>&, Var);                                               \
    template Var row_max<T>(Tape<T>&, Var);                                               \
    template Var col_max<T>(Tape<T>&, Var);                                               \
    template Var divide_by_max<T>(Tape<T>&, Var);                                         \
    template Var assemble<T>(Tape<T>&, std::span<const Var>, std::size_t, std::size_t);   \
    template Var cross_entropy<T>(Tape<T>&, Var, std::size_t);

EMCAR_INSTANTIATE_OPS(float)
EMCAR_INSTANTIATE_OPS(double)

#undef EMCAR_INSTANTIATE_OPS

}  // namespace emcar::ad
