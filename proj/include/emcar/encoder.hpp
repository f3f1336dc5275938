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

// BERT-style transformer encoder (post-layer-norm, erf GELU) on the autograd
// tape. Parameters are registered into a caller-owned ParameterSet, so the
// encoder, the attention network and the head train as one parameter list.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emcar/attnet.hpp"
#include "emcar/autograd.hpp"
#include "emcar/serializer.hpp"

namespace emcar::encoder {

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t hidden = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn = 256;
    std::size_t max_positions = 512;
    std::size_t type_vocab = 2;
    double layer_norm_eps = 1e-12;
    double init_std = 0.02;

    /// "tiny" (64/2/4/256) or "base" (768/12/12/3072). ConfigError otherwise.
    static EncoderConfig preset(std::string_view name, std::size_t vocab_size);
    /// ConfigError on zero sizes or hidden % heads != 0.
    void validate() const;
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

template <class T>
class Encoder {
public:
    /// Registers all weights under "encoder." with N(0, init_std) matrices,
    /// unit layer-norm gains and zero biases.
    Encoder(const EncoderConfig& config, ad::ParameterSet<T>& params, std::uint64_t seed);

    const EncoderConfig& config() const noexcept { return config_; }

    /// Contextual embeddings, one row per token (L x hidden). LengthError when
    /// L exceeds max_positions, ArgumentError on out-of-range ids.
    ad::Var forward(ad::Tape<T>& t, std::span<const std::int32_t> token_ids,
                    std::span<const std::int32_t> segment_ids) const;

private:
    struct Layer {
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
    };

    EncoderConfig config_;
    std::size_t word_, position_, segment_, emb_ln_g_, emb_ln_b_;
    std::vector<Layer> layers_;
};

/// Runs `encoder` over a serialized pair and packages the result with the
/// pair's value spans. The pooled vector is the row of the leading [CLS].
template <class T>
attnet::TokenEmbeddings<T> embed_tokens(const Encoder<T>& encoder, const ad::ParameterSet<T>& params,
                                        const serializer::SerializedPair& sp);

}  // namespace emcar::encoder
