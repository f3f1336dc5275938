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

#include "emcar/encoder.hpp"

#include <cmath>
#include <numeric>

#include "random_util.hpp"

namespace emcar::encoder {

using ad::Tape;
using ad::Var;

EncoderConfig EncoderConfig::preset(std::string_view name, std::size_t vocab_size) {
    EncoderConfig c;
    c.vocab_size = vocab_size;
    if (name == "tiny") return c;
    if (name == "base") {
        c.hidden = 768;
        c.layers = 12;
        c.heads = 12;
        c.ffn = 3072;
        return c;
    }
    throw ConfigError("unknown encoder preset '" + std::string(name) + "' (expected tiny or base)");
}

void EncoderConfig::validate() const {
    if (vocab_size == 0 || hidden == 0 || layers == 0 || heads == 0 || ffn == 0 || max_positions == 0 ||
        type_vocab == 0)
        throw ConfigError("encoder sizes must be positive");
    if (hidden % heads != 0)
        throw ConfigError("encoder hidden width " + std::to_string(hidden) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    if (!(layer_norm_eps > 0) || !(init_std > 0)) throw ConfigError("encoder eps and init_std must be positive");
}

nlohmann::json to_json(const EncoderConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"hidden", c.hidden},
            {"layers", c.layers},         {"heads", c.heads},
            {"ffn", c.ffn},               {"max_positions", c.max_positions},
            {"type_vocab", c.type_vocab}, {"layer_norm_eps", c.layer_norm_eps},
            {"init_std", c.init_std}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    try {
        EncoderConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.hidden = j.at("hidden").get<std::size_t>();
        c.layers = j.at("layers").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.ffn = j.at("ffn").get<std::size_t>();
        c.max_positions = j.at("max_positions").get<std::size_t>();
        c.type_vocab = j.at("type_vocab").get<std::size_t>();
        c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
        c.init_std = j.at("init_std").get<double>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("encoder config: ") + e.what());
    }
}

template <class T>
Encoder<T>::Encoder(const EncoderConfig& config, ad::ParameterSet<T>& params, std::uint64_t seed)
    : config_(config) {
    config_.validate();
    detail::Rng rng(seed);
    const std::size_t d = config_.hidden;
    auto normal = [&](std::size_t r, std::size_t c) {
        Matrix<T> m(r, c);
        for (auto& v : m.values()) v = static_cast<T>(detail::normal(rng) * config_.init_std);
        return m;
    };
    auto add = [&](const std::string& name, Matrix<T> init) { return params.add("encoder." + name, std::move(init)); };

    word_ = add("word_embeddings", normal(config_.vocab_size, d));
    position_ = add("position_embeddings", normal(config_.max_positions, d));
    segment_ = add("token_type_embeddings", normal(config_.type_vocab, d));
    emb_ln_g_ = add("embeddings.ln.gamma", Matrix<T>(1, d, T(1)));
    emb_ln_b_ = add("embeddings.ln.beta", Matrix<T>(1, d));
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer L{};
        L.wq = add(p + "query.weight", normal(d, d));
        L.bq = add(p + "query.bias", Matrix<T>(1, d));
        L.wk = add(p + "key.weight", normal(d, d));
        L.bk = add(p + "key.bias", Matrix<T>(1, d));
        L.wv = add(p + "value.weight", normal(d, d));
        L.bv = add(p + "value.bias", Matrix<T>(1, d));
        L.wo = add(p + "attention_output.weight", normal(d, d));
        L.bo = add(p + "attention_output.bias", Matrix<T>(1, d));
        L.ln1_g = add(p + "attention_ln.gamma", Matrix<T>(1, d, T(1)));
        L.ln1_b = add(p + "attention_ln.beta", Matrix<T>(1, d));
        L.w1 = add(p + "intermediate.weight", normal(d, config_.ffn));
        L.b1 = add(p + "intermediate.bias", Matrix<T>(1, config_.ffn));
        L.w2 = add(p + "output.weight", normal(config_.ffn, d));
        L.b2 = add(p + "output.bias", Matrix<T>(1, d));
        L.ln2_g = add(p + "output_ln.gamma", Matrix<T>(1, d, T(1)));
        L.ln2_b = add(p + "output_ln.beta", Matrix<T>(1, d));
        layers_.push_back(L);
    }
}

template <class T>
Var Encoder<T>::forward(Tape<T>& t, std::span<const std::int32_t> token_ids,
                        std::span<const std::int32_t> segment_ids) const {
    const std::size_t n = token_ids.size();
    if (n == 0) throw ArgumentError("encoder: empty token sequence");
    if (segment_ids.size() != n) throw ArgumentError("encoder: one segment id per token");
    if (n > config_.max_positions)
        throw LengthError("encoder: sequence of " + std::to_string(n) + " tokens exceeds the maximum of " +
                          std::to_string(config_.max_positions));

    const T eps = static_cast<T>(config_.layer_norm_eps);
    std::vector<std::int32_t> positions(n);
    std::iota(positions.begin(), positions.end(), 0);
    Var x = ad::add(t, ad::add(t, ad::embedding(t, word_, token_ids), ad::embedding(t, position_, positions)),
                    ad::embedding(t, segment_, segment_ids));
    x = ad::layer_norm_rows(t, x, t.param(emb_ln_g_), t.param(emb_ln_b_), eps);

    const std::size_t heads = config_.heads, dh = config_.hidden / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto linear = [&](Var in, std::size_t w, std::size_t b) {
        return ad::add_row(t, ad::matmul(t, in, t.param(w)), t.param(b));
    };
    for (const Layer& L : layers_) {
        Var q = linear(x, L.wq, L.bq), k = linear(x, L.wk, L.bk), v = linear(x, L.wv, L.bv);
        std::vector<Var> ctx(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t b = h * dh, e = b + dh;
            Var scores = ad::scale(t, ad::matmul_nt(t, ad::slice_cols(t, q, b, e), ad::slice_cols(t, k, b, e)),
                                   inv_sqrt);
            ctx[h] = ad::matmul(t, ad::softmax_rows(t, scores), ad::slice_cols(t, v, b, e));
        }
        Var merged = heads == 1 ? ctx[0] : ad::concat_cols<T>(t, ctx);
        x = ad::layer_norm_rows(t, ad::add(t, x, linear(merged, L.wo, L.bo)), t.param(L.ln1_g), t.param(L.ln1_b),
                                eps);
        Var hidden = ad::gelu(t, linear(x, L.w1, L.b1));
        x = ad::layer_norm_rows(t, ad::add(t, x, linear(hidden, L.w2, L.b2)), t.param(L.ln2_g), t.param(L.ln2_b),
                                eps);
    }
    return x;
}

template <class T>
attnet::TokenEmbeddings<T> embed_tokens(const Encoder<T>& encoder, const ad::ParameterSet<T>& params,
                                        const serializer::SerializedPair& sp) {
    if (sp.token_ids.size() < 3) throw ArgumentError("embed_tokens: need at least [CLS], one token and [SEP]");
    Tape<T> t(params, nullptr);
    const auto segments = sp.segment_ids();
    Var h = encoder.forward(t, sp.token_ids, segments);
    attnet::TokenEmbeddings<T> out;
    out.vectors = t.value(h);
    out.pooled.assign(out.vectors.row(0).begin(), out.vectors.row(0).end());
    out.left_spans = sp.left_spans;
    out.right_spans = sp.right_spans;
    return out;
}

template class Encoder<float>;
template class Encoder<double>;
template attnet::TokenEmbeddings<float> embed_tokens<float>(const Encoder<float>&, const ad::ParameterSet<float>&,
                                                            const serializer::SerializedPair&);
template attnet::TokenEmbeddings<double> embed_tokens<double>(const Encoder<double>&,
                                                              const ad::ParameterSet<double>&,
                                                              const serializer::SerializedPair&);

}  // namespace emcar::encoder
