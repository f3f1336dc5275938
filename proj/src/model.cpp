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

#include <algorithm>
#include <cmath>

#include "emcar/matcher.hpp"
#include "random_util.hpp"

namespace emcar::matcher {

using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Fusion

std::string_view to_string(FusionStrategy s) {
    switch (s) {
        case FusionStrategy::pooled_stats:
            return "pooled_stats";
        case FusionStrategy::pooled_only:
            return "pooled_only";
        case FusionStrategy::padded_matrix:
            return "padded_matrix";
    }
    return "?";
}

FusionStrategy parse_fusion_strategy(std::string_view name) {
    for (auto s : {FusionStrategy::pooled_stats, FusionStrategy::pooled_only, FusionStrategy::padded_matrix})
        if (to_string(s) == name) return s;
    throw ConfigError("unknown fusion strategy '" + std::string(name) + "'");
}

std::size_t fused_width(FusionStrategy s) {
    switch (s) {
        case FusionStrategy::pooled_stats:
            return kSummaryWidth;
        case FusionStrategy::pooled_only:
            return 0;
        case FusionStrategy::padded_matrix:
            return kPaddedSide * kPaddedSide;
    }
    return 0;
}

template <class T>
std::vector<T> summarize_similarity(const Matrix<T>& r) {
    if (r.empty()) throw ArgumentError("summarize_similarity: empty similarity matrix");
    const std::size_t m = r.rows(), n = r.cols();
    T row_best = 0, col_best = 0, total = 0, top = r[0];
    for (std::size_t i = 0; i < m; ++i) {
        T best = r(i, 0);
        for (std::size_t j = 1; j < n; ++j) best = std::max(best, r(i, j));
        row_best += best;
    }
    for (std::size_t j = 0; j < n; ++j) {
        T best = r(0, j);
        for (std::size_t i = 1; i < m; ++i) best = std::max(best, r(i, j));
        col_best += best;
    }
    for (T v : r.values()) {
        total += v;
        top = std::max(top, v);
    }
    return {row_best / static_cast<T>(m), col_best / static_cast<T>(n), total / static_cast<T>(m * n), top};
}

template <class T>
std::vector<T> fuse_features(std::span<const T> pooled, const Matrix<T>& r, FusionStrategy strategy) {
    if (r.empty()) throw ArgumentError("fuse_features: empty similarity matrix");
    std::vector<T> out(pooled.begin(), pooled.end());
    if (strategy == FusionStrategy::pooled_stats) {
        const auto s = summarize_similarity(r);
        out.insert(out.end(), s.begin(), s.end());
    } else if (strategy == FusionStrategy::padded_matrix) {
        for (std::size_t i = 0; i < kPaddedSide; ++i)
            for (std::size_t j = 0; j < kPaddedSide; ++j)
                out.push_back(i < r.rows() && j < r.cols() ? r(i, j) : T(0));
    }
    return out;
}

template <class T>
Var fuse_features(Tape<T>& t, Var pooled, Var r, FusionStrategy strategy) {
    if (t.value(r).empty()) throw ArgumentError("fuse_features: empty similarity matrix");
    if (strategy == FusionStrategy::pooled_only) return pooled;
    std::vector<Var> parts{pooled};
    if (strategy == FusionStrategy::pooled_stats) {
        parts.push_back(ad::mean_all(t, ad::row_max(t, r)));
        parts.push_back(ad::mean_all(t, ad::col_max(t, r)));
        parts.push_back(ad::mean_all(t, r));
        parts.push_back(ad::max_all(t, r));
    } else {
        const std::size_t m = t.value(r).rows(), n = t.value(r).cols();
        std::vector<Var> cells(kPaddedSide * kPaddedSide);
        for (std::size_t i = 0; i < std::min(m, kPaddedSide); ++i) {
            Var row = ad::slice_rows(t, r, i, i + 1);
            for (std::size_t j = 0; j < std::min(n, kPaddedSide); ++j)
                cells[i * kPaddedSide + j] = ad::slice_cols(t, row, j, j + 1);
        }
        parts.push_back(ad::assemble<T>(t, cells, 1, cells.size()));
    }
    return ad::concat_cols<T>(t, parts);
}

MatchPrediction prediction_from_logits(double l0, double l1) {
    if (!std::isfinite(l0) || !std::isfinite(l1)) throw NumericError("classify: non-finite logits");
    const double top = std::max(l0, l1);
    const double e0 = std::exp(l0 - top), e1 = std::exp(l1 - top);
    MatchPrediction p;
    p.prob_no_match = e0 / (e0 + e1);
    p.prob_match = e1 / (e0 + e1);
    p.decision = l1 > l0 ? 1 : 0;
    return p;
}

template <class T>
MatchPrediction classify(std::span<const T> features, const HeadParams<T>& head) {
    if (head.w.cols() != 2 || head.b.rows() != 1 || head.b.cols() != 2)
        throw ArgumentError("classify: head must map to two logits");
    if (head.w.rows() != features.size())
        throw ArgumentError("classify: feature width " + std::to_string(features.size()) + " does not match head width " +
                            std::to_string(head.w.rows()));
    double logit[2] = {static_cast<double>(head.b[0]), static_cast<double>(head.b[1])};
    for (std::size_t i = 0; i < features.size(); ++i)
        for (std::size_t k = 0; k < 2; ++k) logit[k] += static_cast<double>(features[i]) * head.w(i, k);
    return prediction_from_logits(logit[0], logit[1]);
}

// ---------------------------------------------------------------------------
// Config serialization

nlohmann::json to_json(const ModelConfig& c) {
    return {{"encoder_preset", c.encoder_preset},
            {"encoder", encoder::to_json(c.encoder)},
            {"m2v_axis", c.attention.m2v_axis == attnet::M2vAxis::columns ? "columns" : "rows"},
            {"fuse_directions", c.attention.fuse_directions},
            {"fusion", std::string(to_string(c.fusion))},
            {"max_seq_len", c.max_seq_len},
            {"gate_bias", c.gate_bias}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.encoder_preset = j.value("encoder_preset", c.encoder_preset);
        c.encoder = encoder::EncoderConfig::preset(c.encoder_preset, 0);
        if (j.contains("encoder")) {
            nlohmann::json merged = encoder::to_json(c.encoder);
            merged.update(j.at("encoder"));
            if (merged.at("vocab_size").get<std::size_t>() == 0) merged["vocab_size"] = 1;
            const std::size_t vocab = j.at("encoder").value("vocab_size", std::size_t{0});
            c.encoder = encoder::encoder_config_from_json(merged);
            c.encoder.vocab_size = vocab;
        }
        const std::string axis = j.value("m2v_axis", std::string("columns"));
        if (axis != "columns" && axis != "rows") throw ConfigError("m2v_axis must be columns or rows");
        c.attention.m2v_axis = axis == "columns" ? attnet::M2vAxis::columns : attnet::M2vAxis::rows;
        c.attention.fuse_directions = j.value("fuse_directions", c.attention.fuse_directions);
        c.fusion = parse_fusion_strategy(j.value("fusion", std::string(to_string(c.fusion))));
        c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
        c.gate_bias = j.value("gate_bias", c.gate_bias);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Model

namespace {

constexpr std::uint64_t kSeedStride = 0x9E3779B97F4A7C15ULL;

template <class T>
std::vector<T> flatten(const Matrix<T>& m) {
    return {m.values().begin(), m.values().end()};
}

nlohmann::json matrix_json(const Matrix<float>& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<float>(m.row(r).begin(), m.row(r).end()));
    return rows;
}

}  // namespace

Model::Model(ModelConfig config, serializer::WordPieceTokenizer tokenizer, std::uint64_t seed)
    : config_(std::move(config)), tokenizer_(std::move(tokenizer)) {
    config_.encoder.vocab_size = tokenizer_.vocab_size();
    config_.encoder.validate();
    if (config_.max_seq_len < serializer::kMinMaxLength)
        throw ConfigError("max_seq_len " + std::to_string(config_.max_seq_len) + " is below " +
                          std::to_string(serializer::kMinMaxLength));
    if (config_.encoder.max_positions < config_.max_seq_len)
        throw ConfigError("encoder max_positions " + std::to_string(config_.encoder.max_positions) +
                          " is below max_seq_len " + std::to_string(config_.max_seq_len));

    encoder_ = std::make_unique<encoder::Encoder<float>>(config_.encoder, params_, seed);
    const std::size_t d = config_.encoder.hidden;
    attn_ids_ = attnet::register_parameters(
        params_, attnet::AttentionParams<float>::init(d, seed + kSeedStride, static_cast<float>(config_.gate_bias)));

    detail::Rng rng(seed + 2 * kSeedStride);
    Matrix<float> w(d + fused_width(config_.fusion), 2);
    for (auto& v : w.values()) v = static_cast<float>(detail::normal(rng) * config_.encoder.init_std);
    head_w_ = params_.add("head.weight", std::move(w));
    head_b_ = params_.add("head.bias", Matrix<float>(1, 2));
}

serializer::SerializedPair Model::serialize(const data::CandidatePair& pair) const {
    return serializer::tokenize_with_spans(pair, tokenizer_, config_.max_seq_len);
}

Var Model::logits(Tape<float>& t, const serializer::SerializedPair& sp, ForwardTrace* trace) const {
    const auto segments = sp.segment_ids();
    Var h = encoder_->forward(t, sp.token_ids, segments);
    Var pooled = ad::slice_rows(t, h, 0, 1);
    Var features = pooled;
    if (config_.fusion != FusionStrategy::pooled_only) {
        Var r = attnet::attribute_similarity(t, h, sp.left_spans, sp.right_spans, attnet::bind(t, attn_ids_),
                                             config_.attention, trace ? &trace->similarity : nullptr);
        features = fuse_features(t, pooled, r, config_.fusion);
    }
    if (trace) {
        trace->serialized = sp;
        trace->features = flatten(t.value(features));
    }
    return ad::add_row(t, ad::matmul(t, features, t.param(head_w_)), t.param(head_b_));
}

MatchPrediction Model::predict(const data::CandidatePair& pair) const {
    Tape<float> t(params_, nullptr);
    const Matrix<float>& l = t.value(logits(t, serialize(pair)));
    return prediction_from_logits(l[0], l[1]);
}

std::vector<MatchPrediction> Model::predict_all(std::span<const data::CandidatePair> pairs,
                                                std::size_t batch_size) const {
    if (batch_size == 0) throw ArgumentError("predict_all: batch size must be positive");
    std::vector<MatchPrediction> out;
    out.reserve(pairs.size());
    for (std::size_t begin = 0; begin < pairs.size(); begin += batch_size) {
        const std::size_t end = std::min(pairs.size(), begin + batch_size);
        for (std::size_t i = begin; i < end; ++i) out.push_back(predict(pairs[i]));
    }
    return out;
}

attnet::TokenEmbeddings<float> Model::embed(const serializer::SerializedPair& sp) const {
    return encoder::embed_tokens(*encoder_, params_, sp);
}

attnet::AttentionParams<float> Model::attention_params() const {
    return {params_.value(attn_ids_.w_self), params_.value(attn_ids_.w_inter), params_.value(attn_ids_.w_h),
            params_.value(attn_ids_.b_h),    params_.value(attn_ids_.w_t),     params_.value(attn_ids_.b_t),
            params_.value(attn_ids_.w_c),    params_.value(attn_ids_.c_c)};
}

HeadParams<float> Model::head() const { return {params_.value(head_w_), params_.value(head_b_)}; }

nlohmann::json Model::inspect(const data::CandidatePair& pair) const {
    const serializer::SerializedPair sp = serialize(pair);
    const attnet::TokenEmbeddings<float> emb = embed(sp);
    attnet::SimilarityTrace<float> trace;
    const Matrix<float> r = attnet::attribute_similarity_matrix(emb, attention_params(), config_.attention, &trace);

    auto span_tokens = [&](const serializer::TokenSpan& s) {
        std::vector<std::string> out;
        for (std::size_t k = s.begin; k < s.end; ++k) out.push_back(tokenizer_.token(sp.token_ids[k]));
        return out;
    };
    auto names = [](const data::EntityRecord& e) {
        std::vector<std::string> out;
        for (const auto& a : e.attributes) out.push_back(a.name);
        return out;
    };
    // Every (i, j) gets an entry; pairs involving an empty span carry empty
    // arrays and r = 0.
    auto cells = [&](const std::vector<attnet::CellTrace<float>>& traced, const std::vector<serializer::TokenSpan>& src,
                     const std::vector<serializer::TokenSpan>& tgt) {
        nlohmann::json out = nlohmann::json::array();
        std::size_t k = 0;
        for (std::size_t i = 0; i < src.size(); ++i)
            for (std::size_t j = 0; j < tgt.size(); ++j) {
                nlohmann::json c = {{"i", i},
                                    {"j", j},
                                    {"source_tokens", span_tokens(src[i])},
                                    {"target_tokens", span_tokens(tgt[j])}};
                if (k < traced.size() && traced[k].source == i && traced[k].target == j) {
                    const auto& tr = traced[k++];
                    c["alpha"] = matrix_json(tr.alpha);
                    c["alpha_prime"] = tr.alpha_prime;
                    c["beta"] = matrix_json(tr.beta);
                    c["C"] = tr.comparison;
                    c["r"] = tr.r;
                } else {
                    c["alpha"] = c["alpha_prime"] = c["beta"] = c["C"] = nlohmann::json::array();
                    c["r"] = 0.0;
                }
                out.push_back(std::move(c));
            }
        return out;
    };

    nlohmann::json dump = {{"left_attributes", names(pair.left)},
                           {"right_attributes", names(pair.right)},
                           {"m2v_axis", config_.attention.m2v_axis == attnet::M2vAxis::columns ? "columns" : "rows"},
                           {"fuse_directions", config_.attention.fuse_directions},
                           {"truncated", sp.truncated},
                           {"cells", cells(trace.left_to_right, sp.left_spans, sp.right_spans)},
                           {"R_left_to_right", matrix_json(trace.r_left_to_right)},
                           {"R", matrix_json(r)}};
    if (config_.attention.fuse_directions) {
        dump["reverse_cells"] = cells(trace.right_to_left, sp.right_spans, sp.left_spans);
        dump["R_right_to_left"] = matrix_json(trace.r_right_to_left);
    }
    dump["prediction"] = to_json(predict(pair));
    return dump;
}

nlohmann::json to_json(const MatchPrediction& p) {
    return {{"prob_no_match", p.prob_no_match}, {"prob_match", p.prob_match}, {"decision", p.decision}};
}

nlohmann::json to_json(const data::Metrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
            {"tp", m.true_pos},         {"fp", m.false_pos},  {"fn", m.false_neg}};
}

template std::vector<float> summarize_similarity<float>(const Matrix<float>&);
template std::vector<double> summarize_similarity<double>(const Matrix<double>&);
template std::vector<float> fuse_features<float>(std::span<const float>, const Matrix<float>&, FusionStrategy);
template std::vector<double> fuse_features<double>(std::span<const double>, const Matrix<double>&, FusionStrategy);
template Var fuse_features<float>(Tape<float>&, Var, Var, FusionStrategy);
template Var fuse_features<double>(Tape<double>&, Var, Var, FusionStrategy);
template MatchPrediction classify<float>(std::span<const float>, const HeadParams<float>&);
template MatchPrediction classify<double>(std::span<const double>, const HeadParams<double>&);

}  // namespace emcar::matcher
