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

#include <cmath>
#include <numeric>
#include <random>

#include "emcar/encoder.hpp"
#include "emcar/errors.hpp"

using namespace emcar;
using encoder::Encoder;
using encoder::EncoderConfig;

namespace {

EncoderConfig small_config(std::size_t vocab = 40) {
    EncoderConfig c = EncoderConfig::preset("tiny", vocab);
    c.hidden = 8;
    c.heads = 2;
    c.ffn = 16;
    c.layers = 2;
    c.max_positions = 32;
    return c;
}

template <class T>
Matrix<T> run(const Encoder<T>& enc, const ad::ParameterSet<T>& params, const std::vector<std::int32_t>& ids,
              const std::vector<std::int32_t>& seg) {
    ad::Tape<T> t(params, nullptr);
    return t.value(enc.forward(t, ids, seg));
}

}  // namespace

TEST_CASE("presets") {
    const auto tiny = EncoderConfig::preset("tiny", 100);
    CHECK(tiny.hidden == 64);
    CHECK(tiny.layers == 2);
    CHECK(tiny.heads == 4);
    CHECK(tiny.ffn == 256);
    CHECK(tiny.vocab_size == 100);
    const auto base = EncoderConfig::preset("base", 30522);
    CHECK(base.hidden == 768);
    CHECK(base.layers == 12);
    CHECK(base.heads == 12);
    CHECK(base.ffn == 3072);
    CHECK(base.max_positions == 512);
    CHECK_THROWS_AS(EncoderConfig::preset("large", 10), ConfigError);
}

TEST_CASE("config validation and JSON") {
    auto c = small_config();
    CHECK_NOTHROW(c.validate());
    const auto back = encoder::encoder_config_from_json(encoder::to_json(c));
    CHECK(back.hidden == c.hidden);
    CHECK(back.heads == c.heads);
    CHECK(back.vocab_size == c.vocab_size);
    CHECK(back.init_std == c.init_std);

    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.layers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(encoder::encoder_config_from_json(nlohmann::json{{"hidden", "wide"}}), ConfigError);
}

TEST_CASE("forward shape and finiteness") {
    ad::ParameterSet<float> params;
    Encoder<float> enc(small_config(), params, 1);
    std::vector<std::int32_t> ids = {2, 5, 6, 7, 3, 8, 9, 3}, seg = {0, 0, 0, 0, 0, 1, 1, 1};
    const auto h = run(enc, params, ids, seg);
    CHECK(h.rows() == ids.size());
    CHECK(h.cols() == 8);
    CHECK(h.all_finite());
    // Post-LN output rows have zero mean and unit variance.
    for (std::size_t r = 0; r < h.rows(); ++r) {
        double mean = 0, var = 0;
        for (float v : h.row(r)) mean += v;
        mean /= 8;
        for (float v : h.row(r)) var += (v - mean) * (v - mean);
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-4).scale(1));
        CHECK(var / 8 == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("embeddings are contextual") {
    ad::ParameterSet<double> params;
    Encoder<double> enc(small_config(), params, 2);
    std::vector<std::int32_t> a = {2, 5, 6, 3}, b = {2, 5, 9, 3}, seg(4, 0);
    const auto ha = run(enc, params, a, seg), hb = run(enc, params, b, seg);
    // Token 1 is the same id in both inputs; its vector still changes.
    double diff = 0;
    for (std::size_t c = 0; c < 8; ++c) diff += std::abs(ha(1, c) - hb(1, c));
    CHECK(diff > 1e-6);

    std::vector<std::int32_t> seg1 = {0, 0, 1, 1};
    const auto hs = run(enc, params, a, seg1);
    double sdiff = 0;
    for (std::size_t i = 0; i < ha.size(); ++i) sdiff += std::abs(ha[i] - hs[i]);
    CHECK(sdiff > 1e-6);
}

TEST_CASE("same seed, same weights") {
    ad::ParameterSet<float> p1, p2, p3;
    Encoder<float> e1(small_config(), p1, 7), e2(small_config(), p2, 7), e3(small_config(), p3, 8);
    REQUIRE(p1.size() == p2.size());
    bool all_same = true, any_diff = false;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1.name(i) == p2.name(i));
        for (std::size_t k = 0; k < p1.value(i).size(); ++k) {
            all_same = all_same && p1.value(i)[k] == p2.value(i)[k];
            any_diff = any_diff || p1.value(i)[k] != p3.value(i)[k];
        }
    }
    CHECK(all_same);
    CHECK(any_diff);
    CHECK(p1.find("encoder.word_embeddings").has_value());
    CHECK(p1.find("encoder.layer1.query.weight").has_value());
}

TEST_CASE("init statistics") {
    auto c = EncoderConfig::preset("tiny", 500);
    ad::ParameterSet<double> params;
    Encoder<double> enc(c, params, 3);
    const auto& w = params.value(*params.find("encoder.word_embeddings"));
    CHECK(w.rows() == 500);
    CHECK(w.cols() == 64);
    double mean = 0, sq = 0;
    for (double v : w.values()) mean += v;
    mean /= static_cast<double>(w.size());
    for (double v : w.values()) sq += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 0.002);
    CHECK(std::sqrt(sq / static_cast<double>(w.size())) == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("errors") {
    ad::ParameterSet<float> params;
    Encoder<float> enc(small_config(), params, 1);
    ad::Tape<float> t(params, nullptr);
    std::vector<std::int32_t> long_ids(33, 5), long_seg(33, 0);
    CHECK_THROWS_AS(enc.forward(t, long_ids, long_seg), LengthError);
    std::vector<std::int32_t> bad = {2, 400, 3}, seg3(3, 0);
    CHECK_THROWS_AS(enc.forward(t, bad, seg3), ArgumentError);
    std::vector<std::int32_t> seg2(2, 0);
    CHECK_THROWS_AS(enc.forward(t, bad, seg2), ArgumentError);
    CHECK_THROWS_AS(enc.forward(t, {}, {}), ArgumentError);
}

TEST_CASE("gradients match finite differences") {
    ad::ParameterSet<double> params;
    auto cfg = small_config(12);
    cfg.init_std = 0.5;  // larger weights make every path matter
    Encoder<double> enc(cfg, params, 5);
    std::vector<std::int32_t> ids = {2, 5, 6, 3, 7, 3}, seg = {0, 0, 0, 0, 1, 1};
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 1);
    Matrix<double> probe(ids.size(), cfg.hidden);
    for (auto& v : probe.values()) v = n(rng);

    auto loss = [&] {
        const auto h = run(enc, params, ids, seg);
        double s = 0;
        for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * probe[i];
        return s;
    };
    auto grads = params.zero_gradients();
    {
        ad::Tape<double> t(params, &grads);
        ad::Var h = enc.forward(t, ids, seg);
        t.backward(ad::sum_all(t, ad::mul(t, h, t.constant(probe))));
    }
    for (std::size_t id = 0; id < params.size(); ++id) {
        auto& w = params.value(id);
        const auto& g = grads[id];
        double diff = 0, norm = 0;
        // A handful of entries per tensor keeps the check quick.
        for (std::size_t k = 0; k < std::min<std::size_t>(w.size(), 6); ++k) {
            const std::size_t i = (k * 7919) % w.size();
            const double keep = w[i];
            w[i] = keep + 1e-6;
            const double up = loss();
            w[i] = keep - 1e-6;
            const double down = loss();
            w[i] = keep;
            const double num = (up - down) / 2e-6;
            const double ana = g.empty() ? 0.0 : g[i];
            diff += (num - ana) * (num - ana);
            norm += std::max(num * num, ana * ana);
        }
        INFO(params.name(id));
        CHECK(std::sqrt(diff) <= 1e-4 * std::max(std::sqrt(norm), 1e-3));
    }
}

TEST_CASE("embed_tokens packages spans and the pooled row") {
    const std::vector<std::string> corpus = {"name", "alpha beta", "city", "gamma"};
    const auto tok = serializer::WordPieceTokenizer::build(corpus, 200);
    data::CandidatePair pair;
    pair.left.attributes = {{"name", "alpha beta"}, {"city", "gamma"}};
    pair.right.attributes = {{"name", "alpha"}};
    const auto sp = serializer::tokenize_with_spans(pair, tok, 32);
    auto cfg = small_config(tok.vocab_size());
    ad::ParameterSet<float> params;
    Encoder<float> enc(cfg, params, 4);
    const auto e = encoder::embed_tokens(enc, params, sp);
    CHECK(e.vectors.rows() == sp.token_ids.size());
    CHECK(e.left_spans == sp.left_spans);
    CHECK(e.right_spans == sp.right_spans);
    REQUIRE(e.pooled.size() == 8);
    for (std::size_t c = 0; c < 8; ++c) CHECK(e.pooled[c] == e.vectors(0, c));

    serializer::SerializedPair tiny;
    tiny.token_ids = {tok.cls_id(), tok.sep_id()};
    CHECK_THROWS_AS(encoder::embed_tokens(enc, params, tiny), ArgumentError);
}
