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
#include <fstream>
#include <random>

#include "emcar/errors.hpp"
#include "emcar/matcher.hpp"
#include "support.hpp"

using namespace emcar;
using matcher::FusionStrategy;

namespace {

serializer::WordPieceTokenizer tokenizer_for(const data::DatasetBundle& b) {
    std::vector<std::string> corpus;
    for (const auto& p : b.pairs)
        for (const auto* e : {&p.left, &p.right})
            for (const auto& a : e->attributes) {
                corpus.push_back(a.name);
                corpus.push_back(a.value);
            }
    return serializer::WordPieceTokenizer::build(corpus, 2000);
}

matcher::ModelConfig tiny_model() {
    matcher::ModelConfig c;
    c.max_seq_len = 96;
    return c;
}

matcher::TrainConfig toy_train(const std::filesystem::path& dir) {
    matcher::TrainConfig c;
    c.max_seq_len = 96;
    c.learning_rate = 1e-3;
    c.batch_size = 20;
    c.epochs = 200;
    c.seed = 3;
    c.checkpoint_dir = dir;
    return c;
}

}  // namespace

TEST_CASE("fusion examples") {
    const std::vector<double> pooled = {0.25, -1.0, 2.0};
    const auto one = matcher::fuse_features<double>(pooled, Matrix<double>(1, 1, {1.0}));
    REQUIRE(one.size() == 7);
    CHECK(one[0] == 0.25);
    CHECK(one[2] == 2.0);
    for (std::size_t k = 3; k < 7; ++k) CHECK(one[k] == doctest::Approx(1.0));

    const auto cross = matcher::fuse_features<double>(pooled, Matrix<double>(2, 2, {0, 1, 1, 0}));
    CHECK(cross[3] == doctest::Approx(1.0));
    CHECK(cross[4] == doctest::Approx(1.0));
    CHECK(cross[5] == doctest::Approx(0.5));
    CHECK(cross[6] == doctest::Approx(1.0));

    CHECK_THROWS_AS(matcher::summarize_similarity(Matrix<double>()), ArgumentError);
}

TEST_CASE("fusion shapes for every strategy") {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 50; ++k) {
        const std::size_t d = 1 + rng() % 10, m = 1 + rng() % 12, n = 1 + rng() % 12;
        const auto r = test::random_matrix(rng, m, n);
        const std::vector<double> pooled(d, 0.5);
        for (auto s : {FusionStrategy::pooled_stats, FusionStrategy::pooled_only, FusionStrategy::padded_matrix}) {
            const auto f = matcher::fuse_features<double>(pooled, r, s);
            CHECK(f.size() == d + matcher::fused_width(s));
        }
        const auto padded = matcher::fuse_features<double>(pooled, r, FusionStrategy::padded_matrix);
        for (std::size_t i = 0; i < matcher::kPaddedSide; ++i)
            for (std::size_t j = 0; j < matcher::kPaddedSide; ++j) {
                const double want = i < m && j < n ? r(i, j) : 0.0;
                CHECK(padded[d + i * matcher::kPaddedSide + j] == want);
            }
    }
    CHECK(matcher::fused_width(FusionStrategy::pooled_stats) == 4);
    CHECK(matcher::fused_width(FusionStrategy::pooled_only) == 0);
    CHECK(matcher::fused_width(FusionStrategy::padded_matrix) == 64);
}

TEST_CASE("tape fusion equals value fusion") {
    std::mt19937_64 rng(2);
    for (auto s : {FusionStrategy::pooled_stats, FusionStrategy::pooled_only, FusionStrategy::padded_matrix}) {
        const auto r = test::random_matrix(rng, 3, 5);
        const auto pooled = test::random_matrix(rng, 1, 6);
        ad::Tape<double> t(false);
        const auto& out = t.value(matcher::fuse_features(t, t.constant(pooled), t.constant(r), s));
        const auto want = matcher::fuse_features<double>(pooled.row(0), r, s);
        REQUIRE(out.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(out[i] == doctest::Approx(want[i]).epsilon(1e-14));
    }
}

TEST_CASE("strategy names") {
    for (auto s : {FusionStrategy::pooled_stats, FusionStrategy::pooled_only, FusionStrategy::padded_matrix})
        CHECK(matcher::parse_fusion_strategy(matcher::to_string(s)) == s);
    CHECK_THROWS_AS(matcher::parse_fusion_strategy("flatten"), ConfigError);
}

TEST_CASE("classifier examples") {
    matcher::HeadParams<double> head{Matrix<double>(3, 2), Matrix<double>(1, 2)};
    const std::vector<double> x = {1, 2, 3};
    auto p = matcher::classify<double>(x, head);
    CHECK(p.prob_no_match == doctest::Approx(0.5));
    CHECK(p.prob_match == doctest::Approx(0.5));
    CHECK(p.decision == 0);

    head.b(0, 1) = 20;
    p = matcher::classify<double>(x, head);
    CHECK(p.prob_match > 0.999);
    CHECK(p.decision == 1);

    const std::vector<double> wrong = {1, 2};
    CHECK_THROWS_AS(matcher::classify<double>(wrong, head), ArgumentError);

    CHECK(matcher::prediction_from_logits(3.5, 3.5).decision == 0);
    CHECK(matcher::prediction_from_logits(0.0, 1e-9).decision == 1);
}

TEST_CASE("classifier normalization") {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 500; ++k) {
        matcher::HeadParams<double> head{test::random_matrix(rng, 5, 2, 10.0), test::random_matrix(rng, 1, 2, 10.0)};
        const auto x = test::random_matrix(rng, 1, 5, 10.0);
        const auto p = matcher::classify<double>(x.row(0), head);
        CHECK(p.prob_no_match >= 0.0);
        CHECK(p.prob_match >= 0.0);
        CHECK(std::abs(p.prob_no_match + p.prob_match - 1.0) <= 1e-6);
        CHECK(p.decision == (p.prob_match > p.prob_no_match ? 1 : 0));
    }
}

TEST_CASE("configuration JSON") {
    matcher::ModelConfig mc;
    mc.fusion = FusionStrategy::padded_matrix;
    mc.attention.m2v_axis = attnet::M2vAxis::rows;
    mc.attention.fuse_directions = false;
    const auto mc2 = matcher::model_config_from_json(matcher::to_json(mc));
    CHECK(mc2.fusion == mc.fusion);
    CHECK(mc2.attention.m2v_axis == mc.attention.m2v_axis);
    CHECK(mc2.attention.fuse_directions == false);
    CHECK(mc2.encoder_preset == "tiny");

    matcher::TrainConfig tc;
    tc.learning_rate = 0.5;
    tc.runs = 2;
    const auto tc2 = matcher::train_config_from_json(matcher::to_json(tc));
    CHECK(tc2.learning_rate == 0.5);
    CHECK(tc2.runs == 2);
    CHECK(matcher::train_config_from_json({{"epochs", "auto"}}).epochs == 0);
    CHECK(matcher::train_config_from_json({{"epochs", 7}}).epochs == 7);
    CHECK(matcher::train_config_from_json({{"seed", 9}}, tc).learning_rate == 0.5);

    CHECK_THROWS_AS(matcher::train_config_from_json({{"learning_rate", 0}}).validate(), ConfigError);
    CHECK_THROWS_AS(matcher::train_config_from_json({{"runs", 0}}).validate(), ConfigError);
    CHECK_THROWS_AS(matcher::train_config_from_json({{"epochs", "many"}}), ConfigError);
    CHECK_THROWS_AS(matcher::model_config_from_json({{"fusion", "mystery"}}), ConfigError);
}

TEST_CASE("epoch rule") {
    CHECK(matcher::epochs_for_size(28707) == 10);
    CHECK(matcher::epochs_for_size(15001) == 10);
    CHECK(matcher::epochs_for_size(15000) == 15);
    CHECK(matcher::epochs_for_size(1000) == 15);
    CHECK(matcher::epochs_for_size(999) == 40);
    CHECK(matcher::epochs_for_size(539) == 40);
}

TEST_CASE("untrained model contracts") {
    const auto data = test::uis_bundle(40, 40, 5);
    matcher::Model model(tiny_model(), tokenizer_for(data), 11);

    SUBCASE("batched and unbatched inference agree") {
        const auto one = model.predict_all(data.pairs, 1);
        const auto many = model.predict_all(data.pairs, 32);
        REQUIRE(one.size() == data.size());
        for (std::size_t i = 0; i < one.size(); ++i) {
            CHECK(one[i].decision == many[i].decision);
            CHECK(one[i].prob_match == doctest::Approx(many[i].prob_match).epsilon(1e-5));
        }
        CHECK_THROWS_AS(model.predict_all(data.pairs, 0), ArgumentError);
    }
    SUBCASE("repeated calls are stable") {
        const auto a = model.predict(data.pairs[3]);
        const auto b = model.predict(data.pairs[3]);
        CHECK(a.prob_match == b.prob_match);
        CHECK(std::abs(a.prob_match + a.prob_no_match - 1.0) <= 1e-6);
    }
    SUBCASE("inspect matches the similarity matrix") {
        const auto& pair = data.pairs[0];
        const auto dump = model.inspect(pair);
        const auto sp = model.serialize(pair);
        const auto r = attnet::attribute_similarity_matrix(model.embed(sp), model.attention_params(),
                                                           model.config().attention);
        const std::size_t m = pair.left.size(), n = pair.right.size();
        REQUIRE(dump["R"].size() == m);
        for (std::size_t i = 0; i < m; ++i) {
            REQUIRE(dump["R"][i].size() == n);
            for (std::size_t j = 0; j < n; ++j) CHECK(dump["R"][i][j].get<float>() == r(i, j));
        }
        CHECK(dump["cells"].size() == m * n);
        for (const auto& c : dump["cells"]) CHECK(c.contains("beta"));
        CHECK(dump["left_attributes"].size() == m);
        CHECK(dump["prediction"].contains("prob_match"));
    }
    SUBCASE("records without attributes are rejected") {
        const auto dir = test::scratch_dir("empty_record");
        matcher::save_checkpoint(dir, model);
        data::EntityRecord empty;
        CHECK_THROWS_AS(matcher::predict_pair(dir, empty, data.pairs[0].right), ArgumentError);
    }
}

TEST_CASE("overfit a 20-pair toy set") {
    const auto data = test::uis_bundle(10, 10, 21);
    REQUIRE(data.size() == 20);
    const auto dir = test::scratch_dir("overfit");
    const auto cfg = toy_train(dir);
    const auto res = matcher::train(cfg, tiny_model(), data, data);
    CHECK(res.steps == 200);
    REQUIRE(res.step_loss.size() == 200);
    CHECK(res.step_loss.back() < res.step_loss.front());
    CHECK(res.best_valid_f1 == 1.0);

    const auto metrics = matcher::evaluate(dir, data);
    CHECK(metrics.f1 == 1.0);
    CHECK(metrics.false_pos == 0);
    CHECK(metrics.false_neg == 0);

    // Positives re-submitted through the single-pair path.
    for (const auto& p : data.pairs)
        if (p.is_positive()) CHECK(matcher::predict_pair(dir, p.left, p.right).decision == 1);

    // Validation selection: the persisted epoch is the first maximum.
    for (double f : res.valid_f1) CHECK(res.best_valid_f1 >= f - 1e-9);
    const auto first = std::find(res.valid_f1.begin(), res.valid_f1.end(), res.best_valid_f1);
    CHECK(res.best_epoch == static_cast<std::size_t>(first - res.valid_f1.begin()) + 1);
    nlohmann::json manifest;
    matcher::load_checkpoint(dir, &manifest);
    CHECK(manifest["epoch"] == res.best_epoch);
    CHECK(manifest["valid_f1"].get<double>() == res.best_valid_f1);
    CHECK(manifest["seed"] == cfg.seed);
}

TEST_CASE("training is deterministic") {
    const auto all = test::uis_bundle(30, 30, 8);
    const auto splits = data::split_dataset(all, 1);
    auto run = [&](const std::string& name) {
        auto cfg = toy_train(test::scratch_dir(name));
        cfg.epochs = 3;
        cfg.batch_size = 8;
        return matcher::train(cfg, tiny_model(), splits.train, splits.valid);
    };
    const auto a = run("det_a"), b = run("det_b");
    CHECK(a.valid_f1 == b.valid_f1);
    CHECK(a.step_loss == b.step_loss);
    std::ifstream wa(test::scratch_dir("det_probe").parent_path() / "emcar_test_det_a" / "weights.bin",
                     std::ios::binary);
    std::ifstream wb(test::scratch_dir("det_probe").parent_path() / "emcar_test_det_b" / "weights.bin",
                     std::ios::binary);
    const std::string sa{std::istreambuf_iterator<char>(wa), {}}, sb{std::istreambuf_iterator<char>(wb), {}};
    CHECK(!sa.empty());
    CHECK(sa == sb);
}

TEST_CASE("checkpoint round trip and corruption") {
    const auto all = test::uis_bundle(20, 20, 4);
    matcher::Model model(tiny_model(), tokenizer_for(all), 9);
    const auto dir = test::scratch_dir("roundtrip");
    matcher::save_checkpoint(dir, model, {{"epoch", 1}});
    const auto before = matcher::evaluate(model, all);
    const auto loaded = matcher::load_checkpoint(dir);
    const auto after = matcher::evaluate(loaded, all);
    CHECK(before.f1 == after.f1);
    CHECK(before.true_pos == after.true_pos);
    CHECK(before.false_pos == after.false_pos);
    const auto p0 = model.predict(all.pairs[0]), p1 = loaded.predict(all.pairs[0]);
    CHECK(p0.prob_match == p1.prob_match);

    SUBCASE("flipped byte") {
        std::fstream f(dir / "weights.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(100);
        f.put('\x7f');
        f.close();
        CHECK_THROWS_AS(matcher::load_checkpoint(dir), CheckpointError);
    }
    SUBCASE("missing weights") {
        std::filesystem::remove(dir / "weights.bin");
        CHECK_THROWS_AS(matcher::load_checkpoint(dir), CheckpointError);
        CHECK_THROWS_AS(matcher::evaluate(dir, all), CheckpointError);
    }
    SUBCASE("manifest from another format") {
        std::ofstream(dir / "manifest.json") << R"({"format": "other"})";
        CHECK_THROWS_AS(matcher::load_checkpoint(dir), CheckpointError);
    }
}

TEST_CASE("training input errors") {
    const auto dir = test::scratch_dir("bad_train");
    data::DatasetBundle empty;
    const auto some = test::uis_bundle(5, 5, 1);
    CHECK_THROWS_AS(matcher::train(toy_train(dir), tiny_model(), empty, some), ArgumentError);
    auto unlabeled = some;
    unlabeled.pairs[0].label.reset();
    CHECK_THROWS_AS(matcher::train(toy_train(dir), tiny_model(), unlabeled, some), ArgumentError);
    auto bad = toy_train(dir);
    bad.learning_rate = std::nan("");
    CHECK_THROWS_AS(matcher::train(bad, tiny_model(), some, some), ConfigError);
}

TEST_CASE("divergence is reported") {
    const auto some = test::uis_bundle(5, 5, 2);
    auto cfg = toy_train(test::scratch_dir("diverge"));
    cfg.learning_rate = 1e30;
    cfg.epochs = 5;
    cfg.batch_size = 2;
    CHECK_THROWS_AS(matcher::train(cfg, tiny_model(), some, some), DivergenceError);
}

TEST_CASE("protocol runs") {
    const auto all = test::uis_bundle(25, 25, 6);
    const auto splits = data::split_dataset(all, 0);
    auto cfg = toy_train(test::scratch_dir("protocol"));
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.runs = 3;
    const auto res = matcher::run_protocol(cfg, tiny_model(), splits);
    REQUIRE(res.runs.size() == 3);
    double mean = 0;
    for (const auto& m : res.runs) mean += m.f1;
    mean /= 3;
    CHECK(res.mean_f1 == doctest::Approx(mean));
    double ss = 0;
    for (const auto& m : res.runs) ss += (m.f1 - mean) * (m.f1 - mean);
    CHECK(res.std_f1 == doctest::Approx(std::sqrt(ss / 2)));
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(res.training[k].seed == cfg.seed + k);
        CHECK(std::filesystem::exists(res.training[k].checkpoint / "weights.bin"));
    }
    const auto j = matcher::to_json(res);
    CHECK(j["runs"].size() == 3);
    CHECK(j.contains("f1_mean"));
    CHECK(j.contains("f1_std"));
    CHECK(j.contains("tp"));
}
