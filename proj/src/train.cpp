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
#include <new>
#include <numeric>

#include "emcar/matcher.hpp"
#include "random_util.hpp"

namespace emcar::matcher {

using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (batch_size == 0 || min_batch_size == 0) throw ConfigError("batch sizes must be positive");
    if (runs == 0) throw ConfigError("runs must be at least 1");
    if (max_seq_len < serializer::kMinMaxLength)
        throw ConfigError("max_seq_len must be at least " + std::to_string(serializer::kMinMaxLength));
    if (weight_decay < 0 || !(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) ||
        !(adam_eps > 0))
        throw ConfigError("invalid optimizer hyperparameters");
    if (vocab_size < 64) throw ConfigError("vocab_size must be at least 64");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"max_seq_len", c.max_seq_len},
            {"learning_rate", c.learning_rate},
            {"epochs", c.epochs == 0 ? nlohmann::json("auto") : nlohmann::json(c.epochs)},
            {"batch_size", c.batch_size},
            {"min_batch_size", c.min_batch_size},
            {"seed", c.seed},
            {"mixed_precision", c.mixed_precision},
            {"runs", c.runs},
            {"checkpoint_dir", c.checkpoint_dir.string()},
            {"weight_decay", c.weight_decay},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"vocab_size", c.vocab_size},
            {"max_steps", c.max_steps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    try {
        c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        if (j.contains("epochs")) {
            const auto& e = j.at("epochs");
            if (e.is_string()) {
                if (e.get<std::string>() != "auto") throw ConfigError("epochs must be a positive integer or \"auto\"");
                c.epochs = 0;
            } else {
                if (e.get<long long>() < 1) throw ConfigError("epochs must be at least 1");
                c.epochs = e.get<std::size_t>();
            }
        }
        c.batch_size = j.value("batch_size", c.batch_size);
        c.min_batch_size = j.value("min_batch_size", c.min_batch_size);
        c.seed = j.value("seed", c.seed);
        c.mixed_precision = j.value("mixed_precision", c.mixed_precision);
        c.runs = j.value("runs", c.runs);
        if (j.contains("checkpoint_dir")) c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.max_steps = j.value("max_steps", c.max_steps);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t epochs_for_size(std::size_t pairs) {
    if (pairs > 15000) return 10;
    if (pairs >= 1000) return 15;
    return 40;
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {

/// Decoupled weight decay Adam. Decay applies to weight matrices (both
/// dimensions > 1); biases, layer-norm parameters and vectors are exempt.
class AdamW {
public:
    AdamW(const ad::ParameterSet<float>& params, const TrainConfig& c)
        : m_(params.zero_gradients()), v_(params.zero_gradients()), config_(c) {}

    void step(ad::ParameterSet<float>& params, const ad::Gradients<float>& grads, double lr) {
        ++t_;
        const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            Matrix<float>& w = params.value(p);
            const Matrix<float>& g = grads[p];
            if (g.empty()) continue;
            const bool decay = w.rows() > 1 && w.cols() > 1;
            float* m = m_[p].data();
            float* v = v_[p].data();
            float* x = w.data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g[i];
                m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * gi);
                v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * gi * gi);
                double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
                if (decay) update += config_.weight_decay * x[i];
                x[i] = static_cast<float>(x[i] - lr * update);
            }
        }
    }

private:
    ad::Gradients<float> m_, v_;
    const TrainConfig& config_;
    std::size_t t_ = 0;
};

serializer::WordPieceTokenizer fit_tokenizer(const data::DatasetBundle& bundle, std::size_t vocab_size) {
    std::vector<std::string> corpus;
    for (const auto& p : bundle.pairs)
        for (const auto* e : {&p.left, &p.right})
            for (const auto& a : e->attributes) {
                corpus.push_back(a.name);
                corpus.push_back(a.value);
            }
    return serializer::WordPieceTokenizer::build(corpus, vocab_size);
}

void require_labeled(const data::DatasetBundle& b, const char* what) {
    if (b.pairs.empty()) throw ArgumentError(std::string(what) + " set is empty");
    if (!b.fully_labeled()) throw ArgumentError(std::string(what) + " set has unlabeled pairs");
}

}  // namespace

// ---------------------------------------------------------------------------
// Training

TrainResult train(const TrainConfig& config, const ModelConfig& model_config, const data::DatasetBundle& train_set,
                  const data::DatasetBundle& valid_set, const serializer::WordPieceTokenizer* tokenizer) {
    config.validate();
    require_labeled(train_set, "training");
    require_labeled(valid_set, "validation");

    ModelConfig mc = model_config;
    mc.max_seq_len = config.max_seq_len;
    Model model(mc, tokenizer ? *tokenizer : fit_tokenizer(train_set, config.vocab_size), config.seed);

    std::vector<serializer::SerializedPair> encoded;
    std::vector<std::size_t> labels;
    encoded.reserve(train_set.size());
    for (const auto& p : train_set.pairs) {
        encoded.push_back(model.serialize(p));
        labels.push_back(static_cast<std::size_t>(*p.label));
    }

    const std::size_t n = encoded.size();
    const std::size_t epochs = config.epochs ? config.epochs : epochs_for_size(train_set.size() + valid_set.size());
    TrainResult result;
    result.checkpoint = config.checkpoint_dir;
    result.seed = config.seed;
    result.batch_size = std::min(config.batch_size, n);
    auto planned_steps = [&](std::size_t bs, std::size_t done, std::size_t epochs_left, std::size_t pos) {
        const std::size_t per_epoch = (n + bs - 1) / bs;
        std::size_t total = done + epochs_left * per_epoch + (n - pos + bs - 1) / bs;
        if (config.max_steps) total = std::min(total, config.max_steps);
        return std::max<std::size_t>(total, 1);
    };
    std::size_t total_steps = planned_steps(result.batch_size, 0, epochs, n);

    AdamW optimizer(model.parameters(), config);
    detail::Rng rng(config.seed ^ 0xD1B54A32D192ED03ULL);
    std::vector<std::size_t> order(n);
    bool stop = false;
    result.best_valid_f1 = -1;

    for (std::size_t epoch = 1; epoch <= epochs && !stop; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        detail::shuffle(std::span<std::size_t>(order), rng);
        double epoch_loss = 0;
        for (std::size_t pos = 0; pos < n && !stop;) {
            const std::size_t bs = std::min(result.batch_size, n - pos);
            ad::Gradients<float> grads;
            double batch_loss = 0;
            try {
                grads = model.parameters().zero_gradients();
                for (std::size_t k = pos; k < pos + bs; ++k) {
                    Tape<float> t(model.parameters(), &grads);
                    Var loss = ad::cross_entropy(t, model.logits(t, encoded[order[k]]), labels[order[k]]);
                    const double value = t.value(loss)[0];
                    if (!std::isfinite(value)) throw DivergenceError("non-finite training loss", result.steps + 1);
                    batch_loss += value;
                    t.backward(loss);
                }
            } catch (const NumericError& e) {
                throw DivergenceError(std::string("non-finite values in the forward pass: ") + e.what(),
                                      result.steps + 1);
            } catch (const std::bad_alloc&) {
                if (result.batch_size <= config.min_batch_size) throw;
                result.batch_size = std::max(config.min_batch_size, result.batch_size / 2);
                total_steps = planned_steps(result.batch_size, result.steps, epochs - epoch, pos);
                continue;
            }
            const float inv = 1.0f / static_cast<float>(bs);
            for (auto& g : grads)
                for (auto& v : g.values()) v *= inv;
            const double lr = config.learning_rate *
                              std::max(0.0, 1.0 - static_cast<double>(result.steps) / static_cast<double>(total_steps));
            optimizer.step(model.parameters(), grads, lr);
            ++result.steps;
            result.step_loss.push_back(batch_loss / static_cast<double>(bs));
            epoch_loss += batch_loss;
            pos += bs;
            if (config.max_steps && result.steps >= config.max_steps) stop = true;
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(n));

        const double f1 = evaluate(model, valid_set, config.batch_size).f1;
        result.valid_f1.push_back(f1);
        if (f1 > result.best_valid_f1) {
            result.best_valid_f1 = f1;
            result.best_epoch = epoch;
            save_checkpoint(config.checkpoint_dir, model,
                            {{"epoch", epoch},
                             {"valid_f1", f1},
                             {"seed", config.seed},
                             {"steps", result.steps},
                             {"train", to_json(config)}});
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation and inference

data::Metrics evaluate(const Model& model, const data::DatasetBundle& test_set, std::size_t batch_size) {
    require_labeled(test_set, "evaluation");
    const auto predictions = model.predict_all(test_set.pairs, batch_size);
    std::vector<int> decisions;
    decisions.reserve(predictions.size());
    for (const auto& p : predictions) decisions.push_back(p.decision);
    const auto labels = test_set.labels();
    return data::compute_metrics(decisions, labels);
}

data::Metrics evaluate(const std::filesystem::path& checkpoint, const data::DatasetBundle& test_set,
                       std::size_t batch_size) {
    return evaluate(load_checkpoint(checkpoint), test_set, batch_size);
}

MatchPrediction predict_pair(const std::filesystem::path& checkpoint, const data::EntityRecord& left,
                             const data::EntityRecord& right) {
    if (left.attributes.empty() || right.attributes.empty())
        throw ArgumentError("predict_pair: records need at least one attribute");
    return load_checkpoint(checkpoint).predict({left, right, std::nullopt});
}

nlohmann::json inspect_attention(const std::filesystem::path& checkpoint, const data::CandidatePair& pair) {
    return load_checkpoint(checkpoint).inspect(pair);
}

// ---------------------------------------------------------------------------
// Repeated runs

ProtocolResult run_protocol(const TrainConfig& config, const ModelConfig& model_config,
                            const data::DatasetSplits& splits) {
    config.validate();
    require_labeled(splits.test, "test");
    ProtocolResult out;
    for (std::size_t k = 0; k < config.runs; ++k) {
        TrainConfig run = config;
        run.seed = config.seed + k;
        run.checkpoint_dir = config.checkpoint_dir / ("run" + std::to_string(k));
        TrainResult tr = train(run, model_config, splits.train, splits.valid);
        out.runs.push_back(evaluate(tr.checkpoint, splits.test, config.batch_size));
        out.training.push_back(std::move(tr));
    }
    double sum = 0;
    for (const auto& m : out.runs) sum += m.f1;
    out.mean_f1 = sum / static_cast<double>(out.runs.size());
    double var = 0;
    for (const auto& m : out.runs) var += (m.f1 - out.mean_f1) * (m.f1 - out.mean_f1);
    // Sample standard deviation; 0 for a single run.
    out.std_f1 = out.runs.size() > 1 ? std::sqrt(var / static_cast<double>(out.runs.size() - 1)) : 0.0;
    return out;
}

nlohmann::json to_json(const ProtocolResult& r) {
    const double k = static_cast<double>(std::max<std::size_t>(r.runs.size(), 1));
    double precision = 0, recall = 0, tp = 0, fp = 0, fn = 0;
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t i = 0; i < r.runs.size(); ++i) {
        const auto& m = r.runs[i];
        precision += m.precision;
        recall += m.recall;
        tp += static_cast<double>(m.true_pos);
        fp += static_cast<double>(m.false_pos);
        fn += static_cast<double>(m.false_neg);
        nlohmann::json run = to_json(m);
        if (i < r.training.size()) {
            run["seed"] = r.training[i].seed;
            run["checkpoint"] = r.training[i].checkpoint.string();
            run["best_epoch"] = r.training[i].best_epoch;
            run["valid_f1"] = r.training[i].best_valid_f1;
        }
        runs.push_back(std::move(run));
    }
    return {{"precision", precision / k}, {"recall", recall / k}, {"f1", r.mean_f1},
            {"tp", tp / k},               {"fp", fp / k},         {"fn", fn / k},
            {"f1_mean", r.mean_f1},       {"f1_std", r.std_f1},   {"runs", runs}};
}

}  // namespace emcar::matcher
