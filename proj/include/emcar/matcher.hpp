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

// Match classifier on top of the encoder and the attribute-association
// network: feature fusion, the linear softmax head, training with
// validation-based checkpoint selection, evaluation, prediction and attention
// dumps.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emcar/attnet.hpp"
#include "emcar/autograd.hpp"
#include "emcar/data.hpp"
#include "emcar/encoder.hpp"
#include "emcar/serializer.hpp"

namespace emcar::matcher {

// ---------------------------------------------------------------------------
// Fusion and classification

/// How R enters the head. pooled_stats appends four summary statistics of R,
/// pooled_only ignores R, padded_matrix appends R zero-padded (or cropped) to
/// kPaddedSide x kPaddedSide in row-major order.
enum class FusionStrategy { pooled_stats, pooled_only, padded_matrix };

inline constexpr std::size_t kSummaryWidth = 4;
inline constexpr std::size_t kPaddedSide = 8;

std::string_view to_string(FusionStrategy s);
/// ConfigError on an unknown name.
FusionStrategy parse_fusion_strategy(std::string_view name);
/// Width q of the R-derived part of the features.
std::size_t fused_width(FusionStrategy s);

/// [mean_i max_j R, mean_j max_i R, mean R, max R]. ArgumentError on empty R.
template <class T>
std::vector<T> summarize_similarity(const Matrix<T>& r);

/// concat(pooled, f(R)) with f chosen by `strategy`; length d + fused_width.
template <class T>
std::vector<T> fuse_features(std::span<const T> pooled, const Matrix<T>& r,
                             FusionStrategy strategy = FusionStrategy::pooled_stats);

/// Tape form of fuse_features; `pooled` is 1 x d, the result 1 x (d + q).
template <class T>
ad::Var fuse_features(ad::Tape<T>& t, ad::Var pooled, ad::Var r, FusionStrategy strategy);

struct MatchPrediction {
    double prob_no_match = 0.5;
    double prob_match = 0.5;
    int decision = 0;
};

template <class T>
struct HeadParams {
    Matrix<T> w;  // (d + q) x 2
    Matrix<T> b;  // 1 x 2
};

/// softmax(features * W + b); decision is the argmax, 0 on a tie.
/// ArgumentError on a width mismatch.
template <class T>
MatchPrediction classify(std::span<const T> features, const HeadParams<T>& head);

/// Prediction from a 1 x 2 logit row, with the same tie rule.
MatchPrediction prediction_from_logits(double logit_no_match, double logit_match);

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
    std::string encoder_preset = "tiny";
    encoder::EncoderConfig encoder;  // vocab_size filled from the tokenizer
    attnet::Options attention;
    FusionStrategy fusion = FusionStrategy::pooled_stats;
    std::size_t max_seq_len = serializer::kDefaultMaxLength;
    double gate_bias = -2.0;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Intermediates of one forward pass, for diagnostics.
struct ForwardTrace {
    serializer::SerializedPair serialized;
    attnet::SimilarityTrace<float> similarity;
    std::vector<float> features;
};

/// Encoder, attention parameters and head in one parameter set (fp32).
/// Inference methods are const and safe for concurrent callers.
class Model {
public:
    Model(ModelConfig config, serializer::WordPieceTokenizer tokenizer, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    const serializer::WordPieceTokenizer& tokenizer() const noexcept { return tokenizer_; }
    ad::ParameterSet<float>& parameters() noexcept { return params_; }
    const ad::ParameterSet<float>& parameters() const noexcept { return params_; }
    const encoder::Encoder<float>& encoder() const noexcept { return *encoder_; }

    serializer::SerializedPair serialize(const data::CandidatePair& pair) const;

    /// 1 x 2 logits of one pair on `t`. The tape must be bound to parameters().
    ad::Var logits(ad::Tape<float>& t, const serializer::SerializedPair& sp, ForwardTrace* trace = nullptr) const;

    MatchPrediction predict(const data::CandidatePair& pair) const;
    /// Pair-at-a-time results in input order, processed `batch_size` at a time.
    std::vector<MatchPrediction> predict_all(std::span<const data::CandidatePair> pairs,
                                             std::size_t batch_size = 32) const;

    attnet::TokenEmbeddings<float> embed(const serializer::SerializedPair& sp) const;
    attnet::AttentionParams<float> attention_params() const;
    HeadParams<float> head() const;

    /// Per-cell alpha, alpha', beta, C and r for both directions, the token
    /// strings of every span, R and the prediction.
    nlohmann::json inspect(const data::CandidatePair& pair) const;

private:
    ModelConfig config_;
    serializer::WordPieceTokenizer tokenizer_;
    ad::ParameterSet<float> params_;
    std::unique_ptr<encoder::Encoder<float>> encoder_;
    attnet::AttentionParamIds attn_ids_{};
    std::size_t head_w_ = 0, head_b_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints
//
//   <dir>/manifest.json  configuration echo, epoch, validation F1, seed, CRC32
//   <dir>/vocab.txt      tokenizer vocabulary
//   <dir>/weights.bin    "EMCARW01", tensor count, then per tensor its name,
//                        rows, cols and little-endian fp32 values

/// Writes the three files; `extra` is merged into the manifest.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const nlohmann::json& extra = {});
/// CheckpointError on missing files, checksum mismatch or inconsistent tensors.
Model load_checkpoint(const std::filesystem::path& dir, nlohmann::json* manifest = nullptr);

// ---------------------------------------------------------------------------
// Training and evaluation

struct TrainConfig {
    std::size_t max_seq_len = serializer::kDefaultMaxLength;
    double learning_rate = 3e-5;
    /// 0 selects epochs_for_size() of train + valid.
    std::size_t epochs = 0;
    std::size_t batch_size = 32;
    std::size_t min_batch_size = 8;
    std::uint64_t seed = 0;
    /// Accepted for configuration compatibility; the CPU path always runs fp32.
    bool mixed_precision = false;
    std::size_t runs = 6;
    std::filesystem::path checkpoint_dir = "checkpoint";
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t vocab_size = 8000;
    /// Stop after this many optimizer steps (0 = no limit).
    std::size_t max_steps = 0;

    /// ConfigError unless learning_rate > 0, batch sizes >= 1 and runs >= 1.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Fields absent from `j` keep the values of `base`. "epochs" may be "auto".
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// 10 above 15000 pairs, 15 from 1000 to 15000, 40 below 1000.
std::size_t epochs_for_size(std::size_t pairs);

struct TrainResult {
    std::filesystem::path checkpoint;
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;  // 1-based
    double best_valid_f1 = 0;
    std::vector<double> valid_f1;    // per epoch
    std::vector<double> epoch_loss;  // mean training loss per epoch
    std::vector<double> step_loss;   // mean minibatch loss per optimizer step
    std::size_t steps = 0;
    std::size_t batch_size = 0;  // after any memory-driven reduction
};

/// Builds a vocabulary from the training texts unless `tokenizer` is given,
/// trains with AdamW and linear decay, evaluates on `valid` after every epoch
/// and persists the best epoch to config.checkpoint_dir.
/// ArgumentError on an empty or unlabeled training set; DivergenceError on a
/// non-finite loss.
TrainResult train(const TrainConfig& config, const ModelConfig& model_config, const data::DatasetBundle& train_set,
                  const data::DatasetBundle& valid_set, const serializer::WordPieceTokenizer* tokenizer = nullptr);

data::Metrics evaluate(const Model& model, const data::DatasetBundle& test_set, std::size_t batch_size = 32);
data::Metrics evaluate(const std::filesystem::path& checkpoint, const data::DatasetBundle& test_set,
                       std::size_t batch_size = 32);

MatchPrediction predict_pair(const std::filesystem::path& checkpoint, const data::EntityRecord& left,
                             const data::EntityRecord& right);

nlohmann::json inspect_attention(const std::filesystem::path& checkpoint, const data::CandidatePair& pair);

// ---------------------------------------------------------------------------
// Repeated-run protocol

struct ProtocolResult {
    std::vector<data::Metrics> runs;
    std::vector<TrainResult> training;
    double mean_f1 = 0;
    double std_f1 = 0;
};

/// `config.runs` trainings with seeds config.seed + k, each evaluated on
/// `splits.test`; run k checkpoints to <checkpoint_dir>/run<k>.
ProtocolResult run_protocol(const TrainConfig& config, const ModelConfig& model_config,
                            const data::DatasetSplits& splits);

nlohmann::json to_json(const data::Metrics& m);
nlohmann::json to_json(const MatchPrediction& p);
/// {precision, recall, f1, tp, fp, fn} of the mean, plus runs, f1_mean, f1_std.
nlohmann::json to_json(const ProtocolResult& r);

}  // namespace emcar::matcher
