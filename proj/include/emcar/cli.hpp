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

// Command implementations behind the `emcar` executable. Each returns the
// process exit code: 0 on success, 2 when the request is rejected before any
// work (bad configuration, missing or empty dataset), 1 on runtime failures.
//
// Run configuration (JSON):
//
//   {
//     "dataset": "<magellan dir>"
//              | {"generator": "uis", "pairs": N, "positives": P, "seed": S,
//                 "corruption_rate": 0.2, "base_records": "<csv>",
//                 "lexicon": "<csv>", "synonym_negatives": K},
//     "model":  { ModelConfig fields },
//     "train":  { TrainConfig fields },
//     "output_dir": "<dir>"
//   }

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emcar/data.hpp"
#include "emcar/matcher.hpp"

namespace emcar::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitInvalid = 2;

struct Options {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> runs;
    std::filesystem::path checkpoint;
    std::filesystem::path out;
    /// JSON-lines pair file for predict and inspect.
    std::filesystem::path pairs;
};

struct GeneratorSpec {
    std::size_t pairs = 0;
    std::size_t positives = 0;
    std::uint64_t seed = 0;
    double corruption_rate = 0.2;
    std::filesystem::path base_records;
    std::filesystem::path lexicon;
    std::size_t synonym_negatives = 0;
};

struct RunConfig {
    std::optional<std::filesystem::path> dataset_path;
    std::optional<GeneratorSpec> generator;
    matcher::ModelConfig model;
    matcher::TrainConfig train;
    std::filesystem::path output_dir = "emcar_out";
};

/// ConfigError on malformed input. Command-line overrides are applied by the
/// commands, not here.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Tables and pairs of a generator spec (UIS layout plus optional synonym
/// negatives). GenerationError / SchemaError on impossible requests.
data::UisTables generate_dataset(const GeneratorSpec& spec);

/// One pair per non-blank line: {"left": E, "right": E, "label"?: 0|1} where
/// E is an object of attribute values (key order kept) or an array of
/// [name, value] pairs, optionally wrapped as {"id": ..., "attributes": ...}.
std::vector<data::CandidatePair> read_pair_file(const std::filesystem::path& path);
data::CandidatePair pair_from_json(const nlohmann::ordered_json& j);

int cmd_gen(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_train(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_predict(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_inspect(const Options& opt, std::ostream& out, std::ostream& err);

/// Parses argv with CLI11 and dispatches.
int run(int argc, char** argv);

}  // namespace emcar::cli
