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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "emcar/data.hpp"
#include "emcar/matrix.hpp"

namespace emcar::test {

inline Matrix<double> random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix<double> m(r, c);
    for (auto& v : m.values()) v = dist(rng);
    return m;
}

template <class T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - b[i]));
    return d;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("emcar_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Generated heterogeneous pairs: one positive per synthesized record plus
/// `negatives` non-matches.
inline data::DatasetBundle uis_bundle(std::size_t records, std::size_t negatives, std::uint64_t seed,
                                      double corruption_rate = 0.2) {
    data::UisOptions opt;
    opt.seed = seed;
    opt.negatives = negatives;
    opt.corruption_rate = corruption_rate;
    data::DatasetBundle b;
    b.name = "uis";
    b.pairs = data::generate_uis_tables(data::synthesize_people(records, seed), opt).pairs;
    return b;
}

}  // namespace emcar::test
