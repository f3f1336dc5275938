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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace emcar::data {

struct Attribute {
    std::string name;
    std::string value;

    friend bool operator==(const Attribute&, const Attribute&) = default;
};

/// An entity in key-value form. Attribute order is significant: it is the
/// order the record is serialized in.
struct EntityRecord {
    std::string id;
    std::vector<Attribute> attributes;

    std::size_t size() const noexcept { return attributes.size(); }
    const Attribute* find(std::string_view name) const noexcept;
    /// Value of `name`; ArgumentError when absent.
    const std::string& value(std::string_view name) const;

    /// Throws SchemaError on an empty or duplicate attribute name.
    void validate() const;

    /// Attribute-wise equality; ids are ignored.
    bool same_content(const EntityRecord& other) const noexcept { return attributes == other.attributes; }

    friend bool operator==(const EntityRecord&, const EntityRecord&) = default;
};

struct CandidatePair {
    EntityRecord left;
    EntityRecord right;
    std::optional<int> label;

    bool is_positive() const noexcept { return label && *label == 1; }
    friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

enum class SplitTag { train, valid, test, unsplit };

std::string_view to_string(SplitTag tag);

struct DatasetBundle {
    std::string name;
    SplitTag split_tag = SplitTag::unsplit;
    std::vector<CandidatePair> pairs;

    std::size_t size() const noexcept { return pairs.size(); }
    std::size_t positives() const noexcept;
    bool fully_labeled() const noexcept;
    std::vector<int> labels() const;
};

struct Metrics {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::size_t true_pos = 0;
    std::size_t false_pos = 0;
    std::size_t false_neg = 0;
};

/// Positive-class precision, recall and F1. Undefined ratios are reported as 0.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels);

// -- Magellan benchmark layout ---------------------------------------------
//
//   <dir>/tableA.csv, <dir>/tableB.csv   entity tables with an `id` column
//   <dir>/train.csv, valid.csv, test.csv  labeled pairs (ltable_id, rtable_id, label)
//   or <dir>/pairs.csv                    a single unsplit pair file

/// Loads every pair file in the directory into one unsplit bundle.
DatasetBundle load_magellan_dataset(const std::filesystem::path& directory);

struct DatasetSplits {
    DatasetBundle train;
    DatasetBundle valid;
    DatasetBundle test;
};

/// The directory's own train/valid/test files, when all three exist.
std::optional<DatasetSplits> load_magellan_splits(const std::filesystem::path& directory);

/// Writes tableA.csv, tableB.csv and pairs.csv. Records are de-duplicated by id.
void write_magellan_dataset(const std::filesystem::path& directory, std::span<const EntityRecord> table_a,
                            std::span<const EntityRecord> table_b, std::span<const CandidatePair> pairs);

/// Stratified 3:1:1 split. Sizes are floor(3k/5), floor(k/5) and the rest.
DatasetSplits split_dataset(const DatasetBundle& bundle, std::uint64_t seed);

/// Replaces `first` and `second` by one attribute `new_name` at the position
/// of `first`, valued `value(first) + " " + value(second)`.
EntityRecord merge_attributes(const EntityRecord& record, std::string_view first, std::string_view second,
                              std::string_view new_name);

// -- UIS-style heterogeneous generator -------------------------------------

struct UisOptions {
    std::uint64_t seed = 0;
    /// Non-matching pairs to emit; positives are one per base record.
    std::size_t negatives = 0;
    /// Per-attribute probability of injecting a typo, abbreviation or blank.
    double corruption_rate = 0.2;
};

struct UisTables {
    std::vector<EntityRecord> table_a;
    std::vector<EntityRecord> table_b;
    std::vector<CandidatePair> pairs;
};

/// Attribute names of the generator's base schema.
inline constexpr std::string_view kUisBaseSchema[] = {"name", "address", "city", "state", "zip"};
inline constexpr std::string_view kUisTableAMerged = "street_city";
inline constexpr std::string_view kUisTableBMerged = "city_state";

/// Table A merges (address, city); table B merges (city, state). Positive
/// pairs link the two derivations of one base record.
UisTables generate_uis_tables(std::span<const EntityRecord> base_records, const UisOptions& options);

/// Deterministic synthetic person records carrying the base schema.
std::vector<EntityRecord> synthesize_people(std::size_t count, std::uint64_t seed);

// -- Synonym negatives -----------------------------------------------------

class SynonymLexicon {
public:
    /// Returns false (and stores nothing) when synonym == term.
    bool add(const std::string& term, const std::string& synonym);
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::map<std::string, std::set<std::string>>& entries() const noexcept { return entries_; }

    /// Two-column CSV (term, synonym), one mapping per line, no header.
    static SynonymLexicon load(const std::filesystem::path& path);

private:
    std::map<std::string, std::set<std::string>> entries_;
};

/// `count` label-0 pairs, each a positive pair with one value on one side
/// rewritten through the lexicon.
std::vector<CandidatePair> synonym_negatives(std::span<const CandidatePair> pairs, const SynonymLexicon& lexicon,
                                             std::size_t count, std::uint64_t seed);

}  // namespace emcar::data
