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

#include "emcar/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include "emcar/csv.hpp"
#include "emcar/errors.hpp"
#include "random_util.hpp"

namespace emcar::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Records

const Attribute* EntityRecord::find(std::string_view name) const noexcept {
    for (const auto& a : attributes)
        if (a.name == name) return &a;
    return nullptr;
}

const std::string& EntityRecord::value(std::string_view name) const {
    const Attribute* a = find(name);
    if (!a) throw ArgumentError("record '" + id + "' has no attribute '" + std::string(name) + "'");
    return a->value;
}

void EntityRecord::validate() const {
    std::set<std::string_view> seen;
    for (const auto& a : attributes) {
        if (a.name.empty()) throw SchemaError("record '" + id + "' has an empty attribute name");
        if (!seen.insert(a.name).second)
            throw SchemaError("record '" + id + "' repeats attribute '" + a.name + "'");
    }
}

std::string_view to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::train:
            return "train";
        case SplitTag::valid:
            return "valid";
        case SplitTag::test:
            return "test";
        case SplitTag::unsplit:
            return "unsplit";
    }
    return "unsplit";
}

std::size_t DatasetBundle::positives() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(pairs.begin(), pairs.end(), [](const CandidatePair& p) { return p.is_positive(); }));
}

bool DatasetBundle::fully_labeled() const noexcept {
    return std::all_of(pairs.begin(), pairs.end(), [](const CandidatePair& p) { return p.label.has_value(); });
}

std::vector<int> DatasetBundle::labels() const {
    std::vector<int> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (!p.label) throw ArgumentError("bundle '" + name + "' contains an unlabeled pair");
        out.push_back(*p.label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw ArgumentError("compute_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                            std::to_string(labels.size()) + " labels");
    if (predictions.empty()) throw ArgumentError("compute_metrics: empty input");
    Metrics m;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int p = predictions[i], y = labels[i];
        if ((p != 0 && p != 1) || (y != 0 && y != 1))
            throw ArgumentError("compute_metrics: values must be 0 or 1 (index " + std::to_string(i) + ")");
        if (p == 1 && y == 1) ++m.true_pos;
        if (p == 1 && y == 0) ++m.false_pos;
        if (p == 0 && y == 1) ++m.false_neg;
    }
    const double tp = static_cast<double>(m.true_pos);
    if (m.true_pos + m.false_pos > 0) m.precision = tp / static_cast<double>(m.true_pos + m.false_pos);
    if (m.true_pos + m.false_neg > 0) m.recall = tp / static_cast<double>(m.true_pos + m.false_neg);
    if (m.precision + m.recall > 0) m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

// ---------------------------------------------------------------------------
// Magellan layout

namespace {

using Table = std::unordered_map<std::string, EntityRecord>;

Table load_entity_table(const fs::path& path) {
    if (!fs::exists(path)) throw LoadError("missing file: " + path.string());
    const csv::Table raw = csv::read_file(path);
    const int id_col = raw.column("id");
    if (id_col < 0) throw FormatError(path.string() + ": no 'id' column");
    Table table;
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const auto& row = raw.rows[r];
        EntityRecord rec;
        rec.id = static_cast<std::size_t>(id_col) < row.size() ? row[id_col] : std::string();
        for (std::size_t c = 0; c < raw.header.size(); ++c) {
            if (static_cast<int>(c) == id_col) continue;
            rec.attributes.push_back({raw.header[c], c < row.size() ? row[c] : std::string()});
        }
        rec.validate();
        if (!table.emplace(rec.id, rec).second)
            throw IntegrityError(path.string() + ": duplicate id '" + rec.id + "' on data row " +
                                 std::to_string(r + 1));
    }
    return table;
}

int parse_label(std::string s, const fs::path& path, std::size_t row) {
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw FormatError(path.string() + ": non-binary label '" + s + "' on data row " + std::to_string(row));
}

std::vector<CandidatePair> load_pairs(const fs::path& path, const Table& left, const Table& right) {
    if (!fs::exists(path)) throw LoadError("missing file: " + path.string());
    const csv::Table raw = csv::read_file(path);
    std::vector<CandidatePair> pairs;
    if (raw.header.empty()) return pairs;
    const int lc = raw.column("ltable_id"), rc = raw.column("rtable_id"), yc = raw.column("label");
    if (lc < 0 || rc < 0 || yc < 0)
        throw FormatError(path.string() + ": pair file needs ltable_id, rtable_id and label columns");
    pairs.reserve(raw.rows.size());
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const auto& row = raw.rows[r];
        auto cell = [&](int c) { return static_cast<std::size_t>(c) < row.size() ? row[c] : std::string(); };
        const auto li = left.find(cell(lc));
        const auto ri = right.find(cell(rc));
        if (li == left.end() || ri == right.end()) {
            const bool bad_left = li == left.end();
            throw IntegrityError(path.string() + ": data row " + std::to_string(r + 1) + " references unknown " +
                                 (bad_left ? "ltable_id '" + cell(lc) : "rtable_id '" + cell(rc)) + "'");
        }
        pairs.push_back({li->second, ri->second, parse_label(cell(yc), path, r + 1)});
    }
    return pairs;
}

constexpr const char* kSplitFiles[] = {"train.csv", "valid.csv", "test.csv"};

std::string bundle_name(const fs::path& dir) {
    auto name = dir.filename().string();
    if (name.empty()) name = dir.parent_path().filename().string();
    return name;
}

}  // namespace

DatasetBundle load_magellan_dataset(const fs::path& directory) {
    if (!fs::is_directory(directory)) throw LoadError("missing directory: " + directory.string());
    const Table left = load_entity_table(directory / "tableA.csv");
    const Table right = load_entity_table(directory / "tableB.csv");

    std::vector<fs::path> pair_files;
    for (const char* f : kSplitFiles)
        if (fs::exists(directory / f)) pair_files.push_back(directory / f);
    if (fs::exists(directory / "pairs.csv")) pair_files.push_back(directory / "pairs.csv");
    if (pair_files.empty())
        throw LoadError("missing file: " + (directory / "pairs.csv").string() +
                        " (or train.csv/valid.csv/test.csv)");

    DatasetBundle bundle{bundle_name(directory), SplitTag::unsplit, {}};
    for (const auto& f : pair_files) {
        auto pairs = load_pairs(f, left, right);
        bundle.pairs.insert(bundle.pairs.end(), std::make_move_iterator(pairs.begin()),
                            std::make_move_iterator(pairs.end()));
    }
    return bundle;
}

std::optional<DatasetSplits> load_magellan_splits(const fs::path& directory) {
    for (const char* f : kSplitFiles)
        if (!fs::exists(directory / f)) return std::nullopt;
    const Table left = load_entity_table(directory / "tableA.csv");
    const Table right = load_entity_table(directory / "tableB.csv");
    const std::string name = bundle_name(directory);
    return DatasetSplits{
        {name, SplitTag::train, load_pairs(directory / "train.csv", left, right)},
        {name, SplitTag::valid, load_pairs(directory / "valid.csv", left, right)},
        {name, SplitTag::test, load_pairs(directory / "test.csv", left, right)},
    };
}

namespace {

void write_table(const fs::path& path, const std::vector<const EntityRecord*>& records) {
    std::vector<std::string> columns;
    for (const auto* rec : records)
        for (const auto& a : rec->attributes)
            if (std::find(columns.begin(), columns.end(), a.name) == columns.end()) columns.push_back(a.name);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    csv::Row header{"id"};
    header.insert(header.end(), columns.begin(), columns.end());
    csv::write_row(out, header);
    for (const auto* rec : records) {
        csv::Row row{rec->id};
        for (const auto& c : columns) {
            const Attribute* a = rec->find(c);
            row.push_back(a ? a->value : std::string());
        }
        csv::write_row(out, row);
    }
}

std::vector<const EntityRecord*> collect(std::span<const EntityRecord> table, std::span<const CandidatePair> pairs,
                                         bool left_side) {
    std::vector<const EntityRecord*> out;
    std::unordered_map<std::string_view, const EntityRecord*> seen;
    auto take = [&](const EntityRecord& r) {
        auto [it, inserted] = seen.emplace(r.id, &r);
        if (inserted) {
            out.push_back(&r);
        } else if (!it->second->same_content(r)) {
            throw IntegrityError("two different records share id '" + r.id + "'");
        }
    };
    for (const auto& r : table) take(r);
    for (const auto& p : pairs) take(left_side ? p.left : p.right);
    return out;
}

}  // namespace

void write_magellan_dataset(const fs::path& directory, std::span<const EntityRecord> table_a,
                            std::span<const EntityRecord> table_b, std::span<const CandidatePair> pairs) {
    fs::create_directories(directory);
    write_table(directory / "tableA.csv", collect(table_a, pairs, true));
    write_table(directory / "tableB.csv", collect(table_b, pairs, false));
    std::ofstream out(directory / "pairs.csv", std::ios::binary);
    if (!out) throw LoadError("cannot write " + (directory / "pairs.csv").string());
    csv::write_row(out, {"ltable_id", "rtable_id", "label"});
    for (const auto& p : pairs) {
        if (!p.label) throw ArgumentError("write_magellan_dataset: unlabeled pair");
        csv::write_row(out, {p.left.id, p.right.id, std::to_string(*p.label)});
    }
}

// ---------------------------------------------------------------------------
// Split

DatasetSplits split_dataset(const DatasetBundle& bundle, std::uint64_t seed) {
    const std::size_t k = bundle.size();
    if (k < 5) throw SplitError("split_dataset: need at least 5 pairs, got " + std::to_string(k));
    if (!bundle.fully_labeled()) throw SplitError("split_dataset: bundle contains unlabeled pairs");

    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < k; ++i) (bundle.pairs[i].is_positive() ? pos : neg).push_back(i);
    detail::Rng rng(seed);
    detail::shuffle(std::span(pos), rng);
    detail::shuffle(std::span(neg), rng);

    // Interleave the classes by relative rank so that every contiguous block
    // carries (up to one item per class) the global positive rate.
    struct Slot {
        double key;
        int cls;
        std::size_t index;
    };
    std::vector<Slot> order;
    order.reserve(k);
    for (std::size_t i = 0; i < pos.size(); ++i)
        order.push_back({(static_cast<double>(i) + 0.5) / static_cast<double>(pos.size()), 1, pos[i]});
    for (std::size_t i = 0; i < neg.size(); ++i)
        order.push_back({(static_cast<double>(i) + 0.5) / static_cast<double>(neg.size()), 0, neg[i]});
    std::sort(order.begin(), order.end(), [](const Slot& a, const Slot& b) {
        if (a.key != b.key) return a.key < b.key;
        return a.cls < b.cls;
    });

    const std::size_t n_train = 3 * k / 5;
    const std::size_t n_valid = k / 5;
    DatasetSplits out{{bundle.name, SplitTag::train, {}},
                      {bundle.name, SplitTag::valid, {}},
                      {bundle.name, SplitTag::test, {}}};
    out.train.pairs.reserve(n_train);
    out.valid.pairs.reserve(n_valid);
    out.test.pairs.reserve(k - n_train - n_valid);
    for (std::size_t i = 0; i < k; ++i) {
        auto& dst = i < n_train ? out.train : (i < n_train + n_valid ? out.valid : out.test);
        dst.pairs.push_back(bundle.pairs[order[i].index]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attribute merging

EntityRecord merge_attributes(const EntityRecord& record, std::string_view first, std::string_view second,
                              std::string_view new_name) {
    if (first == second) throw ArgumentError("merge_attributes: cannot merge '" + std::string(first) + "' with itself");
    if (new_name.empty()) throw ArgumentError("merge_attributes: empty new attribute name");
    const Attribute* a = record.find(first);
    const Attribute* b = record.find(second);
    if (!a) throw ArgumentError("merge_attributes: record '" + record.id + "' lacks '" + std::string(first) + "'");
    if (!b) throw ArgumentError("merge_attributes: record '" + record.id + "' lacks '" + std::string(second) + "'");
    EntityRecord out{record.id, {}};
    out.attributes.reserve(record.size() - 1);
    for (const auto& attr : record.attributes) {
        if (attr.name == first) {
            out.attributes.push_back({std::string(new_name), a->value + " " + b->value});
        } else if (attr.name != second) {
            if (attr.name == new_name)
                throw ArgumentError("merge_attributes: '" + std::string(new_name) + "' already names another attribute");
            out.attributes.push_back(attr);
        }
    }
    return out;
}

}  // namespace emcar::data
