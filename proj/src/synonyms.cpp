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

#include <cctype>
#include <unordered_set>

#include "emcar/csv.hpp"
#include "emcar/data.hpp"
#include "emcar/errors.hpp"
#include "random_util.hpp"

namespace emcar::data {

bool SynonymLexicon::add(const std::string& term, const std::string& synonym) {
    if (term.empty() || synonym.empty() || term == synonym) return false;
    entries_[term].insert(synonym);
    return true;
}

SynonymLexicon SynonymLexicon::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw LoadError("missing file: " + path.string());
    const csv::Table table = csv::read_file(path);
    SynonymLexicon lex;
    std::vector<csv::Row> rows;
    if (!table.header.empty()) rows.push_back(table.header);
    rows.insert(rows.end(), table.rows.begin(), table.rows.end());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != 2)
            throw FormatError(path.string() + ": line " + std::to_string(i + 1) + " must have exactly two columns");
        lex.add(rows[i][0], rows[i][1]);
    }
    return lex;
}

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

bool has_non_ascii(const std::string& s) {
    for (unsigned char c : s)
        if (c >= 0x80) return true;
    return false;
}

// Occurrences of `term` in `value`. ASCII terms must sit on word boundaries;
// terms containing non-ASCII text (e.g. CJK) match anywhere.
std::vector<std::size_t> occurrences(const std::string& value, const std::string& term) {
    std::vector<std::size_t> out;
    const bool anywhere = has_non_ascii(term);
    for (std::size_t pos = value.find(term); pos != std::string::npos; pos = value.find(term, pos + 1)) {
        if (!anywhere) {
            const bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(value[pos - 1]));
            const std::size_t end = pos + term.size();
            const bool right_ok = end == value.size() || !is_word_char(static_cast<unsigned char>(value[end]));
            if (!left_ok || !right_ok) continue;
        }
        out.push_back(pos);
    }
    return out;
}

std::string content_key(const CandidatePair& p) {
    std::string key;
    for (const auto* rec : {&p.left, &p.right}) {
        for (const auto& a : rec->attributes) {
            key += a.name;
            key += '\x1f';
            key += a.value;
            key += '\x1e';
        }
        key += '\x1d';
    }
    return key;
}

struct Candidate {
    std::size_t pair;
    bool right_side;
    std::size_t attribute;
    std::size_t position;
    std::size_t length;
    const std::string* replacement;
};

}  // namespace

std::vector<CandidatePair> synonym_negatives(std::span<const CandidatePair> pairs, const SynonymLexicon& lexicon,
                                             std::size_t count, std::uint64_t seed) {
    if (count == 0) return {};
    if (lexicon.empty()) throw GenerationError("synonym_negatives: lexicon is empty");

    std::unordered_set<std::string> positive_keys;
    for (const auto& p : pairs)
        if (p.is_positive()) positive_keys.insert(content_key(p));
    if (positive_keys.empty()) throw GenerationError("synonym_negatives: no positive pair to derive from");

    auto apply = [&](const Candidate& c) {
        CandidatePair out = pairs[c.pair];
        EntityRecord& rec = c.right_side ? out.right : out.left;
        rec.attributes[c.attribute].value.replace(c.position, c.length, *c.replacement);
        out.label = 0;
        return out;
    };

    std::vector<Candidate> candidates;
    std::unordered_set<std::string> seen;
    bool covered = false;
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        if (!pairs[pi].is_positive()) continue;
        for (bool right : {false, true}) {
            const EntityRecord& rec = right ? pairs[pi].right : pairs[pi].left;
            for (std::size_t ai = 0; ai < rec.attributes.size(); ++ai) {
                const std::string& value = rec.attributes[ai].value;
                for (const auto& [term, synonyms] : lexicon.entries()) {
                    for (std::size_t pos : occurrences(value, term)) {
                        covered = true;
                        for (const auto& syn : synonyms) {
                            Candidate c{pi, right, ai, pos, term.size(), &syn};
                            std::string key = content_key(apply(c));
                            // Collisions with a known match would relabel a positive.
                            if (positive_keys.count(key) || !seen.insert(std::move(key)).second) continue;
                            candidates.push_back(c);
                        }
                    }
                }
            }
        }
    }
    if (!covered) throw GenerationError("synonym_negatives: no positive pair has a value covered by the lexicon");
    if (count > candidates.size())
        throw GenerationError("synonym_negatives: requested " + std::to_string(count) +
                              " negatives but at most " + std::to_string(candidates.size()) +
                              " distinct ones can be produced");

    detail::Rng rng(seed);
    detail::shuffle(std::span(candidates), rng);
    std::vector<CandidatePair> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        CandidatePair p = apply(candidates[k]);
        EntityRecord& rec = candidates[k].right_side ? p.right : p.left;
        rec.id += "#syn" + std::to_string(k);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace emcar::data
