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

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "emcar/data.hpp"
#include "emcar/errors.hpp"

namespace emcar::serializer {

inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kMask = "[MASK]";
inline constexpr std::string_view kCol = "[COL]";
inline constexpr std::string_view kVal = "[VAL]";

inline constexpr std::size_t kDefaultMaxLength = 256;
inline constexpr std::size_t kMinMaxLength = 16;

/// Uncased WordPiece tokenizer. Basic tokenization lowercases ASCII, splits on
/// whitespace and punctuation and isolates CJK ideographs; each word is then
/// split greedily into the longest vocabulary pieces ("##" marks
/// continuations). [COL] and [VAL] are registered specials and never split.
///
/// The handle is immutable after construction.
class WordPieceTokenizer {
public:
    /// Standard one-token-per-line vocab.txt (BERT layout). Missing [COL]/[VAL]
    /// entries are appended.
    static WordPieceTokenizer from_vocab_file(const std::filesystem::path& path);
    static WordPieceTokenizer from_tokens(std::vector<std::string> tokens);

    /// Vocabulary fitted to `corpus`: the specials, every character seen (plus
    /// printable ASCII) in both initial and "##" form, then the most frequent
    /// whole words until `max_size` entries.
    static WordPieceTokenizer build(std::span<const std::string> corpus, std::size_t max_size = 8000,
                                    std::size_t min_frequency = 1);

    std::vector<std::int32_t> encode(std::string_view text) const;
    std::vector<std::string> basic_split(std::string_view text) const;
    /// Joins pieces back into text: words separated by one space, "##"
    /// continuations glued to their predecessor.
    std::string decode(std::span<const std::int32_t> ids) const;
    /// The text decode(encode(text)) reproduces when no [UNK] occurs.
    std::string normalize(std::string_view text) const;

    std::size_t vocab_size() const noexcept { return tokens_.size(); }
    const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::int32_t id(std::string_view token) const;  // -1 when absent
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    std::int32_t pad_id() const noexcept { return pad_; }
    std::int32_t unk_id() const noexcept { return unk_; }
    std::int32_t cls_id() const noexcept { return cls_; }
    std::int32_t sep_id() const noexcept { return sep_; }
    std::int32_t col_id() const noexcept { return col_; }
    std::int32_t val_id() const noexcept { return val_; }
    bool is_special(std::int32_t id) const noexcept;

    void save(const std::filesystem::path& path) const;

private:
    explicit WordPieceTokenizer(std::vector<std::string> tokens);
    void encode_word(const std::string& word, std::vector<std::int32_t>& out) const;

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
    std::int32_t pad_ = -1, unk_ = -1, cls_ = -1, sep_ = -1, col_ = -1, val_ = -1;
    std::size_t max_piece_bytes_ = 0;
};

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

/// "[COL] name [VAL] value ..." for every attribute in record order.
std::string serialize_entity(const data::EntityRecord& entity);

/// "[CLS] <left> [SEP] <right> [SEP]".
std::string serialize_pair(const data::CandidatePair& pair);

/// Inverse of serialize_entity up to whitespace normalization.
data::EntityRecord parse_serialized(std::string_view text);

/// Half-open token range holding the value tokens of one attribute.
struct TokenSpan {
    std::size_t attribute = 0;
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    bool empty() const noexcept { return begin == end; }
    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct SerializedPair {
    std::vector<std::int32_t> token_ids;
    std::string text;
    std::vector<TokenSpan> left_spans;
    std::vector<TokenSpan> right_spans;
    std::size_t sep_index = 0;
    bool truncated = false;

    /// 0 up to and including the first [SEP], 1 afterwards.
    std::vector<std::int32_t> segment_ids() const;
    friend bool operator==(const SerializedPair&, const SerializedPair&) = default;
};

/// Encodes serialize_pair(p) and records the value span of every attribute.
/// Sequences longer than max_len lose one token at a time from the tail of
/// whichever attribute value is currently longest; names and markers are never
/// dropped. LengthError when names and markers alone exceed max_len.
SerializedPair tokenize_with_spans(const data::CandidatePair& pair, const WordPieceTokenizer& tokenizer,
                                   std::size_t max_len = kDefaultMaxLength);

/// One debugging line: {text, token_ids, left_spans, right_spans, sep_index, truncated}.
nlohmann::json to_json(const SerializedPair& sp);
SerializedPair serialized_pair_from_json(const nlohmann::json& j);

}  // namespace emcar::serializer
