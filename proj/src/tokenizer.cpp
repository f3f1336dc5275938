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
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "emcar/errors.hpp"
#include "emcar/serializer.hpp"

namespace emcar::serializer {

namespace {

constexpr std::size_t kMaxWordBytes = 100;

// Byte length of the UTF-8 sequence starting with `lead`; malformed leads are
// treated as single bytes.
std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

char32_t decode_codepoint(std::string_view s, std::size_t pos, std::size_t len) {
    const auto b = [&](std::size_t i) { return static_cast<unsigned char>(s[pos + i]); };
    switch (len) {
        case 2:
            return ((b(0) & 0x1F) << 6) | (b(1) & 0x3F);
        case 3:
            return ((b(0) & 0x0F) << 12) | ((b(1) & 0x3F) << 6) | (b(2) & 0x3F);
        case 4:
            return ((b(0) & 0x07) << 18) | ((b(1) & 0x3F) << 12) | ((b(2) & 0x3F) << 6) | (b(3) & 0x3F);
        default:
            return b(0);
    }
}

bool is_cjk(char32_t cp) {
    return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) || (cp >= 0x20000 && cp <= 0x2A6DF) ||
           (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x2F800 && cp <= 0x2FA1F);
}

bool is_wide_punct(char32_t cp) {
    return (cp >= 0x3000 && cp <= 0x303F) || (cp >= 0xFF00 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
           (cp >= 0x2010 && cp <= 0x205E);
}

std::vector<std::string> split_chars(std::string_view word) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < word.size();) {
        const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
        out.emplace_back(word.substr(i, len));
        i += len;
    }
    return out;
}

const std::string_view kSpecials[] = {kPad, kUnk, kCls, kSep, kMask, kCol, kVal};

}  // namespace

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += c;
    }
    return out;
}

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second)
            throw FormatError("vocabulary repeats token '" + tokens_[i] + "'");
        max_piece_bytes_ = std::max(max_piece_bytes_, tokens_[i].size());
    }
    auto need = [&](std::string_view t) {
        const std::int32_t i = id(t);
        if (i < 0) throw FormatError("vocabulary lacks special token " + std::string(t));
        return i;
    };
    pad_ = need(kPad);
    unk_ = need(kUnk);
    cls_ = need(kCls);
    sep_ = need(kSep);
    col_ = need(kCol);
    val_ = need(kVal);
}

WordPieceTokenizer WordPieceTokenizer::from_tokens(std::vector<std::string> tokens) {
    for (std::string_view marker : {kCol, kVal})
        if (std::find(tokens.begin(), tokens.end(), marker) == tokens.end()) tokens.emplace_back(marker);
    return WordPieceTokenizer(std::move(tokens));
}

WordPieceTokenizer WordPieceTokenizer::from_vocab_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing file: " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

WordPieceTokenizer WordPieceTokenizer::build(std::span<const std::string> corpus, std::size_t max_size,
                                             std::size_t min_frequency) {
    std::vector<std::string> tokens(std::begin(kSpecials), std::end(kSpecials));
    std::set<std::string> present(tokens.begin(), tokens.end());
    auto push = [&](std::string t) {
        if (present.insert(t).second) tokens.push_back(std::move(t));
    };

    std::set<std::string> chars;
    for (char c = 33; c < 127; ++c)
        if (!std::isupper(static_cast<unsigned char>(c))) chars.insert(std::string(1, c));

    // Words are counted with a throwaway tokenizer that only needs basic_split.
    const WordPieceTokenizer splitter(tokens);
    std::map<std::string, std::size_t> counts;
    for (const auto& text : corpus)
        for (auto& w : splitter.basic_split(text)) {
            for (auto& ch : split_chars(w)) chars.insert(std::move(ch));
            ++counts[std::move(w)];
        }
    for (const auto& c : chars) push(c);
    for (const auto& c : chars) push("##" + c);

    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [word, n] : ranked) {
        if (tokens.size() >= max_size) break;
        if (n < min_frequency) break;
        if (word.size() > kMaxWordBytes) continue;
        push(word);
    }
    return WordPieceTokenizer(std::move(tokens));
}

std::int32_t WordPieceTokenizer::id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? -1 : it->second;
}

bool WordPieceTokenizer::is_special(std::int32_t i) const noexcept {
    return i == pad_ || i == unk_ || i == cls_ || i == sep_ || i == col_ || i == val_ ||
           (i >= 0 && static_cast<std::size_t>(i) < tokens_.size() && tokens_[i] == kMask);
}

std::vector<std::string> WordPieceTokenizer::basic_split(std::string_view text) const {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) words.push_back(std::move(cur));
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size();) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        const std::size_t len = std::min(utf8_length(c), text.size() - i);
        if (len == 1) {
            if (std::isspace(c) || std::iscntrl(c)) {
                flush();
            } else if (std::ispunct(c)) {
                flush();
                words.emplace_back(1, static_cast<char>(c));
            } else {
                cur += static_cast<char>(std::tolower(c));
            }
        } else {
            const char32_t cp = decode_codepoint(text, i, len);
            if (cp == 0x3000 || cp == 0xA0) {
                flush();
            } else if (is_cjk(cp) || is_wide_punct(cp)) {
                flush();
                words.emplace_back(text.substr(i, len));
            } else {
                cur.append(text.substr(i, len));
            }
        }
        i += len;
    }
    flush();
    return words;
}

void WordPieceTokenizer::encode_word(const std::string& word, std::vector<std::int32_t>& out) const {
    if (word.size() > kMaxWordBytes) {
        out.push_back(unk_);
        return;
    }
    if (const std::int32_t whole = id(word); whole >= 0) {
        out.push_back(whole);
        return;
    }
    // Character boundaries, so pieces never split a UTF-8 sequence.
    std::vector<std::size_t> bounds{0};
    for (std::size_t i = 0; i < word.size();) {
        i += std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
        bounds.push_back(i);
    }
    std::vector<std::int32_t> pieces;
    std::size_t start = 0;
    while (start + 1 < bounds.size()) {
        std::int32_t found = -1;
        std::size_t next = start;
        for (std::size_t end = bounds.size() - 1; end > start; --end) {
            const std::size_t bytes = bounds[end] - bounds[start];
            if (bytes > max_piece_bytes_) continue;
            std::string piece = word.substr(bounds[start], bytes);
            if (start > 0) piece.insert(0, "##");
            if (const std::int32_t i = id(piece); i >= 0) {
                found = i;
                next = end;
                break;
            }
        }
        if (found < 0) {
            out.push_back(unk_);
            return;
        }
        pieces.push_back(found);
        start = next;
    }
    out.insert(out.end(), pieces.begin(), pieces.end());
}

std::vector<std::int32_t> WordPieceTokenizer::encode(std::string_view text) const {
    std::vector<std::int32_t> out;
    for (const auto& w : basic_split(text)) encode_word(w, out);
    return out;
}

std::string WordPieceTokenizer::decode(std::span<const std::int32_t> ids) const {
    std::string out;
    for (std::int32_t i : ids) {
        const std::string& t = token(i);
        if (t.size() > 2 && t.compare(0, 2, "##") == 0) {
            out.append(t, 2, std::string::npos);
        } else {
            if (!out.empty()) out += ' ';
            out += t;
        }
    }
    return out;
}

std::string WordPieceTokenizer::normalize(std::string_view text) const {
    std::string out;
    for (const auto& w : basic_split(text)) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

void WordPieceTokenizer::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
}

}  // namespace emcar::serializer
