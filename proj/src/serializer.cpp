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
#include <set>
#include <sstream>

#include "emcar/errors.hpp"
#include "emcar/serializer.hpp"

namespace emcar::serializer {

std::string serialize_entity(const data::EntityRecord& entity) {
    if (entity.attributes.empty())
        throw ArgumentError("serialize_entity: record '" + entity.id + "' has no attributes");
    std::string out;
    for (const auto& a : entity.attributes) {
        if (!out.empty()) out += ' ';
        out += kCol;
        out += ' ';
        out += normalize_whitespace(a.name);
        out += ' ';
        out += kVal;
        const std::string value = normalize_whitespace(a.value);
        if (!value.empty()) {
            out += ' ';
            out += value;
        }
    }
    return out;
}

std::string serialize_pair(const data::CandidatePair& pair) {
    std::string out(kCls);
    out += ' ';
    out += serialize_entity(pair.left);
    out += ' ';
    out += kSep;
    out += ' ';
    out += serialize_entity(pair.right);
    out += ' ';
    out += kSep;
    return out;
}

data::EntityRecord parse_serialized(std::string_view text) {
    std::vector<std::string> words;
    {
        std::istringstream in{std::string(text)};
        for (std::string w; in >> w;) words.push_back(std::move(w));
    }
    enum class State { start, name, value };
    State state = State::start;
    data::EntityRecord rec;
    std::set<std::string> names;
    std::vector<std::string> name, value;
    auto join = [](const std::vector<std::string>& parts) {
        std::string s;
        for (const auto& p : parts) {
            if (!s.empty()) s += ' ';
            s += p;
        }
        return s;
    };
    auto finish = [&](std::size_t pos) {
        std::string n = join(name);
        if (!names.insert(n).second) throw ParseError("repeated attribute name '" + n + "'", pos);
        rec.attributes.push_back({std::move(n), join(value)});
        name.clear();
        value.clear();
    };

    for (std::size_t i = 0; i < words.size(); ++i) {
        const std::string& w = words[i];
        if (w == kCol) {
            if (state == State::name) throw ParseError("[COL] before the previous attribute's [VAL]", i);
            if (state == State::value) finish(i);
            state = State::name;
        } else if (w == kVal) {
            if (state != State::name) throw ParseError("[VAL] without a preceding [COL]", i);
            if (name.empty()) throw ParseError("empty attribute name", i);
            state = State::value;
        } else if (w == kCls || w == kSep) {
            throw ParseError("unexpected " + w + " inside an entity serialization", i);
        } else {
            if (state == State::start) throw ParseError("text before the first [COL]", i);
            (state == State::name ? name : value).push_back(w);
        }
    }
    if (state == State::start) throw ParseError("no attributes", 0);
    if (state == State::name) throw ParseError("attribute without [VAL]", words.size());
    finish(words.size());
    return rec;
}

std::vector<std::int32_t> SerializedPair::segment_ids() const {
    std::vector<std::int32_t> seg(token_ids.size(), 0);
    for (std::size_t i = sep_index + 1; i < seg.size(); ++i) seg[i] = 1;
    return seg;
}

SerializedPair tokenize_with_spans(const data::CandidatePair& pair, const WordPieceTokenizer& tokenizer,
                                   std::size_t max_len) {
    if (max_len < kMinMaxLength)
        throw ConfigError("tokenize_with_spans: max_len " + std::to_string(max_len) + " is below " +
                          std::to_string(kMinMaxLength));

    struct Piece {
        std::vector<std::int32_t> name;
        std::vector<std::int32_t> value;
    };
    auto encode_side = [&](const data::EntityRecord& rec) {
        std::vector<Piece> out;
        for (const auto& a : rec.attributes) out.push_back({tokenizer.encode(a.name), tokenizer.encode(a.value)});
        return out;
    };

    SerializedPair sp;
    sp.text = serialize_pair(pair);  // validates both records
    std::vector<Piece> left = encode_side(pair.left);
    std::vector<Piece> right = encode_side(pair.right);

    std::size_t fixed = 3, total = 0;
    for (const auto* side : {&left, &right})
        for (const auto& p : *side) {
            fixed += 2 + p.name.size();
            total += p.value.size();
        }
    if (fixed > max_len)
        throw LengthError("tokenize_with_spans: attribute names and markers need " + std::to_string(fixed) +
                          " tokens, more than max_len " + std::to_string(max_len));
    total += fixed;

    // Trim the currently longest value one token at a time; ties go to the
    // earliest attribute (left entity first).
    while (total > max_len) {
        std::vector<std::int32_t>* longest = nullptr;
        for (auto* side : {&left, &right})
            for (auto& p : *side)
                if (!longest || p.value.size() > longest->size()) longest = &p.value;
        longest->pop_back();
        --total;
        sp.truncated = true;
    }

    sp.token_ids.reserve(total);
    auto emit_side = [&](const std::vector<Piece>& side, std::vector<TokenSpan>& spans) {
        for (std::size_t i = 0; i < side.size(); ++i) {
            sp.token_ids.push_back(tokenizer.col_id());
            sp.token_ids.insert(sp.token_ids.end(), side[i].name.begin(), side[i].name.end());
            sp.token_ids.push_back(tokenizer.val_id());
            const std::size_t begin = sp.token_ids.size();
            sp.token_ids.insert(sp.token_ids.end(), side[i].value.begin(), side[i].value.end());
            spans.push_back({i, begin, sp.token_ids.size()});
        }
    };
    sp.token_ids.push_back(tokenizer.cls_id());
    emit_side(left, sp.left_spans);
    sp.sep_index = sp.token_ids.size();
    sp.token_ids.push_back(tokenizer.sep_id());
    emit_side(right, sp.right_spans);
    sp.token_ids.push_back(tokenizer.sep_id());
    return sp;
}

nlohmann::json to_json(const SerializedPair& sp) {
    auto spans = [](const std::vector<TokenSpan>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& s : v) arr.push_back({s.attribute, s.begin, s.end});
        return arr;
    };
    return {{"text", sp.text},
            {"token_ids", sp.token_ids},
            {"left_spans", spans(sp.left_spans)},
            {"right_spans", spans(sp.right_spans)},
            {"sep_index", sp.sep_index},
            {"truncated", sp.truncated}};
}

SerializedPair serialized_pair_from_json(const nlohmann::json& j) {
    try {
        SerializedPair sp;
        sp.text = j.at("text").get<std::string>();
        sp.token_ids = j.at("token_ids").get<std::vector<std::int32_t>>();
        for (const auto* key : {"left_spans", "right_spans"}) {
            auto& dst = std::string_view(key) == "left_spans" ? sp.left_spans : sp.right_spans;
            for (const auto& s : j.at(key)) dst.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()});
        }
        sp.sep_index = j.at("sep_index").get<std::size_t>();
        sp.truncated = j.at("truncated").get<bool>();
        return sp;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("serialized pair json: ") + e.what());
    }
}

}  // namespace emcar::serializer
