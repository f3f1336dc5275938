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
#include <array>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <unordered_map>

#include "emcar/data.hpp"
#include "emcar/errors.hpp"
#include "random_util.hpp"

namespace emcar::data {

namespace {

using detail::Rng;

constexpr std::array kFirstNames = {
    "James",  "Mary",    "Robert",  "Patricia", "John",    "Jennifer", "Michael", "Linda",   "David",
    "Elizabeth", "William", "Barbara", "Richard", "Susan",  "Joseph",  "Jessica", "Thomas",  "Sarah",
    "Charles", "Karen",  "Daniel",  "Nancy",    "Matthew", "Lisa",     "Anthony", "Betty",   "Mark",
    "Margaret", "Donald", "Sandra", "Steven",   "Ashley",  "Paul",     "Kimberly", "Andrew", "Emily",
    "Joshua", "Donna",   "Kenneth", "Michelle", "Kevin",   "Carol",    "Brian",   "Amanda",  "George",
    "Melissa", "Timothy", "Deborah", "Ronald",  "Stephanie", "Edward", "Rebecca", "Jason",   "Sharon",
    "Jeffrey", "Laura",  "Ryan",    "Cynthia",  "Jacob",   "Kathleen",
};

constexpr std::array kLastNames = {
    "Smith",    "Johnson", "Williams", "Brown",   "Jones",    "Garcia",   "Miller",  "Davis",    "Rodriguez",
    "Martinez", "Hernandez", "Lopez",  "Gonzalez", "Wilson",  "Anderson", "Thomas",  "Taylor",   "Moore",
    "Jackson",  "Martin",  "Lee",      "Perez",   "Thompson", "White",    "Harris",  "Sanchez",  "Clark",
    "Ramirez",  "Lewis",   "Robinson", "Walker",  "Young",    "Allen",    "King",    "Wright",   "Scott",
    "Torres",   "Nguyen",  "Hill",     "Flores",  "Green",    "Adams",    "Nelson",  "Baker",    "Hall",
    "Rivera",   "Campbell", "Mitchell", "Carter", "Roberts",  "Gomez",    "Phillips", "Evans",   "Turner",
    "Diaz",     "Parker",  "Cruz",     "Edwards", "Collins",  "Reyes",    "Stewart", "Morris",   "Morales",
    "Murphy",   "Cook",    "Rogers",   "Gutierrez", "Ortiz",  "Morgan",   "Cooper",  "Peterson", "Bailey",
};

constexpr std::array kStreets = {
    "Elm",    "Oak",      "Maple",   "Cedar",    "Pine",     "Washington", "Lake",    "Hill",     "Park",
    "Main",   "Church",   "Mill",    "Spring",   "Ridge",    "Walnut",     "Chestnut", "Jefferson", "Lincoln",
    "Madison", "Franklin", "Highland", "Sunset", "Willow",   "River",      "Meadow",  "Forest",   "Prospect",
    "Center", "Union",    "Water",   "Bridge",   "Grove",    "Jackson",    "Adams",   "Liberty",  "Cherry",
};

struct Suffix {
    const char* full;
    const char* abbrev;
};
constexpr std::array kSuffixes = {
    Suffix{"Street", "St"},   Suffix{"Avenue", "Ave"}, Suffix{"Road", "Rd"},      Suffix{"Lane", "Ln"},
    Suffix{"Drive", "Dr"},    Suffix{"Court", "Ct"},   Suffix{"Boulevard", "Blvd"}, Suffix{"Place", "Pl"},
};

struct City {
    const char* name;
    const char* state;
    const char* state_name;
    const char* zip_prefix;
};
constexpr std::array kCities = {
    City{"Ames", "IA", "Iowa", "500"},          City{"Des Moines", "IA", "Iowa", "503"},
    City{"Madison", "WI", "Wisconsin", "537"},  City{"Milwaukee", "WI", "Wisconsin", "532"},
    City{"Springfield", "IL", "Illinois", "627"}, City{"Chicago", "IL", "Illinois", "606"},
    City{"Columbus", "OH", "Ohio", "432"},      City{"Dayton", "OH", "Ohio", "454"},
    City{"Austin", "TX", "Texas", "787"},       City{"Dallas", "TX", "Texas", "752"},
    City{"Portland", "OR", "Oregon", "972"},    City{"Salem", "OR", "Oregon", "973"},
    City{"Denver", "CO", "Colorado", "802"},    City{"Boulder", "CO", "Colorado", "803"},
    City{"Albany", "NY", "New York", "122"},    City{"Buffalo", "NY", "New York", "142"},
    City{"Raleigh", "NC", "North Carolina", "276"}, City{"Durham", "NC", "North Carolina", "277"},
    City{"Tucson", "AZ", "Arizona", "857"},     City{"Phoenix", "AZ", "Arizona", "850"},
    City{"Omaha", "NE", "Nebraska", "681"},     City{"Lincoln", "NE", "Nebraska", "685"},
    City{"Boise", "ID", "Idaho", "837"},        City{"Fargo", "ND", "North Dakota", "581"},
    City{"Portland", "ME", "Maine", "041"},     City{"Springfield", "MO", "Missouri", "658"},
};

template <class Array>
const auto& pick(const Array& a, Rng& rng) {
    return a[detail::uniform_index(rng, a.size())];
}

std::string typo(const std::string& s, Rng& rng) {
    if (s.size() < 2) return s;
    std::string out = s;
    const std::size_t i = detail::uniform_index(rng, out.size() - 1);
    switch (detail::uniform_index(rng, 4)) {
        case 0:
            std::swap(out[i], out[i + 1]);
            break;
        case 1:
            out.erase(i, 1);
            break;
        case 2:
            out.insert(out.begin() + static_cast<std::ptrdiff_t>(i), out[i]);
            break;
        default:
            if (std::isalpha(static_cast<unsigned char>(out[i])))
                out[i] = static_cast<char>('a' + detail::uniform_index(rng, 26));
            break;
    }
    return out;
}

std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string join(const std::vector<std::string>& w) {
    std::string out;
    for (const auto& x : w) {
        if (!out.empty()) out += ' ';
        out += x;
    }
    return out;
}

std::string corrupt_name(const std::string& v, Rng& rng) {
    auto w = words(v);
    switch (detail::uniform_index(rng, 3)) {
        case 0:
            if (w.size() >= 2 && !w[0].empty()) w[0] = std::string(1, w[0][0]) + ".";
            return join(w);
        case 1:
            if (w.size() >= 2) return w.back() + ", " + join(std::vector<std::string>(w.begin(), w.end() - 1));
            return v;
        default:
            return typo(v, rng);
    }
}

std::string corrupt_address(const std::string& v, Rng& rng) {
    if (detail::bernoulli(rng, 0.5)) {
        auto w = words(v);
        for (auto& x : w)
            for (const auto& s : kSuffixes)
                if (x == s.full) x = s.abbrev;
        return join(w);
    }
    return typo(v, rng);
}

std::string corrupt_state(const std::string& v, Rng& rng) {
    for (const auto& c : kCities)
        if (v == c.state) return detail::bernoulli(rng, 0.7) ? std::string(c.state_name) : typo(v, rng);
    return typo(v, rng);
}

std::string corrupt_zip(const std::string& v, Rng& rng) {
    if (v.empty()) return v;
    std::string out = v;
    const std::size_t i = detail::uniform_index(rng, out.size());
    if (std::isdigit(static_cast<unsigned char>(out[i])))
        out[i] = static_cast<char>('0' + (out[i] - '0' + 1 + detail::uniform_index(rng, 9)) % 10);
    return out;
}

EntityRecord corrupt(const EntityRecord& base, double rate, Rng& rng) {
    EntityRecord out = base;
    for (auto& a : out.attributes) {
        if (!detail::bernoulli(rng, rate)) continue;
        if (detail::bernoulli(rng, 0.1)) {
            a.value.clear();
            continue;
        }
        if (a.name == "name")
            a.value = corrupt_name(a.value, rng);
        else if (a.name == "address")
            a.value = corrupt_address(a.value, rng);
        else if (a.name == "state")
            a.value = corrupt_state(a.value, rng);
        else if (a.name == "zip")
            a.value = corrupt_zip(a.value, rng);
        else
            a.value = typo(a.value, rng);
    }
    return out;
}

std::string last_word(const std::string& s) {
    auto w = words(s);
    return w.empty() ? std::string() : w.back();
}

}  // namespace

std::vector<EntityRecord> synthesize_people(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<EntityRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const City& city = pick(kCities, rng);
        const std::string name = std::string(pick(kFirstNames, rng)) + " " + pick(kLastNames, rng);
        const std::string address = std::to_string(1 + detail::uniform_index(rng, 9899)) + " " +
                                    pick(kStreets, rng) + " " + pick(kSuffixes, rng).full;
        std::string zip = city.zip_prefix;
        zip += static_cast<char>('0' + detail::uniform_index(rng, 10));
        zip += static_cast<char>('0' + detail::uniform_index(rng, 10));
        out.push_back({"p" + std::to_string(i),
                       {{"name", name}, {"address", address}, {"city", city.name}, {"state", city.state}, {"zip", zip}}});
    }
    return out;
}

UisTables generate_uis_tables(std::span<const EntityRecord> base_records, const UisOptions& options) {
    for (const auto& rec : base_records) {
        for (std::string_view attr : kUisBaseSchema)
            if (!rec.find(attr))
                throw SchemaError("generate_uis_tables: base record '" + rec.id + "' lacks attribute '" +
                                  std::string(attr) + "'");
    }
    const std::size_t n = base_records.size();
    if (options.negatives > 0 && n * (n - (n > 0 ? 1 : 0)) < options.negatives)
        throw GenerationError("generate_uis_tables: " + std::to_string(options.negatives) +
                              " negatives requested but only " + std::to_string(n * (n > 0 ? n - 1 : 0)) +
                              " distinct non-matching pairs exist");

    Rng rng(options.seed);
    UisTables out;
    out.table_a.reserve(n);
    out.table_b.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        EntityRecord a = merge_attributes(corrupt(base_records[i], options.corruption_rate, rng), "address", "city",
                                          kUisTableAMerged);
        EntityRecord b = merge_attributes(corrupt(base_records[i], options.corruption_rate, rng), "city", "state",
                                          kUisTableBMerged);
        a.id = "a" + std::to_string(i);
        b.id = "b" + std::to_string(i);
        out.table_a.push_back(std::move(a));
        out.table_b.push_back(std::move(b));
    }

    out.pairs.reserve(n + options.negatives);
    for (std::size_t i = 0; i < n; ++i) out.pairs.push_back({out.table_a[i], out.table_b[i], 1});

    // Hard negatives share a city or a surname with the left record, the way a
    // blocking step would have paired them.
    std::map<std::string, std::vector<std::size_t>> by_city, by_surname;
    for (std::size_t i = 0; i < n; ++i) {
        by_city[base_records[i].value("city")].push_back(i);
        by_surname[last_word(base_records[i].value("name"))].push_back(i);
    }
    std::set<std::pair<std::size_t, std::size_t>> used;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 50 * options.negatives + 1000;
    while (used.size() < options.negatives) {
        if (++attempts > max_attempts) {
            // Dense request: fall back to enumerating the remaining pairs.
            std::vector<std::pair<std::size_t, std::size_t>> rest;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (i != j && !used.count({i, j})) rest.emplace_back(i, j);
            detail::shuffle(std::span(rest), rng);
            for (std::size_t k = 0; used.size() < options.negatives; ++k) {
                used.insert(rest[k]);
                out.pairs.push_back({out.table_a[rest[k].first], out.table_b[rest[k].second], 0});
            }
            break;
        }
        const std::size_t i = detail::uniform_index(rng, n);
        std::size_t j = i;
        const double u = detail::uniform_unit(rng);
        const std::vector<std::size_t>* group = nullptr;
        if (u < 0.4)
            group = &by_city[base_records[i].value("city")];
        else if (u < 0.6)
            group = &by_surname[last_word(base_records[i].value("name"))];
        if (group && group->size() > 1)
            j = (*group)[detail::uniform_index(rng, group->size())];
        else
            j = detail::uniform_index(rng, n);
        if (i == j || !used.insert({i, j}).second) continue;
        out.pairs.push_back({out.table_a[i], out.table_b[j], 0});
    }
    return out;
}

}  // namespace emcar::data
