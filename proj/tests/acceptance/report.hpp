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

// One line per acceptance criterion: PASS, FAIL or BLOCKED, an id, a short
// title and the measured values.

#include <cstdio>
#include <string>

namespace emcar::acceptance {

inline constexpr int kSkipCode = 77;

class Report {
public:
    void pass(const std::string& id, const std::string& title, const std::string& detail) {
        print("PASS", id, title, detail);
    }
    void fail(const std::string& id, const std::string& title, const std::string& detail) {
        ++failed_;
        print("FAIL", id, title, detail);
    }
    void check(bool ok, const std::string& id, const std::string& title, const std::string& detail) {
        ok ? pass(id, title, detail) : fail(id, title, detail);
    }
    void blocked(const std::string& id, const std::string& title, const std::string& reason) {
        ++blocked_;
        print("BLOCKED", id, title, reason);
    }

    /// 1 on any failure, the skip code when something could not run, else 0.
    int exit_code() const { return failed_ ? 1 : blocked_ ? kSkipCode : 0; }

private:
    static void print(const char* status, const std::string& id, const std::string& title, const std::string& detail) {
        std::printf("%-7s %-4s %s: %s\n", status, id.c_str(), title.c_str(), detail.c_str());
        std::fflush(stdout);
    }

    int failed_ = 0;
    int blocked_ = 0;
};

inline std::string fmt(const char* format, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), format, a, b, c);
    return buf;
}

}  // namespace emcar::acceptance
