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

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "emcar/cli.hpp"
#include "support.hpp"

using namespace emcar;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
    const auto path = dir / "config.json";
    std::ofstream(path) << j.dump(2);
    return path;
}

nlohmann::json toy_config(const fs::path& out, std::size_t pairs = 40, std::size_t positives = 20) {
    return {{"dataset", {{"generator", "uis"}, {"pairs", pairs}, {"positives", positives}, {"seed", 3}}},
            {"model", {{"encoder_preset", "tiny"}}},
            {"train",
             {{"max_seq_len", 96}, {"learning_rate", 1e-3}, {"epochs", 2}, {"batch_size", 16}, {"runs", 1}}},
            {"output_dir", out.string()}};
}

/// Runs the built executable and returns its exit status.
int run_cli(const std::string& args, const fs::path& stdout_file = "/dev/null") {
    const std::string cmd = std::string(EMCAR_CLI_PATH) + " " + args + " > " + stdout_file.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_CASE("gen prints the summary row") {
    const auto dir = test::scratch_dir("cli_gen");
    const auto cfg = write_config(dir, {{"dataset", {{"generator", "uis"}, {"pairs", 12853}, {"positives", 2736}, {"seed", 1}}},
                                        {"output_dir", (dir / "a").string()}});
    cli::Options opt;
    opt.config = cfg;
    std::ostringstream out, err;
    REQUIRE(cli::cmd_gen(opt, out, err) == cli::kExitOk);
    CHECK(out.str() == "size positives attributes\n12853 2736 4-4\n");
    for (const char* f : {"tableA.csv", "tableB.csv", "pairs.csv"}) CHECK(fs::exists(dir / "a" / f));

    SUBCASE("byte-identical output for the same seed") {
        opt.out = dir / "b";
        std::ostringstream out2;
        REQUIRE(cli::cmd_gen(opt, out2, err) == cli::kExitOk);
        for (const char* f : {"tableA.csv", "tableB.csv", "pairs.csv"})
            CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    SUBCASE("seed override changes the output") {
        opt.out = dir / "c";
        opt.seed = 99;
        std::ostringstream out2;
        REQUIRE(cli::cmd_gen(opt, out2, err) == cli::kExitOk);
        CHECK(slurp(dir / "a" / "pairs.csv") != slurp(dir / "c" / "pairs.csv"));
    }
}

TEST_CASE("rejected requests exit with code 2") {
    const auto dir = test::scratch_dir("cli_reject");
    SUBCASE("empty generator request") {
        const auto cfg = write_config(dir, {{"dataset", {{"generator", "uis"}, {"pairs", 0}, {"positives", 0}}},
                                            {"output_dir", (dir / "o").string()}});
        cli::Options opt;
        opt.config = cfg;
        std::ostringstream out, err;
        CHECK(cli::cmd_gen(opt, out, err) == cli::kExitInvalid);
        CHECK(err.str().find("empty dataset") != std::string::npos);
        const auto diag = nlohmann::json::parse(err.str());
        CHECK(diag.contains("error"));
        CHECK(run_cli("gen --config " + cfg.string()) == 2);
    }
    SUBCASE("missing dataset directory") {
        auto j = toy_config(dir / "o");
        j["dataset"] = (dir / "nowhere").string();
        const auto cfg = write_config(dir, j);
        CHECK(run_cli("train --config " + cfg.string()) == 2);
        CHECK_FALSE(fs::exists(dir / "o" / "checkpoints"));
    }
    SUBCASE("malformed configuration") {
        std::ofstream(dir / "bad.json") << "{ not json";
        CHECK(run_cli("train --config " + (dir / "bad.json").string()) == 2);
        CHECK(run_cli("train --config " + (dir / "absent.json").string()) == 2);
    }
    SUBCASE("bad command line") {
        CHECK(run_cli("") == 2);
        CHECK(run_cli("frobnicate") == 2);
        CHECK(run_cli("eval --config x.json") == 2);
    }
    SUBCASE("missing checkpoint") {
        std::ofstream(dir / "p.jsonl") << R"({"left": {"a": "1"}, "right": {"a": "1"}})" << "\n";
        CHECK(run_cli("predict --checkpoint " + (dir / "none").string() + " " + (dir / "p.jsonl").string()) == 2);
    }
}

TEST_CASE("pair file parsing") {
    const auto p = cli::pair_from_json(nlohmann::ordered_json::parse(
        R"({"left": {"id": "L1", "attributes": {"b": "x", "a": 2}}, "right": [["n", "v"]], "label": 1})"));
    CHECK(p.left.id == "L1");
    REQUIRE(p.left.size() == 2);
    CHECK(p.left.attributes[0].name == "b");
    CHECK(p.left.attributes[1].value == "2");
    CHECK(p.right.attributes[0].name == "n");
    CHECK(p.label == 1);
    CHECK_THROWS_AS(cli::pair_from_json(nlohmann::ordered_json::parse(R"({"left": 3, "right": {}})")), Error);
    CHECK_THROWS_AS(cli::pair_from_json(nlohmann::ordered_json::parse(R"({"left": {"a": "1"}})")), Error);

    const auto dir = test::scratch_dir("cli_pairs");
    std::ofstream(dir / "p.jsonl") << R"({"left": {"a": "1"}, "right": {"a": "1"}})" << "\n\n"
                                   << R"({"left": {"a": "2"}, "right": {"b": "3"}, "label": 0})" << "\n";
    CHECK(cli::read_pair_file(dir / "p.jsonl").size() == 2);
    std::ofstream(dir / "q.jsonl") << "{oops\n";
    CHECK_THROWS_AS(cli::read_pair_file(dir / "q.jsonl"), Error);
}

TEST_CASE("train, eval, predict and inspect end to end") {
    const auto dir = test::scratch_dir("cli_e2e");
    const auto out_dir = dir / "run";
    const auto cfg = write_config(dir, toy_config(out_dir));

    REQUIRE(run_cli("train --config " + cfg.string(), dir / "train.txt") == 0);
    CHECK(slurp(dir / "train.txt").rfind("runs 1 f1_mean ", 0) == 0);
    const auto metrics = nlohmann::json::parse(slurp(out_dir / "metrics.json"));
    CHECK(metrics["runs"].size() == 1);
    const auto manifest = nlohmann::json::parse(slurp(out_dir / "run_manifest.json"));
    CHECK(manifest["run_seeds"] == nlohmann::json::array({0}));
    const auto ckpt = out_dir / "checkpoints" / "run0";
    REQUIRE(fs::exists(ckpt / "weights.bin"));

    // Everything the run wrote stays under output_dir.
    for (const auto& e : fs::directory_iterator(dir))
        CHECK((e.path() == out_dir || e.path().extension() == ".json" || e.path().extension() == ".txt"));

    REQUIRE(run_cli("eval --config " + cfg.string() + " --checkpoint " + ckpt.string(), dir / "eval.txt") == 0);
    const auto ev = nlohmann::json::parse(slurp(out_dir / "eval_metrics.json"));
    REQUIRE(ev.contains("f1"));
    CHECK(ev["f1"].get<double>() >= 0.0);
    CHECK(ev["f1"].get<double>() <= 1.0);
    CHECK(nlohmann::json::parse(slurp(dir / "eval.txt")) == ev);

    {
        std::ofstream pairs(dir / "pairs.jsonl");
        const auto b = test::uis_bundle(4, 3, 2);
        for (const auto& p : b.pairs) {
            nlohmann::ordered_json l, r;
            for (const auto& a : p.left.attributes) l[a.name] = a.value;
            for (const auto& a : p.right.attributes) r[a.name] = a.value;
            pairs << nlohmann::ordered_json{{"left", l}, {"right", r}}.dump() << "\n";
        }
    }
    REQUIRE(run_cli("predict --checkpoint " + ckpt.string() + " " + (dir / "pairs.jsonl").string(),
                    dir / "pred.txt") == 0);
    const auto pred = slurp(dir / "pred.txt");
    CHECK(count_lines(pred) == 7);
    std::istringstream lines(pred);
    for (std::string line; std::getline(lines, line);) {
        const auto j = nlohmann::json::parse(line);
        CHECK(std::abs(j["prob_match"].get<double>() + j["prob_no_match"].get<double>() - 1.0) <= 1e-6);
    }

    const fs::path fixture = fs::path(EMCAR_FIXTURE_DIR) / "three_gorges.jsonl";
    REQUIRE(run_cli("inspect --checkpoint " + ckpt.string() + " --out " + (dir / "inspect.jsonl").string() + " " +
                    fixture.string()) == 0);
    const auto dump = nlohmann::json::parse(slurp(dir / "inspect.jsonl"));
    REQUIRE(dump["R"].size() == 4);
    for (const auto& row : dump["R"]) CHECK(row.size() == 3);
    CHECK(dump["cells"].size() == 12);
    CHECK(dump["right_attributes"][1] == "Reservoir Location");

    // Same inputs and seed, same metrics.
    const auto cfg2 = write_config(dir / "run", toy_config(dir / "run2"));
    REQUIRE(run_cli("train --config " + cfg2.string()) == 0);
    auto strip = [](nlohmann::json j) {
        for (auto& r : j["runs"]) r.erase("checkpoint");
        return j;
    };
    CHECK(strip(nlohmann::json::parse(slurp(out_dir / "metrics.json"))) ==
          strip(nlohmann::json::parse(slurp(dir / "run2" / "metrics.json"))));
}

TEST_CASE("six runs report six scores") {
    const auto dir = test::scratch_dir("cli_runs");
    auto j = toy_config(dir / "o", 30, 15);
    j["train"]["epochs"] = 1;
    const auto cfg = write_config(dir, j);
    cli::Options opt;
    opt.config = cfg;
    opt.runs = 6;
    opt.seed = 10;
    std::ostringstream out, err;
    REQUIRE(cli::cmd_train(opt, out, err) == cli::kExitOk);
    const auto metrics = nlohmann::json::parse(slurp(dir / "o" / "metrics.json"));
    REQUIRE(metrics["runs"].size() == 6);
    double mean = 0;
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(metrics["runs"][k]["seed"] == 10 + k);
        mean += metrics["runs"][k]["f1"].get<double>();
    }
    CHECK(metrics["f1_mean"].get<double>() == doctest::Approx(mean / 6));
    for (std::size_t k = 0; k < 6; ++k) CHECK(fs::exists(dir / "o" / "checkpoints" / ("run" + std::to_string(k))));
}
