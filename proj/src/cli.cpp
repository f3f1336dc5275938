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

#include "emcar/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "emcar/csv.hpp"
#include "emcar/errors.hpp"

namespace emcar::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

RunConfig parse_run_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    RunConfig rc;
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            if (d.is_string()) {
                rc.dataset_path = d.get<std::string>();
            } else if (d.is_object()) {
                const std::string kind = d.value("generator", std::string("uis"));
                if (kind != "uis") throw ConfigError("unknown dataset generator '" + kind + "'");
                GeneratorSpec g;
                g.pairs = d.value("pairs", g.pairs);
                g.positives = d.value("positives", g.positives);
                g.seed = d.value("seed", g.seed);
                g.corruption_rate = d.value("corruption_rate", g.corruption_rate);
                if (d.contains("base_records")) g.base_records = d.at("base_records").get<std::string>();
                if (d.contains("lexicon")) g.lexicon = d.at("lexicon").get<std::string>();
                g.synonym_negatives = d.value("synonym_negatives", g.synonym_negatives);
                if (g.positives + g.synonym_negatives > g.pairs && g.pairs > 0)
                    throw ConfigError("generator asks for more positives and synonym negatives than pairs");
                if (g.synonym_negatives > 0 && g.lexicon.empty())
                    throw ConfigError("synonym_negatives requires a lexicon");
                if (!(g.corruption_rate >= 0 && g.corruption_rate <= 1))
                    throw ConfigError("corruption_rate must lie in [0, 1]");
                rc.generator = g;
            } else {
                throw ConfigError("dataset must be a path or a generator object");
            }
        }
        rc.model = matcher::model_config_from_json(j.value("model", nlohmann::json::object()));
        rc.train = matcher::train_config_from_json(j.value("train", nlohmann::json::object()));
        rc.output_dir = j.value("output_dir", rc.output_dir.string());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return rc;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing file: " + path.string());
    try {
        return parse_run_config(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

std::vector<data::EntityRecord> read_base_records(const fs::path& path, std::size_t count) {
    const csv::Table table = csv::read_file(path);
    const int id_col = table.column("id");
    std::vector<data::EntityRecord> out;
    for (std::size_t r = 0; r < table.rows.size() && out.size() < count; ++r) {
        data::EntityRecord rec;
        rec.id = id_col >= 0 && static_cast<std::size_t>(id_col) < table.rows[r].size() ? table.rows[r][id_col]
                                                                                         : std::to_string(r);
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            if (static_cast<int>(c) == id_col) continue;
            rec.attributes.push_back({table.header[c], c < table.rows[r].size() ? table.rows[r][c] : ""});
        }
        out.push_back(std::move(rec));
    }
    if (out.size() < count)
        throw GenerationError(path.string() + " holds " + std::to_string(out.size()) + " records, " +
                              std::to_string(count) + " positives requested");
    return out;
}

std::string attribute_counts(const data::UisTables& t) {
    auto width = [](const std::vector<data::EntityRecord>& v) { return v.empty() ? 0 : v.front().size(); };
    return std::to_string(width(t.table_a)) + "-" + std::to_string(width(t.table_b));
}

std::string attribute_counts(const data::DatasetBundle& b) {
    if (b.pairs.empty()) return "0-0";
    return std::to_string(b.pairs.front().left.size()) + "-" + std::to_string(b.pairs.front().right.size());
}

data::DatasetBundle bundle_of(const data::UisTables& t) {
    return {"uis", data::SplitTag::unsplit, t.pairs};
}

struct LoadedData {
    data::DatasetSplits splits;
    std::size_t total = 0;
};

/// Validation-first: the dataset is resolved and split before any training.
LoadedData load_data(const RunConfig& rc, std::uint64_t seed) {
    LoadedData out;
    if (rc.dataset_path) {
        if (!fs::is_directory(*rc.dataset_path)) throw LoadError("missing dataset: " + rc.dataset_path->string());
        if (auto s = data::load_magellan_splits(*rc.dataset_path)) {
            out.splits = std::move(*s);
        } else {
            const data::DatasetBundle all = data::load_magellan_dataset(*rc.dataset_path);
            if (all.pairs.empty()) throw ArgumentError("empty dataset: " + rc.dataset_path->string());
            out.splits = data::split_dataset(all, seed);
        }
    } else if (rc.generator) {
        if (rc.generator->pairs == 0) throw ArgumentError("empty dataset: generator requests 0 pairs");
        out.splits = data::split_dataset(bundle_of(generate_dataset(*rc.generator)), seed);
    } else {
        throw ConfigError("run config has no dataset");
    }
    out.total = out.splits.train.size() + out.splits.valid.size() + out.splits.test.size();
    if (out.total == 0) throw ArgumentError("empty dataset");
    return out;
}

data::EntityRecord entity_from_json(const nlohmann::ordered_json& j, const std::string& fallback_id) {
    data::EntityRecord rec;
    rec.id = fallback_id;
    const nlohmann::ordered_json* attrs = &j;
    if (j.is_object() && j.contains("attributes")) {
        if (j.contains("id")) rec.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        attrs = &j.at("attributes");
    }
    auto text = [](const nlohmann::ordered_json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_null()) return std::string();
        return v.dump();
    };
    if (attrs->is_object()) {
        for (const auto& [name, value] : attrs->items()) rec.attributes.push_back({name, text(value)});
    } else if (attrs->is_array()) {
        for (const auto& kv : *attrs) {
            if (!kv.is_array() || kv.size() != 2 || !kv[0].is_string())
                throw FormatError("attribute entries must be [name, value] pairs");
            rec.attributes.push_back({kv[0].get<std::string>(), text(kv[1])});
        }
    } else {
        throw FormatError("entity must be an object or an array of [name, value] pairs");
    }
    rec.validate();
    return rec;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw LoadError("cannot write " + path.string());
}

void report(std::ostream& err, std::string_view kind, const std::string& message) {
    err << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

/// Maps exceptions onto exit codes and a one-line JSON diagnostic.
template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ParseError& e) {
        report(err, "parse", e.what());
    } catch (const ConfigError& e) {
        report(err, "config", e.what());
    } catch (const ArgumentError& e) {
        report(err, "argument", e.what());
    } catch (const LoadError& e) {
        report(err, "load", e.what());
    } catch (const FormatError& e) {
        report(err, "format", e.what());
    } catch (const IntegrityError& e) {
        report(err, "integrity", e.what());
    } catch (const SchemaError& e) {
        report(err, "schema", e.what());
    } catch (const SplitError& e) {
        report(err, "split", e.what());
    } catch (const GenerationError& e) {
        report(err, "generation", e.what());
    } catch (const LengthError& e) {
        report(err, "length", e.what());
    } catch (const DivergenceError& e) {
        report(err, "divergence", e.what());
        return kExitRuntime;
    } catch (const CheckpointError& e) {
        report(err, "checkpoint", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        report(err, "runtime", e.what());
        return kExitRuntime;
    }
    return kExitInvalid;
}

RunConfig config_with_overrides(const Options& opt) {
    if (opt.config.empty()) throw ConfigError("--config is required");
    RunConfig rc = load_run_config(opt.config);
    if (opt.seed) rc.train.seed = *opt.seed;
    if (opt.runs) {
        if (*opt.runs == 0) throw ConfigError("--runs must be at least 1");
        rc.train.runs = *opt.runs;
    }
    if (!opt.out.empty()) rc.output_dir = opt.out;
    return rc;
}

void require_checkpoint(const Options& opt) {
    if (opt.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    if (!fs::exists(opt.checkpoint / "manifest.json"))
        throw LoadError("missing checkpoint: " + opt.checkpoint.string());
}

}  // namespace

data::UisTables generate_dataset(const GeneratorSpec& spec) {
    if (spec.pairs == 0) throw ArgumentError("empty dataset: generator requests 0 pairs");
    if (spec.positives + spec.synonym_negatives > spec.pairs)
        throw GenerationError("more positives and synonym negatives than pairs requested");
    const auto base = spec.base_records.empty() ? data::synthesize_people(spec.positives, spec.seed)
                                                : read_base_records(spec.base_records, spec.positives);
    data::UisOptions o;
    o.seed = spec.seed;
    o.negatives = spec.pairs - spec.positives - spec.synonym_negatives;
    o.corruption_rate = spec.corruption_rate;
    data::UisTables t = data::generate_uis_tables(base, o);
    if (spec.synonym_negatives > 0) {
        const auto lexicon = data::SynonymLexicon::load(spec.lexicon);
        auto extra = data::synonym_negatives(t.pairs, lexicon, spec.synonym_negatives, spec.seed);
        std::set<std::string> ids_a, ids_b;
        for (const auto& r : t.table_a) ids_a.insert(r.id);
        for (const auto& r : t.table_b) ids_b.insert(r.id);
        for (auto& p : extra) {
            if (ids_a.insert(p.left.id).second) t.table_a.push_back(p.left);
            if (ids_b.insert(p.right.id).second) t.table_b.push_back(p.right);
            t.pairs.push_back(std::move(p));
        }
    }
    return t;
}

data::CandidatePair pair_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object() || !j.contains("left") || !j.contains("right"))
        throw FormatError("pair must be an object with \"left\" and \"right\"");
    data::CandidatePair p{entity_from_json(j.at("left"), "left"), entity_from_json(j.at("right"), "right"),
                          std::nullopt};
    if (j.contains("label") && !j.at("label").is_null()) {
        const auto& l = j.at("label");
        if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1))
            throw FormatError("label must be 0 or 1");
        p.label = l.get<int>();
    }
    return p;
}

std::vector<data::CandidatePair> read_pair_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing file: " + path.string());
    std::vector<data::CandidatePair> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(pair_from_json(nlohmann::ordered_json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + " line " + std::to_string(n) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError(path.string() + " line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(const Options& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const RunConfig rc = config_with_overrides(opt);
        if (!rc.generator) throw ConfigError("gen needs a generator dataset spec");
        GeneratorSpec spec = *rc.generator;
        if (opt.seed) spec.seed = *opt.seed;
        if (spec.pairs == 0) throw ArgumentError("empty dataset: generator requests 0 pairs");
        const data::UisTables t = generate_dataset(spec);
        data::write_magellan_dataset(rc.output_dir, t.table_a, t.table_b, t.pairs);
        const data::DatasetBundle b = bundle_of(t);
        out << "size positives attributes\n"
            << b.size() << ' ' << b.positives() << ' ' << attribute_counts(t) << '\n';
        return kExitOk;
    });
}

int cmd_train(const Options& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        RunConfig rc = config_with_overrides(opt);
        const LoadedData d = load_data(rc, rc.train.seed);
        if (rc.train.epochs == 0) rc.train.epochs = matcher::epochs_for_size(d.total);
        rc.train.checkpoint_dir = rc.output_dir / "checkpoints";
        fs::create_directories(rc.output_dir);

        nlohmann::ordered_json manifest;
        manifest["dataset"] = rc.dataset_path ? nlohmann::json(rc.dataset_path->string()) : nlohmann::json("generated");
        manifest["split_seed"] = rc.train.seed;
        manifest["split_sizes"] = {d.splits.train.size(), d.splits.valid.size(), d.splits.test.size()};
        manifest["attributes"] = attribute_counts(d.splits.train);
        manifest["model"] = matcher::to_json(rc.model);
        manifest["train"] = matcher::to_json(rc.train);
        std::vector<std::uint64_t> seeds;
        for (std::size_t k = 0; k < rc.train.runs; ++k) seeds.push_back(rc.train.seed + k);
        manifest["run_seeds"] = seeds;
        write_text(rc.output_dir / "run_manifest.json", manifest.dump(2) + "\n");

        const matcher::ProtocolResult r = matcher::run_protocol(rc.train, rc.model, d.splits);
        const nlohmann::json metrics = matcher::to_json(r);
        write_text(rc.output_dir / "metrics.json", metrics.dump(2) + "\n");
        out << "runs " << r.runs.size() << " f1_mean " << std::fixed << std::setprecision(4) << r.mean_f1
            << " f1_std " << r.std_f1 << '\n';
        return kExitOk;
    });
}

int cmd_eval(const Options& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        require_checkpoint(opt);
        const RunConfig rc = config_with_overrides(opt);
        const LoadedData d = load_data(rc, rc.train.seed);
        const data::Metrics m = matcher::evaluate(opt.checkpoint, d.splits.test, rc.train.batch_size);
        const std::string text = matcher::to_json(m).dump(2) + "\n";
        write_text(rc.output_dir / "eval_metrics.json", text);
        out << text;
        return kExitOk;
    });
}

namespace {

template <class F>
int per_pair_command(const Options& opt, std::ostream& out, std::ostream& err, F&& emit) {
    return guarded(err, [&] {
        require_checkpoint(opt);
        if (opt.pairs.empty()) throw ConfigError("a pair file is required");
        const auto pairs = read_pair_file(opt.pairs);
        const matcher::Model model = matcher::load_checkpoint(opt.checkpoint);
        std::ostringstream lines;
        for (const auto& p : pairs) lines << emit(model, p).dump() << '\n';
        if (opt.out.empty())
            out << lines.str();
        else
            write_text(opt.out, lines.str());
        return kExitOk;
    });
}

}  // namespace

int cmd_predict(const Options& opt, std::ostream& out, std::ostream& err) {
    return per_pair_command(opt, out, err, [](const matcher::Model& m, const data::CandidatePair& p) {
        return matcher::to_json(m.predict(p));
    });
}

int cmd_inspect(const Options& opt, std::ostream& out, std::ostream& err) {
    return per_pair_command(opt, out, err,
                            [](const matcher::Model& m, const data::CandidatePair& p) { return m.inspect(p); });
}

int run(int argc, char** argv) {
    CLI::App app{"Entity matching with attribute-similarity attention"};
    app.require_subcommand(1);
    Options opt;
    std::uint64_t seed = 0;
    std::size_t runs = 0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", opt.config, "run configuration (JSON)");
        if (needs_config) c->required();
        sub->add_option("--out", opt.out, "output directory or file");
    };
    auto* gen = app.add_subcommand("gen", "generate a heterogeneous benchmark dataset");
    add_common(gen, true);
    gen->add_option("--seed", seed, "generator seed");

    auto* trn = app.add_subcommand("train", "split, train and evaluate over repeated seeded runs");
    add_common(trn, true);
    trn->add_option("--seed", seed, "base seed");
    trn->add_option("--runs", runs, "number of runs");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(ev, true);
    ev->add_option("--checkpoint", opt.checkpoint, "checkpoint directory")->required();
    ev->add_option("--seed", seed, "split seed");

    for (auto* sub : {app.add_subcommand("predict", "classify every pair of a JSON-lines file"),
                      app.add_subcommand("inspect", "dump attention intermediates for every pair")}) {
        add_common(sub, false);
        sub->add_option("--checkpoint", opt.checkpoint, "checkpoint directory")->required();
        sub->add_option("pairs", opt.pairs, "JSON-lines pair file")->required();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInvalid;
    }
    for (auto* sub : app.get_subcommands()) {
        if (sub->get_option_no_throw("--seed") && sub->count("--seed")) opt.seed = seed;
        if (sub->get_name() == "train" && sub->count("--runs")) opt.runs = runs;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen") return cmd_gen(opt, std::cout, std::cerr);
    if (name == "train") return cmd_train(opt, std::cout, std::cerr);
    if (name == "eval") return cmd_eval(opt, std::cout, std::cerr);
    if (name == "predict") return cmd_predict(opt, std::cout, std::cerr);
    return cmd_inspect(opt, std::cout, std::cerr);
}

}  // namespace emcar::cli
