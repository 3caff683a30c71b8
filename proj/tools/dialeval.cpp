// dialeval: command-line front end for the corpus, agreement, modelling and analysis
// pipeline, plus the annotation service.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dialeval/agreement.hpp"
#include "dialeval/analysis.hpp"
#include "dialeval/corpus.hpp"
#include "dialeval/featurize.hpp"
#include "dialeval/models.hpp"
#include "dialeval/service/server.hpp"
#include "dialeval/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dialeval;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Options {
    std::string corpus;
    std::string registry;
    std::string out;
    std::uint64_t seed = 42;
    std::size_t max_turns = 12;
    std::size_t folds = 5;
    std::string filter = "both";
    std::string model = "all";
    std::string format;
    std::optional<std::size_t> sample;
    std::string matrix;
    std::string label;
    std::string model_path;
    bool baseline = false;
    // synth
    std::string preset = "keyword_groups";
    std::size_t dialogues = 120;
    std::size_t turns = 72;
    double noise = 0.0;
    bool shuffle = false;
    // serve
    int port = 8080;
    std::string host = "127.0.0.1";
    std::string log;
    std::string tokens_file;
};

std::string hex(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << v;
    return out.str();
}

std::string file_digest(const std::string& path) {
    if (path.empty()) return "";
    return hex(fnv1a64(corpus::read_file(path)));
}

/// Everything that determines a command's artifacts: option values and input digests.
/// The output directory is excluded so runs into different directories compare equal.
struct Run {
    std::string command;
    std::uint64_t seed = 0;
    json config;
    std::string hash;

    json provenance() const { return {{"tool", "dialeval"}, {"command", command}, {"seed", seed}, {"config_hash", hash}}; }
    std::string header() const {
        return "# dialeval " + command + " seed=" + std::to_string(seed) + " config_hash=" + hash + "\n";
    }
};

Run make_run(const std::string& command, const Options& o) {
    Run run;
    run.command = command;
    run.seed = o.seed;
    run.config = {{"command", command},
                  {"seed", o.seed},
                  {"max_turns", o.max_turns},
                  {"folds", o.folds},
                  {"filter", o.filter},
                  {"model", o.model},
                  {"format", o.format},
                  {"sample", o.sample ? json(*o.sample) : json(nullptr)},
                  {"label", o.label},
                  {"baseline", o.baseline},
                  {"corpus_digest", file_digest(o.corpus)},
                  {"registry_digest", file_digest(o.registry)},
                  {"matrix_digest", file_digest(o.matrix)},
                  {"model_digest", file_digest(o.model_path)}};
    if (command == "synth") {
        run.config["synth"] = {{"preset", o.preset}, {"dialogues", o.dialogues}, {"turns", o.turns},
                               {"noise", o.noise}, {"shuffle", o.shuffle}};
    }
    run.hash = hex(fnv1a64(run.config.dump()));
    return run;
}

fs::path out_dir(const Options& o) {
    std::string dir = o.out;
    if (dir.empty()) {
        if (const char* env = std::getenv("SLEDE_OUT"); env && *env) dir = env;
    }
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    return dir;
}

void write_json(const fs::path& path, json body, const Run& run) {
    body["run"] = run.provenance();
    corpus::write_file(path, body.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text, const Run& run) {
    corpus::write_file(path, run.header() + text);
}

std::string format_or(const Options& o, std::string fallback) { return o.format.empty() ? fallback : o.format; }

void require(const std::string& value, const std::string& flag) {
    if (value.empty()) throw CLI::ValidationError(flag, "is required for this command");
}

std::vector<corpus::FeatureDef> registry_for(const Options& o, const std::vector<corpus::FeatureDef>& from_data) {
    if (!o.registry.empty()) return corpus::load_registry(o.registry).first;
    if (!from_data.empty()) return from_data;
    return corpus::default_registry();
}

/// A corpus file is split on load; a mini-dialogue export is used as is.
corpus::MiniSet load_minis(const Options& o) {
    require(o.corpus, "--corpus");
    const json j = corpus::parse_json(corpus::read_file(o.corpus), o.corpus);
    if (corpus::is_mini_export(j)) return corpus::minis_from_json(j);
    corpus::Corpus c = corpus::corpus_from_json(j);
    corpus::validate(c);
    corpus::MiniSet set;
    set.registry = c.registry;
    set.labels = c.labels;
    set.minis = corpus::split_corpus(c, {o.max_turns, o.sample, o.seed});
    set.split_info = {{"max_turns", o.max_turns}, {"seed", o.seed}};
    if (o.sample) set.split_info["sample_total"] = *o.sample;
    return set;
}

/// --matrix (CSV from `featurize`) wins over --corpus.
featurize::DesignMatrix load_matrix(const Options& o, std::vector<corpus::FeatureDef>& registry,
                                    featurize::LevelFilter filter) {
    if (!o.matrix.empty()) {
        registry = registry_for(o, {});
        featurize::DesignMatrix m = featurize::from_csv(corpus::read_file(o.matrix), o.matrix);
        return filter == featurize::LevelFilter::both ? m : m.select(registry, filter);
    }
    const corpus::MiniSet set = load_minis(o);
    registry = registry_for(o, set.registry);
    return featurize::build_matrix(set.minis, registry, filter);
}

std::vector<models::ClassifierSpec> specs_for(const Options& o) {
    std::vector<models::ClassifierSpec> specs;
    if (o.model == "all") {
        for (auto kind : models::kAllKinds) specs.push_back(models::ClassifierSpec::defaults(kind, o.seed));
    } else {
        specs.push_back(models::ClassifierSpec::defaults(models::parse_kind(o.model), o.seed));
    }
    return specs;
}

std::vector<std::string> labels_for(const Options& o, const featurize::DesignMatrix& m) {
    if (!o.label.empty()) {
        m.target(o.label);
        return {o.label};
    }
    std::vector<std::string> present;
    for (const auto& [label, _] : m.targets) present.push_back(label);
    return models::ordered_labels(present);
}

// ---------------------------------------------------------------------------

int cmd_validate(const Options& o) {
    require(o.corpus, "--corpus");
    const Run run = make_run("validate", o);
    const json j = corpus::parse_json(corpus::read_file(o.corpus), o.corpus);
    json summary;
    if (corpus::is_mini_export(j)) {
        const auto set = corpus::minis_from_json(j);
        summary = {{"kind", "mini_dialogues"}, {"mini_dialogues", set.minis.size()}};
        std::cout << "validate: ok, " << set.minis.size() << " mini-dialogues\n";
    } else {
        corpus::Corpus c = corpus::corpus_from_json(j);
        corpus::validate(c);
        std::size_t scores = 0;
        for (const auto& [_, list] : c.scores) scores += list.size();
        summary = {{"kind", "corpus"}, {"dialogues", c.dialogues.size()}, {"spans", c.spans.size()}, {"scores", scores}};
        std::cout << "validate: ok, " << c.dialogues.size() << " dialogues, " << c.spans.size() << " spans, " << scores
                  << " scores\n";
    }
    summary["valid"] = true;
    write_json(out_dir(o) / "validation.json", summary, run);
    return 0;
}

int cmd_split(const Options& o) {
    const Run run = make_run("split", o);
    corpus::MiniSet set = load_minis(o);
    json j = corpus::to_json(set);
    j["split"]["config_hash"] = run.hash;
    write_json(out_dir(o) / "minis.json", j, run);
    std::cout << "split: " << set.minis.size() << " mini-dialogues (max " << o.max_turns << " turns)\n";
    return 0;
}

int cmd_agree(const Options& o) {
    require(o.corpus, "--corpus");
    const Run run = make_run("agree", o);
    const corpus::Corpus c = corpus::load_corpus(o.corpus);
    const auto report = agreement::agreement_report(c);
    const auto dir = out_dir(o);
    if (format_or(o, "json") == "table") {
        write_text(dir / "agreement.txt", agreement::to_table(report), run);
    } else {
        write_json(dir / "agreement.json", agreement::to_json(report), run);
    }
    std::cout << "agree: " << report.cells.size() << " cells, " << report.excluded_cells << " excluded";
    for (auto row : agreement::kRows) {
        auto it = report.rows.find(row);
        if (it != report.rows.end() && it->second.alpha) {
            std::cout << ", " << agreement::to_string(row) << " alpha=" << std::fixed << std::setprecision(3)
                      << *it->second.alpha;
        }
    }
    std::cout << "\n";
    return 0;
}

int cmd_featurize(const Options& o) {
    const Run run = make_run("featurize", o);
    const corpus::MiniSet set = load_minis(o);
    const auto registry = registry_for(o, set.registry);
    const auto m = featurize::build_matrix(set.minis, registry, featurize::parse_filter(o.filter));
    const auto dir = out_dir(o);
    if (format_or(o, "csv") == "json") {
        write_json(dir / "features.json", featurize::to_json(m), run);
    } else {
        write_text(dir / "features.csv", featurize::to_csv(m), run);
    }
    std::cout << "featurize: " << m.values.rows() << " rows x " << m.values.cols() << " features (" << o.filter << ")\n";
    return 0;
}

int cmd_train(const Options& o) {
    const Run run = make_run("train", o);
    std::vector<corpus::FeatureDef> registry;
    const auto m = load_matrix(o, registry, featurize::parse_filter(o.filter));
    const auto dir = out_dir(o);
    std::size_t written = 0;
    for (const auto& spec : specs_for(o)) {
        for (const auto& label : labels_for(o, m)) {
            const auto model = models::train(spec, m, label);
            json j = models::to_json(model);
            j["label_id"] = label;
            j["filter"] = o.filter;
            write_json(dir / ("model_" + std::string(models::to_string(spec.kind)) + "_" + label + ".json"), j, run);
            ++written;
        }
    }
    std::cout << "train: " << written << " models on " << m.values.rows() << " rows\n";
    return 0;
}

int cmd_evaluate(const Options& o) {
    const Run run = make_run("evaluate", o);
    const auto dir = out_dir(o);
    std::vector<corpus::FeatureDef> registry;
    if (!o.model_path.empty()) {
        const json j = corpus::parse_json(corpus::read_file(o.model_path), o.model_path);
        const auto model = models::model_from_json(j);
        const std::string label = o.label.empty() ? j.value("label_id", std::string{}) : o.label;
        if (label.empty()) throw DataError(o.model_path + ": no label_id; pass --label");
        const auto m = load_matrix(o, registry, featurize::LevelFilter::both).select(
            registry.empty() ? corpus::default_registry() : registry, featurize::parse_filter(j.value("filter", o.filter)));
        const auto metrics = models::evaluate(m.target(label), models::predict(model, m).labels);
        json body = {{"label_id", label}, {"kind", std::string(models::to_string(model.kind))}, {"metrics", models::to_json(metrics)}};
        write_json(dir / "evaluation.json", body, run);
        std::cout << "evaluate: " << models::to_string(model.kind) << "/" << label << " F1=" << std::fixed
                  << std::setprecision(3) << metrics.f1 << " on " << m.values.rows() << " rows\n";
        return 0;
    }
    const auto m = load_matrix(o, registry, featurize::parse_filter(o.filter));
    auto report = models::cross_validate(m, specs_for(o), o.folds, o.seed);
    json body = models::to_json(report);
    std::string table = models::to_table(report);
    if (o.baseline) {
        const auto set = load_minis(o);
        json rows = json::object();
        for (const auto& label : labels_for(o, m)) {
            auto b = models::bow_baseline(set.minis, label, o.folds, o.seed);
            rows[label] = models::to_json(b.cells.at(label).at(models::Kind::lr));
            table += "baseline(raw_text) " + label + " F1=" + std::to_string(b.cells.at(label).at(models::Kind::lr).f1) + "\n";
        }
        body["baseline"] = {{"source", "raw_text"}, {"model", "bag_of_words_lr"}, {"metrics", rows}};
    }
    if (format_or(o, "json") == "table") {
        write_text(dir / "metrics.txt", table, run);
    } else {
        write_json(dir / "metrics.json", body, run);
    }
    double lo = 1.0;
    for (const auto& [label, by_kind] : report.cells) {
        for (const auto& [kind, metrics] : by_kind) lo = std::min(lo, metrics.f1);
    }
    std::cout << "evaluate: " << o.folds << "-fold CV, " << m.values.rows() << " rows, min weighted F1=" << std::fixed
              << std::setprecision(3) << lo << "\n";
    return 0;
}

int cmd_importance(const Options& o) {
    const Run run = make_run("importance", o);
    std::vector<corpus::FeatureDef> registry;
    const auto m = load_matrix(o, registry, featurize::LevelFilter::both);
    const auto report = analysis::importance_report(m, specs_for(o), registry, o.seed);
    const auto dir = out_dir(o);
    if (format_or(o, "json") == "table") {
        write_text(dir / "importance_top.txt", analysis::to_top_table(report), run);
        write_text(dir / "importance_specific.txt", analysis::to_specific_table(report), run);
    } else {
        write_json(dir / "importance.json", analysis::to_json(report), run);
    }
    std::cout << "importance:";
    for (const auto& [kind, k] : report.kinds) {
        std::cout << " " << models::to_string(kind) << " common=" << k.common.features.size();
    }
    std::cout << "\n";
    return 0;
}

int cmd_ablate(const Options& o) {
    const Run run = make_run("ablate", o);
    const corpus::MiniSet set = load_minis(o);
    const auto registry = registry_for(o, set.registry);
    const auto table = analysis::run_ablation(set.minis, registry, specs_for(o), o.folds, o.seed);
    const auto dir = out_dir(o);
    if (format_or(o, "json") == "table") {
        write_text(dir / "ablation.txt", analysis::to_table(table), run);
    } else {
        write_json(dir / "ablation.json", analysis::to_json(table), run);
    }
    std::cout << "ablate: " << table.f1.size() << " classifiers x 3 filters, " << set.minis.size() << " mini-dialogues\n";
    return 0;
}

synthetic::SyntheticConfig preset(const std::string& name) {
    if (name == "one_feature_per_label") return synthetic::one_feature_per_label();
    if (name == "shared_features") return synthetic::shared_features();
    if (name == "token_signal") return synthetic::token_signal();
    if (name == "keyword_groups") return synthetic::keyword_groups();
    throw CLI::ValidationError("--preset", "unknown preset '" + name + "'");
}

int cmd_synth(const Options& o) {
    const Run run = make_run("synth", o);
    auto config = preset(o.preset);
    config.n_dialogues = o.dialogues;
    config.turns_per_dialogue = o.turns;
    config.noise = o.noise;
    corpus::Corpus c = synthetic::generate_synthetic(config, o.seed);
    if (o.shuffle) {
        // Permute each label's scores across dialogues, keeping the annotator structure.
        for (auto label : corpus::kLabelIds) {
            std::vector<int*> slots;
            for (auto& [_, list] : c.scores) {
                for (auto& s : list) {
                    if (s.label_id == label) slots.push_back(&s.score);
                }
            }
            std::vector<int> values;
            for (int* p : slots) values.push_back(*p);
            Rng rng(derive_seed(o.seed, "shuffle", fnv1a64(label)));
            rng.shuffle(std::span(values));
            for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = values[i];
        }
    }
    write_json(out_dir(o) / "synthetic_corpus.json", corpus::to_json(c), run);
    std::cout << "synth: " << c.dialogues.size() << " dialogues, " << c.spans.size() << " spans (preset " << o.preset
              << ", seed " << o.seed << ")\n";
    return 0;
}

int cmd_serve(const Options& o) {
    require(o.corpus, "--corpus");
    require(o.tokens_file, "--tokens-file");
    service::AnnotationService svc(corpus::load_corpus(o.corpus), service::EventLog(o.log),
                                   service::load_tokens(o.tokens_file));
    httplib::Server server;
    service::bind_routes(server, svc);
    std::cout << "serve: listening on http://" << o.host << ":" << o.port << " (log " << (o.log.empty() ? "in memory" : o.log)
              << ")" << std::endl;
    if (!server.listen(o.host, o.port)) throw DataError("cannot listen on " + o.host + ":" + std::to_string(o.port));
    return 0;
}

int cmd_report(const Options& o) {
    require(o.corpus, "--corpus");
    const Run run = make_run("report", o);
    const json j = corpus::parse_json(corpus::read_file(o.corpus), o.corpus);
    std::ostringstream text;
    json body = json::object();

    corpus::MiniSet set;
    if (corpus::is_mini_export(j)) {
        set = corpus::minis_from_json(j);
    } else {
        corpus::Corpus c = corpus::corpus_from_json(j);
        corpus::validate(c);
        const auto agreement_report = agreement::agreement_report(c);
        body["agreement"] = agreement::to_json(agreement_report);
        text << "## Inter-annotator agreement\n\n" << agreement::to_table(agreement_report) << "\n";
        set.registry = c.registry;
        set.labels = c.labels;
        set.minis = corpus::split_corpus(c, {o.max_turns, o.sample, o.seed});
    }
    const auto registry = registry_for(o, set.registry);
    const auto specs = specs_for(o);
    const auto m = featurize::build_matrix(set.minis, registry, featurize::LevelFilter::both);

    const auto metrics = models::cross_validate(m, specs, o.folds, o.seed);
    body["metrics"] = models::to_json(metrics);
    text << "## Classification (" << o.folds << "-fold CV, " << set.minis.size() << " mini-dialogues)\n\n"
         << models::to_table(metrics) << "\n";

    const auto importance = analysis::importance_report(m, specs, registry, o.seed);
    body["importance"] = analysis::to_json(importance);
    text << "## Top features\n\n" << analysis::to_top_table(importance) << "\n";
    text << "## Label-specific features\n\n" << analysis::to_specific_table(importance) << "\n";

    const auto ablation = analysis::run_ablation(set.minis, registry, specs, o.folds, o.seed);
    body["ablation"] = analysis::to_json(ablation);
    text << "## Level ablation (weighted F1)\n\n" << analysis::to_table(ablation);

    double lo = 1.0;
    for (const auto& [label, by_kind] : metrics.cells) {
        for (const auto& [kind, mm] : by_kind) lo = std::min(lo, mm.f1);
    }
    body["min_f1"] = lo;
    const auto dir = out_dir(o);
    write_json(dir / "report.json", body, run);
    write_text(dir / "report.txt", text.str(), run);
    std::cout << "report: " << set.minis.size() << " mini-dialogues, min weighted F1 over all labels and classifiers="
              << std::fixed << std::setprecision(3) << lo << (lo >= 0.9 ? " (>= 0.90)" : " (< 0.90)") << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dialogue interactivity evaluation toolkit"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&o](CLI::App* sub) {
        sub->add_option("--corpus", o.corpus, "Corpus or mini-dialogue JSON");
        sub->add_option("--registry", o.registry, "Feature registry JSON (default: the corpus's own)");
        sub->add_option("--out", o.out, "Output directory (default: $SLEDE_OUT, else .)");
        sub->add_option("--seed", o.seed, "Top-level random seed")->capture_default_str();
        sub->add_option("--max-turns", o.max_turns, "Mini-dialogue length limit")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--sample", o.sample, "Sample this many windows from the pooled corpus windows");
        sub->add_option("--format", o.format, "Artifact format")->check(CLI::IsMember({"json", "table", "csv"}));
    };
    auto add_model = [&o](CLI::App* sub) {
        sub->add_option("--matrix", o.matrix, "Design matrix CSV from `featurize`");
        sub->add_option("--folds", o.folds, "Cross-validation folds")->capture_default_str()->check(CLI::Range(2, 1000));
        sub->add_option("--filter", o.filter, "Feature levels")->capture_default_str()->check(
            CLI::IsMember({"token", "utterance", "both"}));
        sub->add_option("--model", o.model, "Classifier")->capture_default_str()->check(CLI::IsMember({"lr", "nb", "rf", "all"}));
        sub->add_option("--label", o.label, "Restrict to one label");
    };

    struct Entry {
        const char* name;
        const char* help;
        int (*run)(const Options&);
        bool model_flags;
    };
    const Entry entries[] = {
        {"validate", "Check a corpus or mini-dialogue file", cmd_validate, false},
        {"split", "Split dialogues into mini-dialogues", cmd_split, false},
        {"agree", "Inter-annotator agreement report", cmd_agree, false},
        {"featurize", "Build the feature matrix", cmd_featurize, true},
        {"train", "Train classifiers on the full data", cmd_train, true},
        {"evaluate", "Cross-validated metrics, or score a saved model", cmd_evaluate, true},
        {"importance", "Feature importance, common and label-specific features", cmd_importance, true},
        {"ablate", "Token vs utterance level ablation", cmd_ablate, true},
        {"synth", "Generate a synthetic corpus with planted effects", cmd_synth, false},
        {"serve", "Run the annotation service", cmd_serve, false},
        {"report", "All tables in one document", cmd_report, true},
    };
    std::vector<std::pair<CLI::App*, const Entry*>> subs;
    for (const auto& e : entries) {
        CLI::App* sub = app.add_subcommand(e.name, e.help);
        add_common(sub);
        if (e.model_flags) add_model(sub);
        subs.emplace_back(sub, &e);
    }
    for (auto& [sub, e] : subs) {
        const std::string name = e->name;
        if (name == "evaluate") {
            sub->add_option("--model-path", o.model_path, "Saved model from `train`");
            sub->add_flag("--baseline", o.baseline, "Add the raw-text bag-of-words baseline");
        }
        if (name == "synth") {
            sub->add_option("--preset", o.preset, "keyword_groups | one_feature_per_label | shared_features | token_signal")->capture_default_str();
            sub->add_option("--dialogues", o.dialogues, "Number of dialogues")->capture_default_str()->check(CLI::PositiveNumber);
            sub->add_option("--turns", o.turns, "Turns per dialogue")->capture_default_str()->check(CLI::PositiveNumber);
            sub->add_option("--noise", o.noise, "Annotator score noise")->capture_default_str()->check(CLI::NonNegativeNumber);
            sub->add_flag("--shuffle-labels", o.shuffle, "Permute scores across dialogues");
        }
        if (name == "serve") {
            sub->add_option("--port", o.port, "Port")->capture_default_str();
            sub->add_option("--host", o.host, "Bind address")->capture_default_str();
            sub->add_option("--log", o.log, "Append-only JSONL event log");
            sub->add_option("--tokens-file", o.tokens_file, "Bearer token table JSON");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    for (auto& [sub, e] : subs) {
        if (!sub->parsed()) continue;
        try {
            return e->run(o);
        } catch (const CLI::ValidationError& ex) {
            std::cerr << "dialeval " << e->name << ": " << ex.what() << "\n";
            return kExitUsage;
        } catch (const NumericError& ex) {
            std::cerr << "dialeval " << e->name << ": numerical error: " << ex.what() << "\n";
            return kExitNumeric;
        } catch (const Error& ex) {
            std::cerr << "dialeval " << e->name << ": " << ex.what() << "\n";
            return kExitData;
        } catch (const nlohmann::json::exception& ex) {
            std::cerr << "dialeval " << e->name << ": malformed input: " << ex.what() << "\n";
            return kExitData;
        } catch (const fs::filesystem_error& ex) {
            std::cerr << "dialeval " << e->name << ": " << ex.what() << "\n";
            return kExitData;
        }
    }
    return kExitUsage;
}
