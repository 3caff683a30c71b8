#pragma once

// Classifiers over design matrices: training, prediction, persistence and
// stratified cross-validation.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dialeval/corpus.hpp"
#include "dialeval/featurize.hpp"
#include "dialeval/models/common.hpp"
#include "dialeval/models/forest.hpp"
#include "dialeval/models/logistic.hpp"
#include "dialeval/models/metrics.hpp"
#include "dialeval/models/naive_bayes.hpp"
#include "dialeval/random.hpp"

namespace dialeval::models {

using json = nlohmann::json;
using featurize::DesignMatrix;

struct TrainedModel {
    Kind kind = Kind::lr;
    ClassifierSpec spec;
    std::vector<int> classes;               // ascending, as observed in training
    std::vector<std::string> feature_ids;   // training column order
    Standardizer standardizer;              // used by lr and nb; rf consumes raw values
    std::variant<SoftmaxParams, GaussianNB, RandomForest> params;
    std::size_t epochs = 0;                 // lr only
    double gradient_norm = 0.0;             // lr only

    const SoftmaxParams& softmax() const { return std::get<SoftmaxParams>(params); }
    const GaussianNB& naive_bayes() const { return std::get<GaussianNB>(params); }
    const RandomForest& forest() const { return std::get<RandomForest>(params); }
};

struct Prediction {
    std::vector<int> labels;
    Eigen::MatrixXd scores;  // rows x classes: probabilities (lr, nb) or vote fractions (rf)
};

inline TrainedModel train(const ClassifierSpec& spec, const Eigen::MatrixXd& X, std::span<const int> y,
                          std::vector<std::string> feature_ids = {}) {
    spec.check();
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw DataError("train: X and y differ in row count");
    if (X.rows() < 2) throw DataError("train: need at least 2 rows");
    check_finite(X);
    if (feature_ids.empty()) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) feature_ids.push_back("f" + std::to_string(j));
    }
    if (feature_ids.size() != static_cast<std::size_t>(X.cols())) throw DataError("train: feature id count mismatch");

    TrainedModel model;
    model.kind = spec.kind;
    model.spec = spec;
    model.classes = distinct_sorted(y);
    if (model.classes.size() < 2) {
        throw NumericError("train: need at least 2 distinct classes, got only class " + std::to_string(model.classes.front()));
    }
    model.feature_ids = std::move(feature_ids);
    const auto idx = class_indices(model.classes, y);
    const auto K = static_cast<Eigen::Index>(model.classes.size());

    switch (spec.kind) {
        case Kind::lr: {
            model.standardizer = Standardizer::fit(X);
            auto fit = fit_softmax(model.standardizer.apply(X), idx, K, spec);
            model.epochs = fit.epochs;
            model.gradient_norm = fit.gradient_norm;
            model.params = std::move(fit.params);
            break;
        }
        case Kind::nb:
            model.standardizer = Standardizer::fit(X);
            model.params = GaussianNB::fit(model.standardizer.apply(X), idx, K, spec.variance_smoothing);
            break;
        case Kind::rf:
            model.standardizer = {Eigen::VectorXd::Zero(X.cols()), Eigen::VectorXd::Ones(X.cols())};
            model.params = RandomForest::fit(X, idx, model.classes.size(), spec);
            break;
    }
    return model;
}

inline TrainedModel train(const ClassifierSpec& spec, const DesignMatrix& m, const std::string& label) {
    return train(spec, m.values, m.target(label), m.feature_ids);
}

inline Prediction predict(const TrainedModel& model, const Eigen::MatrixXd& X) {
    if (static_cast<std::size_t>(X.cols()) != model.feature_ids.size()) {
        throw DataError("predict: input has " + std::to_string(X.cols()) + " columns, model was trained on " +
                        std::to_string(model.feature_ids.size()));
    }
    check_finite(X);
    Prediction p;
    switch (model.kind) {
        case Kind::lr: p.scores = softmax_probabilities(model.softmax(), model.standardizer.apply(X)); break;
        case Kind::nb: p.scores = model.naive_bayes().posterior(model.standardizer.apply(X)); break;
        case Kind::rf: p.scores = model.forest().vote_fractions(X); break;
    }
    p.labels.reserve(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < p.scores.rows(); ++i) p.labels.push_back(model.classes[argmax(p.scores.row(i))]);
    return p;
}

inline Prediction predict(const TrainedModel& model, const DesignMatrix& m) {
    if (m.feature_ids != model.feature_ids) throw DataError("predict: design matrix columns do not match the model's");
    return predict(model, m.values);
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json vector_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline Eigen::MatrixXd matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw DataError("model: matrix shape mismatch");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const json& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw DataError("model: matrix shape mismatch");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

inline Eigen::VectorXd vector_from(const json& j, Eigen::Index size) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size) throw DataError("model: vector size mismatch");
    Eigen::VectorXd v(size);
    for (Eigen::Index i = 0; i < size; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

}  // namespace detail

inline json to_json(const ClassifierSpec& s) {
    return {{"kind", std::string(to_string(s.kind))},
            {"l2_lambda", s.l2_lambda},
            {"learning_rate", s.learning_rate},
            {"max_epochs", s.max_epochs},
            {"tol", s.tol},
            {"variance_smoothing", s.variance_smoothing},
            {"n_trees", s.n_trees},
            {"max_depth", s.max_depth},
            {"features_per_split", s.features_per_split},
            {"bootstrap", s.bootstrap},
            {"seed", s.seed}};
}

inline ClassifierSpec spec_from_json(const json& j) {
    ClassifierSpec s = ClassifierSpec::defaults(parse_kind(j.at("kind").get<std::string>()));
    s.l2_lambda = j.value("l2_lambda", s.l2_lambda);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.max_epochs = j.value("max_epochs", s.max_epochs);
    s.tol = j.value("tol", s.tol);
    s.variance_smoothing = j.value("variance_smoothing", s.variance_smoothing);
    s.n_trees = j.value("n_trees", s.n_trees);
    s.max_depth = j.value("max_depth", s.max_depth);
    s.features_per_split = j.value("features_per_split", s.features_per_split);
    s.bootstrap = j.value("bootstrap", s.bootstrap);
    s.seed = j.value("seed", s.seed);
    return s;
}

inline json to_json(const TrainedModel& m) {
    json out = {{"format", "dialeval-model"},
                {"version", kModelFormatVersion},
                {"kind", std::string(to_string(m.kind))},
                {"spec", to_json(m.spec)},
                {"classes", m.classes},
                {"feature_ids", m.feature_ids},
                {"standardizer", {{"mean", detail::vector_json(m.standardizer.mean)},
                                  {"scale", detail::vector_json(m.standardizer.scale)}}}};
    switch (m.kind) {
        case Kind::lr:
            out["lr"] = {{"weights", detail::matrix_json(m.softmax().weights)},
                         {"bias", detail::vector_json(m.softmax().bias)},
                         {"epochs", m.epochs},
                         {"gradient_norm", m.gradient_norm}};
            break;
        case Kind::nb:
            out["nb"] = {{"log_prior", detail::vector_json(m.naive_bayes().log_prior)},
                         {"means", detail::matrix_json(m.naive_bayes().means)},
                         {"variances", detail::matrix_json(m.naive_bayes().variances)},
                         {"epsilon", m.naive_bayes().epsilon}};
            break;
        case Kind::rf: {
            json trees = json::array();
            for (const auto& tree : m.forest().trees) {
                json nodes = json::array();
                for (const auto& n : tree.nodes()) {
                    if (n.is_leaf()) {
                        nodes.push_back({{"distribution", n.distribution}});
                    } else {
                        nodes.push_back({{"feature", n.feature},
                                         {"threshold", n.threshold},
                                         {"left", n.left},
                                         {"right", n.right},
                                         {"distribution", n.distribution}});
                    }
                }
                trees.push_back({{"nodes", nodes}, {"importance", std::vector<double>(tree.importance().begin(), tree.importance().end())}});
            }
            out["rf"] = {{"trees", trees}};
            break;
        }
    }
    return out;
}

inline TrainedModel model_from_json(const json& j) {
    if (j.value("format", std::string{}) != "dialeval-model") throw DataError("model: not a dialeval model document");
    if (j.value("version", 0) != kModelFormatVersion) {
        throw DataError("model: unsupported format version " + std::to_string(j.value("version", 0)));
    }
    TrainedModel m;
    m.kind = parse_kind(j.at("kind").get<std::string>());
    m.spec = spec_from_json(j.at("spec"));
    m.classes = j.at("classes").get<std::vector<int>>();
    m.feature_ids = j.at("feature_ids").get<std::vector<std::string>>();
    const auto d = static_cast<Eigen::Index>(m.feature_ids.size());
    const auto K = static_cast<Eigen::Index>(m.classes.size());
    m.standardizer.mean = detail::vector_from(j.at("standardizer").at("mean"), d);
    m.standardizer.scale = detail::vector_from(j.at("standardizer").at("scale"), d);
    switch (m.kind) {
        case Kind::lr: {
            const json& p = j.at("lr");
            m.params = SoftmaxParams{detail::matrix_from(p.at("weights"), K, d), detail::vector_from(p.at("bias"), K)};
            m.epochs = p.value("epochs", std::size_t{0});
            m.gradient_norm = p.value("gradient_norm", 0.0);
            break;
        }
        case Kind::nb: {
            const json& p = j.at("nb");
            GaussianNB nb;
            nb.log_prior = detail::vector_from(p.at("log_prior"), K);
            nb.means = detail::matrix_from(p.at("means"), K, d);
            nb.variances = detail::matrix_from(p.at("variances"), K, d);
            nb.epsilon = p.value("epsilon", 0.0);
            m.params = std::move(nb);
            break;
        }
        case Kind::rf: {
            RandomForest forest;
            forest.classes = m.classes.size();
            for (const auto& jt : j.at("rf").at("trees")) {
                DecisionTree tree;
                for (const auto& jn : jt.at("nodes")) {
                    TreeNode n;
                    n.distribution = jn.at("distribution").get<std::vector<double>>();
                    if (jn.contains("feature")) {
                        n.feature = jn.at("feature").get<int>();
                        n.threshold = jn.at("threshold").get<double>();
                        n.left = jn.at("left").get<int>();
                        n.right = jn.at("right").get<int>();
                    }
                    tree.mutable_nodes().push_back(std::move(n));
                }
                tree.mutable_importance() = jt.at("importance").get<std::vector<double>>();
                forest.trees.push_back(std::move(tree));
            }
            m.params = std::move(forest);
            break;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Cross-validation

/// fold_of_row[i] in [0, k), or -1 for rows kept on the training side of every fold.
struct FoldPlan {
    std::size_t k = 0;
    std::vector<int> fold_of_row;
    std::vector<std::string> notes;
};

/// Stratified assignment: each class's rows are shuffled with a class-specific stream and
/// dealt round-robin, continuing the deal across classes so fold sizes stay balanced.
/// Singleton classes cannot be stratified and stay training-only.
inline FoldPlan stratified_folds(std::span<const int> y, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw DataError("cross_validate: k must be >= 2");
    FoldPlan plan;
    plan.k = k;
    plan.fold_of_row.assign(y.size(), -1);
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
    std::size_t dealt = 0;
    for (auto& [label, rows] : by_class) {
        if (rows.size() == 1) {
            plan.notes.push_back("class " + std::to_string(label) + " has a single instance; kept on the training side");
            continue;
        }
        Rng rng(derive_seed(seed, "folds", static_cast<std::uint64_t>(label)));
        rng.shuffle(std::span(rows));
        for (auto row : rows) plan.fold_of_row[row] = static_cast<int>(dealt++ % k);
    }
    return plan;
}

struct CvResult {
    Metrics mean;
    std::vector<Metrics> per_fold;
    std::vector<std::string> notes;
};

inline CvResult cross_validate(const Eigen::MatrixXd& X, std::span<const int> y, const ClassifierSpec& spec,
                               const FoldPlan& plan, const std::vector<std::string>& feature_ids = {}) {
    if (plan.fold_of_row.size() != y.size()) throw DataError("cross_validate: fold plan does not match row count");
    CvResult result;
    result.notes = plan.notes;
    for (std::size_t fold = 0; fold < plan.k; ++fold) {
        std::vector<Eigen::Index> train_rows, test_rows;
        for (std::size_t i = 0; i < y.size(); ++i) {
            (plan.fold_of_row[i] == static_cast<int>(fold) ? test_rows : train_rows).push_back(static_cast<Eigen::Index>(i));
        }
        if (test_rows.empty()) {
            result.notes.push_back("fold " + std::to_string(fold) + " is empty");
            continue;
        }
        Eigen::MatrixXd X_train = X(train_rows, Eigen::all);
        Eigen::MatrixXd X_test = X(test_rows, Eigen::all);
        std::vector<int> y_train, y_test;
        for (auto r : train_rows) y_train.push_back(y[static_cast<std::size_t>(r)]);
        for (auto r : test_rows) y_test.push_back(y[static_cast<std::size_t>(r)]);
        ClassifierSpec fold_spec = spec;
        fold_spec.seed = derive_seed(spec.seed, "fold", fold);
        const TrainedModel model = train(fold_spec, X_train, y_train, feature_ids);
        const Prediction p = predict(model, X_test);
        result.per_fold.push_back(evaluate(y_test, p.labels));
    }
    if (result.per_fold.empty()) throw DataError("cross_validate: every fold is empty");
    const double folds = static_cast<double>(result.per_fold.size());
    for (const auto& m : result.per_fold) {
        result.mean.accuracy += m.accuracy / folds;
        result.mean.precision += m.precision / folds;
        result.mean.recall += m.recall / folds;
        result.mean.f1 += m.f1 / folds;
    }
    return result;
}

/// label id -> classifier kind -> fold-averaged metrics.
struct MetricsReport {
    std::map<std::string, std::map<Kind, Metrics>> cells;
    std::map<std::string, std::vector<std::string>> notes;  // per label
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::string baseline;  // non-empty for baseline rows ("raw_text")
};

inline CvResult cross_validate(const DesignMatrix& m, const std::string& label, const ClassifierSpec& spec,
                               std::size_t k, std::uint64_t seed) {
    const auto& y = m.target(label);
    return cross_validate(m.values, y, spec, stratified_folds(y, k, seed), m.feature_ids);
}

inline MetricsReport cross_validate(const DesignMatrix& m, const std::vector<ClassifierSpec>& specs, std::size_t k,
                                    std::uint64_t seed) {
    MetricsReport report;
    report.k = k;
    report.seed = seed;
    for (const auto& [label, y] : m.targets) {
        const FoldPlan plan = stratified_folds(y, k, seed);
        report.notes[label] = plan.notes;
        for (const auto& spec : specs) {
            report.cells[label][spec.kind] = cross_validate(m.values, y, spec, plan, m.feature_ids).mean;
        }
    }
    return report;
}

inline json to_json(const Metrics& m) {
    return {{"ACC", m.accuracy}, {"PRE", m.precision}, {"REC", m.recall}, {"F1", m.f1}};
}

inline json to_json(const MetricsReport& r) {
    json cells = json::object();
    for (const auto& [label, by_kind] : r.cells) {
        for (const auto& [kind, m] : by_kind) cells[label][std::string(to_string(kind))] = to_json(m);
    }
    json out = {{"metrics", cells}, {"folds", r.k}, {"seed", r.seed}, {"averaging", "weighted"}};
    json notes = json::object();
    for (const auto& [label, list] : r.notes) {
        if (!list.empty()) notes[label] = list;
    }
    if (!notes.empty()) out["notes"] = notes;
    if (!r.baseline.empty()) out["baseline"] = r.baseline;
    return out;
}

inline std::string label_title(std::string_view id) {
    if (id == "topic") return "Topic";
    if (id == "tone") return "Tone";
    if (id == "opening") return "Opening";
    if (id == "closing") return "Closing";
    return std::string(id);
}

/// Labels in canonical order first, then anything else alphabetically.
inline std::vector<std::string> ordered_labels(const std::vector<std::string>& present) {
    std::vector<std::string> out;
    for (auto id : corpus::kLabelIds) {
        if (std::find(present.begin(), present.end(), id) != present.end()) out.emplace_back(id);
    }
    for (const auto& id : present) {
        if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    }
    return out;
}

/// One block per classifier, metrics down, labels across.
inline std::string to_table(const MetricsReport& r) {
    std::vector<std::string> present;
    for (const auto& [label, _] : r.cells) present.push_back(label);
    const auto labels = ordered_labels(present);
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    out << std::left << std::setw(8) << "Labels";
    for (const auto& l : labels) out << std::right << std::setw(9) << label_title(l);
    out << "\n";
    for (Kind kind : kAllKinds) {
        bool any = false;
        for (const auto& l : labels) any = any || r.cells.at(l).count(kind);
        if (!any) continue;
        out << "-- " << (r.baseline.empty() ? std::string(display_name(kind)) : "Bag-of-words baseline (" + r.baseline + ")")
            << " --\n";
        const std::pair<const char*, double Metrics::*> rows[] = {
            {"ACC", &Metrics::accuracy}, {"PRE", &Metrics::precision}, {"REC", &Metrics::recall}, {"F1", &Metrics::f1}};
        for (const auto& [name, field] : rows) {
            out << std::left << std::setw(8) << name;
            for (const auto& l : labels) {
                auto it = r.cells.at(l).find(kind);
                if (it == r.cells.at(l).end()) {
                    out << std::right << std::setw(9) << "-";
                } else {
                    out << std::right << std::setw(9) << it->second.*field;
                }
            }
            out << "\n";
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Bag-of-words baseline over raw mini-dialogue text

inline std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

/// Token-count matrix over the lowercased vocabulary of all minis (sorted vocabulary order).
inline DesignMatrix bag_of_words(std::span<const corpus::MiniDialogue> minis) {
    std::map<std::string, Eigen::Index> vocab;
    for (const auto& m : minis) {
        for (const auto& t : m.turns) {
            for (const auto& tok : t.tokens) vocab.emplace(lowercase(tok), 0);
        }
    }
    if (vocab.empty()) throw DataError("bow_baseline: empty vocabulary");
    DesignMatrix out;
    Eigen::Index col = 0;
    for (auto& [word, index] : vocab) {
        index = col++;
        out.feature_ids.push_back(word);
    }
    out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(minis.size()), col);
    for (std::size_t r = 0; r < minis.size(); ++r) {
        out.row_ids.push_back(minis[r].id);
        for (const auto& t : minis[r].turns) {
            for (const auto& tok : t.tokens) out.values(static_cast<Eigen::Index>(r), vocab.at(lowercase(tok))) += 1.0;
        }
        for (const auto& [label, score] : minis[r].inherited_labels) out.targets[label].push_back(score);
    }
    for (const auto& [label, column] : out.targets) {
        if (column.size() != minis.size()) throw DataError("bow_baseline: some minis lack label '" + label + "'");
    }
    return out;
}

/// Raw-text baseline that ignores the annotations: token counts -> softmax
/// regression, evaluated with the same folds as the feature-based models.
inline MetricsReport bow_baseline(std::span<const corpus::MiniDialogue> minis, const std::string& label, std::size_t k,
                                  std::uint64_t seed, ClassifierSpec spec = ClassifierSpec::defaults(Kind::lr)) {
    spec.kind = Kind::lr;
    const DesignMatrix m = bag_of_words(minis);
    MetricsReport report;
    report.k = k;
    report.seed = seed;
    report.baseline = "raw_text";
    const auto& y = m.target(label);
    const FoldPlan plan = stratified_folds(y, k, seed);
    report.notes[label] = plan.notes;
    report.cells[label][Kind::lr] = cross_validate(m.values, y, spec, plan, m.feature_ids).mean;
    return report;
}

}  // namespace dialeval::models
