#pragma once

// Feature importance per classifier, common and label-specific feature sets,
// and the token/utterance ablation.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialeval/corpus.hpp"
#include "dialeval/featurize.hpp"
#include "dialeval/models.hpp"

namespace dialeval::analysis {

using json = nlohmann::json;
using corpus::FeatureDef;
using featurize::DesignMatrix;
using featurize::LevelFilter;
using models::Kind;
using models::TrainedModel;

inline constexpr std::size_t kTopK = 10;
inline constexpr std::size_t kCommonK = 5;

struct WeightedFeature {
    std::string feature_id;
    double importance = 0.0;
    friend bool operator==(const WeightedFeature&, const WeightedFeature&) = default;
};

struct WeightedFeatureList {
    std::string label_id;
    Kind kind = Kind::lr;
    std::vector<WeightedFeature> entries;  // descending; ties in registry order
};

/// Orders `importance` (indexed like `feature_ids`, which is registry order) descending.
inline WeightedFeatureList make_list(std::string label, Kind kind, const std::vector<std::string>& feature_ids,
                                     const std::vector<double>& importance) {
    if (feature_ids.size() != importance.size()) throw DataError("importance: feature/value count mismatch");
    WeightedFeatureList list{std::move(label), kind, {}};
    for (std::size_t i = 0; i < feature_ids.size(); ++i) {
        if (!std::isfinite(importance[i])) throw NumericError("importance: non-finite value for '" + feature_ids[i] + "'");
        list.entries.push_back({feature_ids[i], std::max(0.0, importance[i])});
    }
    std::stable_sort(list.entries.begin(), list.entries.end(),
                     [](const WeightedFeature& a, const WeightedFeature& b) { return a.importance > b.importance; });
    return list;
}

/// Per-feature importance of a model trained on the full registry matrix.
///   lr: mean |coefficient| over classes (standardized inputs)
///   rf: mean impurity decrease over trees
///   nb: prior-weighted variance of class means over mean within-class variance
inline WeightedFeatureList model_importance(const TrainedModel& model, const std::string& label_id,
                                            const std::vector<FeatureDef>& registry = corpus::default_registry()) {
    std::vector<std::string> ids;
    for (const auto& f : registry) ids.push_back(f.id);
    if (model.feature_ids != ids) {
        throw DataError("model_importance: model was trained on " + std::to_string(model.feature_ids.size()) +
                        " columns that do not match the " + std::to_string(ids.size()) + "-feature registry");
    }
    const auto d = static_cast<Eigen::Index>(ids.size());
    std::vector<double> values(ids.size(), 0.0);
    switch (model.kind) {
        case Kind::lr: {
            const auto& W = model.softmax().weights;
            for (Eigen::Index j = 0; j < d; ++j) values[static_cast<std::size_t>(j)] = W.col(j).cwiseAbs().mean();
            break;
        }
        case Kind::rf:
            values = model.forest().importance(ids.size());
            break;
        case Kind::nb: {
            const auto& nb = model.naive_bayes();
            const Eigen::VectorXd prior = nb.log_prior.array().exp();
            for (Eigen::Index j = 0; j < d; ++j) {
                const double grand = prior.dot(nb.means.col(j));
                const double between = prior.dot((nb.means.col(j).array() - grand).square().matrix());
                const double within = prior.dot(nb.variances.col(j));
                values[static_cast<std::size_t>(j)] = within > 0.0 ? between / within : 0.0;
            }
            break;
        }
    }
    return make_list(label_id, model.kind, ids, values);
}

/// Model-agnostic cross-check: mean drop in accuracy on (X, y) when one column is
/// shuffled, floored at 0.
inline WeightedFeatureList permutation_importance(const TrainedModel& model, const DesignMatrix& m,
                                                  const std::string& label_id, std::size_t repeats, std::uint64_t seed) {
    if (repeats == 0) throw DataError("permutation_importance: repeats must be positive");
    const auto& y = m.target(label_id);
    const double base = models::evaluate(y, models::predict(model, m).labels).accuracy;
    std::vector<double> values(m.feature_ids.size(), 0.0);
    for (std::size_t j = 0; j < m.feature_ids.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        for (std::size_t r = 0; r < repeats; ++r) {
            Eigen::MatrixXd X = m.values;
            std::vector<double> column(X.col(col).data(), X.col(col).data() + X.rows());
            Rng rng(derive_seed(seed, "permute", j * repeats + r));
            rng.shuffle(std::span(column));
            for (Eigen::Index i = 0; i < X.rows(); ++i) X(i, col) = column[static_cast<std::size_t>(i)];
            const double acc = models::evaluate(y, models::predict(model, X).labels).accuracy;
            values[j] += (base - acc) / static_cast<double>(repeats);
        }
    }
    return make_list(label_id, model.kind, m.feature_ids, values);
}

/// The first k entries with positive importance. Features a model assigns no weight
/// at all are never counted as "top" features.
inline std::vector<std::string> top_k(const WeightedFeatureList& list, std::size_t k = kTopK) {
    std::vector<std::string> out;
    for (const auto& e : list.entries) {
        if (out.size() == k || e.importance <= 0.0) break;
        out.push_back(e.feature_id);
    }
    return out;
}

struct CommonFeatureSet {
    Kind kind = Kind::lr;
    std::vector<std::string> features;                          // at most kCommonK
    std::map<std::string, std::vector<std::string>> top_lists;  // label -> its top-10
};

/// Intersection of the four labels' top-10 sets, ranked by summed importance (ties in
/// registry order), truncated to five.
inline CommonFeatureSet common_features(const std::map<std::string, WeightedFeatureList>& lists,
                                        const std::vector<FeatureDef>& registry = corpus::default_registry()) {
    if (lists.empty()) throw DataError("common_features: no lists");
    for (auto label : corpus::kLabelIds) {
        if (!lists.count(std::string(label))) throw DataError("common_features: missing label '" + std::string(label) + "'");
    }
    CommonFeatureSet out;
    out.kind = lists.begin()->second.kind;
    std::map<std::string, int> hits;
    std::map<std::string, double> summed;
    for (const auto& [label, list] : lists) {
        if (list.kind != out.kind) throw DataError("common_features: lists mix classifier kinds");
        out.top_lists[label] = top_k(list);
        for (const auto& id : out.top_lists[label]) ++hits[id];
        for (const auto& e : list.entries) summed[e.feature_id] += e.importance;
    }
    std::vector<std::string> order;
    for (const auto& f : registry) order.push_back(f.id);
    for (const auto& [id, _] : summed) {
        if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
    }
    std::vector<std::string> survivors;
    for (const auto& id : order) {
        if (hits[id] == static_cast<int>(lists.size())) survivors.push_back(id);
    }
    std::stable_sort(survivors.begin(), survivors.end(),
                     [&](const std::string& a, const std::string& b) { return summed[a] > summed[b]; });
    if (survivors.size() > kCommonK) survivors.resize(kCommonK);
    out.features = std::move(survivors);
    return out;
}

struct SpecificFeatureSet {
    std::string label_id;
    Kind kind = Kind::lr;
    std::vector<std::string> features;
};

inline SpecificFeatureSet specific_features(const WeightedFeatureList& list, const std::vector<std::string>& common) {
    SpecificFeatureSet out{list.label_id, list.kind, {}};
    for (const auto& id : top_k(list)) {
        if (std::find(common.begin(), common.end(), id) == common.end()) out.features.push_back(id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Importance report over all kinds and labels

struct KindImportance {
    std::map<std::string, WeightedFeatureList> lists;  // label -> ranking
    CommonFeatureSet common;
    std::map<std::string, SpecificFeatureSet> specific;
};

struct ImportanceReport {
    std::map<Kind, KindImportance> kinds;
    std::vector<FeatureDef> registry;
    std::uint64_t seed = 0;
};

/// Trains each spec on the full matrix for every label, then derives the common and
/// specific feature sets.
inline ImportanceReport importance_report(const DesignMatrix& full, const std::vector<models::ClassifierSpec>& specs,
                                          const std::vector<FeatureDef>& registry, std::uint64_t seed) {
    ImportanceReport report;
    report.registry = registry;
    report.seed = seed;
    for (const auto& spec : specs) {
        KindImportance& k = report.kinds[spec.kind];
        for (auto label_view : corpus::kLabelIds) {
            const std::string label(label_view);
            const TrainedModel model = models::train(spec, full, label);
            k.lists.emplace(label, model_importance(model, label, registry));
        }
        k.common = common_features(k.lists, registry);
        for (const auto& [label, list] : k.lists) k.specific.emplace(label, specific_features(list, k.common.features));
    }
    return report;
}

namespace detail {

inline std::string feature_name(const std::vector<FeatureDef>& registry, const std::string& id) {
    for (const auto& f : registry) {
        if (f.id == id) return f.name;
    }
    return id;
}

/// How many other labels' top-10 (same kind) contain `id`.
inline int label_overlap(const KindImportance& k, const std::string& label, const std::string& id) {
    int n = 0;
    for (const auto& [other, top] : k.common.top_lists) {
        if (other != label && std::find(top.begin(), top.end(), id) != top.end()) ++n;
    }
    return n;
}

/// How many other kinds' top-10 for the same label contain `id`.
inline int kind_overlap(const ImportanceReport& r, Kind kind, const std::string& label, const std::string& id) {
    int n = 0;
    for (const auto& [other, k] : r.kinds) {
        if (other == kind) continue;
        auto it = k.common.top_lists.find(label);
        if (it != k.common.top_lists.end() && std::find(it->second.begin(), it->second.end(), id) != it->second.end()) ++n;
    }
    return n;
}

}  // namespace detail

inline json to_json(const ImportanceReport& r) {
    json kinds = json::object();
    for (const auto& [kind, k] : r.kinds) {
        json labels = json::object();
        for (const auto& [label, list] : k.lists) {
            json ranking = json::array();
            for (const auto& e : list.entries) ranking.push_back({{"feature_id", e.feature_id}, {"importance", e.importance}});
            json top = json::array();
            for (const auto& id : k.common.top_lists.at(label)) {
                top.push_back({{"feature_id", id},
                               {"other_labels_sharing", detail::label_overlap(k, label, id)},
                               {"other_kinds_sharing", detail::kind_overlap(r, kind, label, id)}});
            }
            labels[label] = {{"ranking", ranking}, {"top10", top}, {"specific", k.specific.at(label).features}};
        }
        kinds[std::string(models::to_string(kind))] = {{"labels", labels}, {"common", k.common.features}};
    }
    return {{"importance", kinds}, {"seed", r.seed}, {"top_k", kTopK}, {"common_k", kCommonK}};
}

/// Top-10 per label for each kind; the bracketed pair counts other labels and other
/// kinds whose top-10 also contains the feature.
inline std::string to_top_table(const ImportanceReport& r) {
    std::ostringstream out;
    for (Kind kind : models::kAllKinds) {
        auto it = r.kinds.find(kind);
        if (it == r.kinds.end()) continue;
        const KindImportance& k = it->second;
        out << "== " << models::display_name(kind) << " : top-" << kTopK << " features per label [labels,kinds] ==\n";
        for (auto label_view : corpus::kLabelIds) {
            const std::string label(label_view);
            out << models::label_title(label) << ":\n";
            const auto& top = k.common.top_lists.at(label);
            for (std::size_t i = 0; i < top.size(); ++i) {
                out << "  " << std::setw(2) << i + 1 << ". " << detail::feature_name(r.registry, top[i]) << " ["
                    << detail::label_overlap(k, label, top[i]) << "," << detail::kind_overlap(r, kind, label, top[i]) << "]\n";
            }
        }
        out << "common: ";
        for (std::size_t i = 0; i < k.common.features.size(); ++i) {
            out << (i ? ", " : "") << detail::feature_name(r.registry, k.common.features[i]);
        }
        out << (k.common.features.empty() ? "(none)\n" : "\n");
    }
    return out.str();
}

inline std::string to_specific_table(const ImportanceReport& r) {
    std::ostringstream out;
    for (Kind kind : models::kAllKinds) {
        auto it = r.kinds.find(kind);
        if (it == r.kinds.end()) continue;
        out << "== " << models::display_name(kind) << " : label-specific features ==\n";
        for (auto label_view : corpus::kLabelIds) {
            const std::string label(label_view);
            const auto& features = it->second.specific.at(label).features;
            out << models::label_title(label) << ": ";
            for (std::size_t i = 0; i < features.size(); ++i) {
                out << (i ? ", " : "") << detail::feature_name(r.registry, features[i]);
            }
            out << (features.empty() ? "(none)\n" : "\n");
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Ablation

inline constexpr std::array<LevelFilter, 3> kAblationFilters{LevelFilter::token_only, LevelFilter::utterance_only,
                                                             LevelFilter::both};

struct AblationTable {
    // kind -> label -> F1 per filter (token, utterance, both)
    std::map<Kind, std::map<std::string, std::array<double, 3>>> f1;
    std::size_t k = 0;
    std::uint64_t seed = 0;
};

/// Cross-validates every spec on each level filter. Fold assignment depends only on the
/// label column, so all three filters (and a standalone cross_validate) see the same folds.
inline AblationTable run_ablation(std::span<const corpus::MiniDialogue> minis, const std::vector<FeatureDef>& registry,
                                  const std::vector<models::ClassifierSpec>& specs, std::size_t k, std::uint64_t seed) {
    AblationTable table;
    table.k = k;
    table.seed = seed;
    const DesignMatrix full = featurize::build_matrix(minis, registry, LevelFilter::both);
    for (std::size_t f = 0; f < kAblationFilters.size(); ++f) {
        const DesignMatrix m = full.select(registry, kAblationFilters[f]);
        for (const auto& [label, y] : m.targets) {
            const models::FoldPlan plan = models::stratified_folds(y, k, seed);
            for (const auto& spec : specs) {
                table.f1[spec.kind][label][f] = models::cross_validate(m.values, y, spec, plan, m.feature_ids).mean.f1;
            }
        }
    }
    return table;
}

inline json to_json(const AblationTable& t) {
    json kinds = json::object();
    for (const auto& [kind, labels] : t.f1) {
        for (const auto& [label, cells] : labels) {
            kinds[std::string(models::to_string(kind))][label] = {
                {"token", cells[0]}, {"utterance", cells[1]}, {"both", cells[2]}};
        }
    }
    return {{"ablation_f1", kinds}, {"folds", t.k}, {"seed", t.seed}};
}

inline std::string to_table(const AblationTable& t) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    out << std::left << std::setw(22) << "Model / Label" << std::right << std::setw(9) << "Token" << std::setw(11)
        << "Utterance" << std::setw(9) << "Both" << "\n";
    for (Kind kind : models::kAllKinds) {
        auto it = t.f1.find(kind);
        if (it == t.f1.end()) continue;
        std::vector<std::string> present;
        for (const auto& [label, _] : it->second) present.push_back(label);
        for (const auto& label : models::ordered_labels(present)) {
            const auto& c = it->second.at(label);
            out << std::left << std::setw(22)
                << (std::string(models::to_string(kind)) + " / " + models::label_title(label)) << std::right
                << std::setw(9) << c[0] << std::setw(11) << c[1] << std::setw(9) << c[2] << "\n";
        }
    }
    return out.str();
}

}  // namespace dialeval::analysis
